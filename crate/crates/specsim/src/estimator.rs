//! Accepted-length estimators: score-based prediction, the exact closed
//! form, and two independent oracles.
//!
//! For a verified prefix, the expected number of committed tree nodes equals
//! the sum over kept nodes of the product of target probabilities along the
//! node's path — each node is committed exactly when every ancestor edge is
//! accepted, and rejection renormalization makes that probability the plain
//! path product. Before verification the same sum over *draft* scores serves
//! as the estimate. [`enumerate_accept_oracle`] recomputes the expectation by
//! walking the sequential accept/reject process directly, and
//! [`mc_accept_oracle`] measures it by running the verifier.

use crate::error::{Error, Result};
use crate::moe::MoETarget;
use crate::rng::Rng;
use crate::tree::{prefix_sequence, DraftTree, TreePrefix};
use crate::verifier::{verify_greedy, verify_sampling};

/// Node-count cap for the exhaustive oracle.
pub const ENUMERATION_LIMIT: usize = 16;

/// Prefix sums of draft scores in global score order.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptEstimate {
    /// `prefix_sums[k-1]` is the estimated accepted length when verifying the
    /// top-`k` prefix; entry 0 is always exactly 1 (the root).
    pub prefix_sums: Vec<f64>,
    /// Exact expectation, when target probabilities have been supplied.
    pub exact_value: Option<f64>,
}

impl AcceptEstimate {
    /// Drop entries beyond a verification budget of `max_k` nodes.
    pub fn truncate(&mut self, max_k: usize) {
        self.prefix_sums.truncate(max_k);
    }
}

/// Estimated accepted length for every prefix size of the tree.
pub fn estimated_accept_prefix_sums(tree: &DraftTree) -> AcceptEstimate {
    let mut sums = Vec::with_capacity(tree.len());
    let mut acc = 0.0;
    for id in prefix_sequence(tree) {
        acc += tree.node(id).cum_score;
        sums.push(acc);
    }
    debug_assert_eq!(sums[0], 1.0);
    AcceptEstimate { prefix_sums: sums, exact_value: None }
}

/// Check a per-node probability table against a prefix.
fn check_probs(prefix: &TreePrefix<'_>, target_probs: &[f64]) -> Result<()> {
    if target_probs.len() < prefix.tree().len() {
        return Err(Error::InvalidInput(format!(
            "target_probs covers {} nodes but the tree has {}",
            target_probs.len(),
            prefix.tree().len()
        )));
    }
    for &id in prefix.kept_ids() {
        let p = target_probs[id];
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::InvalidInput(format!(
                "target probability {p} at node {id} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Exact expected accepted length of a verified prefix.
///
/// `target_probs` is indexed by node id: the target probability of the node's
/// token given its parent's context. The root entry is ignored (the root is
/// always committed). Counts committed tree nodes including the root, so the
/// result lies in [1, k].
pub fn exact_expected_accept_len(prefix: &TreePrefix<'_>, target_probs: &[f64]) -> Result<f64> {
    check_probs(prefix, target_probs)?;
    let tree = prefix.tree();
    let mut path_prob = vec![0.0; tree.len()];
    let mut ids = prefix.kept_ids().to_vec();
    ids.sort_unstable(); // ancestors precede descendants in id order
    let mut total = 0.0;
    for id in ids {
        let p = match tree.node(id).parent {
            None => 1.0,
            Some(parent) => path_prob[parent] * target_probs[id],
        };
        path_prob[id] = p;
        total += p;
    }
    Ok(total)
}

/// Expected accepted length by exhaustive recursion over the verification
/// process itself: visit kept children in creation order, accept child `c`
/// with its current (renormalized) probability, and on rejection remove the
/// child's mass before trying the next sibling. Independent of the closed
/// form above; limited to [`ENUMERATION_LIMIT`] nodes.
pub fn enumerate_accept_oracle(prefix: &TreePrefix<'_>, target_probs: &[f64]) -> Result<f64> {
    if prefix.k() > ENUMERATION_LIMIT {
        return Err(Error::Config(format!(
            "enumeration oracle limited to {ENUMERATION_LIMIT} nodes, got {}",
            prefix.k()
        )));
    }
    check_probs(prefix, target_probs)?;

    // Expected committed nodes within the subtree at `id`, given `id` itself
    // was accepted.
    fn subtree(prefix: &TreePrefix<'_>, probs: &[f64], id: usize) -> f64 {
        1.0 + siblings(prefix, probs, &prefix.kept_children(id), 1.0)
    }

    // Expected committed nodes from a sibling list, where the surviving
    // distribution currently retains `denom` of its original mass.
    fn siblings(prefix: &TreePrefix<'_>, probs: &[f64], children: &[usize], denom: f64) -> f64 {
        let Some((&c, rest)) = children.split_first() else {
            return 0.0;
        };
        let p_now = (probs[c] / denom).min(1.0);
        let mut e = p_now * subtree(prefix, probs, c);
        let reject = 1.0 - p_now;
        if reject > 0.0 {
            e += reject * siblings(prefix, probs, rest, denom - probs[c]);
        }
        e
    }

    Ok(subtree(prefix, target_probs, 0))
}

/// Monte-Carlo accepted length: run the verifier `trials` times with fresh
/// randomness and return (mean, standard error). Temperature 0 runs the
/// deterministic greedy verifier, so the standard error is exactly 0.
pub fn mc_accept_oracle(
    prefix: &TreePrefix<'_>,
    model: &MoETarget,
    temperature: f64,
    rng: &mut Rng,
    trials: usize,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidInput("mc_accept_oracle requires trials >= 1".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let res = if temperature == 0.0 {
            verify_greedy(prefix, model)?
        } else {
            verify_sampling(prefix, model, temperature, rng)?
        };
        let a = res.accepted_len as f64;
        sum += a;
        sum_sq += a * a;
    }
    let n = trials as f64;
    let mean = sum / n;
    let stderr = if trials < 2 {
        0.0
    } else {
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    };
    Ok((mean, stderr))
}

/// Target probability of every tree node's token given its parent's context,
/// indexed by node id (the root maps to 1). This is the table the exact and
/// enumeration estimators consume.
pub fn node_target_probs(tree: &DraftTree, model: &MoETarget, temperature: f64) -> Result<Vec<f64>> {
    let mut probs = vec![1.0; tree.len()];
    for parent in 0..tree.len() {
        if tree.children_of(parent).is_empty() {
            continue;
        }
        let dist = model.target_dist(&tree.node_context(parent), temperature)?;
        for &c in tree.children_of(parent) {
            let token = tree.node(c).token as usize;
            probs[c] = *dist.probs().get(token).ok_or_else(|| {
                Error::InvalidInput(format!("token {token} out of range for the model vocabulary"))
            })?;
        }
    }
    Ok(probs)
}
