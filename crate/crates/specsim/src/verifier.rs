//! Lossless tree verification against the target model.
//!
//! A verification pass walks the kept prefix from the root. At each node the
//! target's distribution over the next token is computed once; kept children
//! are then tried in creation order. A child is accepted with its current
//! probability; a rejected child has its mass removed and the remaining
//! distribution renormalized before the next sibling is tried. When no child
//! survives (or a kept leaf is reached) a bonus token is drawn from whatever
//! distribution is left, which is exactly what makes the committed output
//! distributed as the target regardless of the draft tree.

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::moe::{ExpertActivation, MoETarget, Token};
use crate::rng::Rng;
use crate::tree::TreePrefix;

/// Outcome of verifying one pruned draft tree.
#[derive(Debug, Clone)]
pub struct VerifyResult {
    /// Node ids of the committed path, root first.
    pub accepted_path: Vec<usize>,
    /// Extra token drawn after the deepest accepted node.
    pub bonus_token: Token,
    /// Tokens committed this pass: the path tokens followed by the bonus.
    pub committed_tokens: Vec<Token>,
    /// Expert-union footprint over every kept node's context — the whole
    /// batch is scored in one pass, so rejected nodes still cost experts.
    pub activation: ExpertActivation,
    /// Number of committed tree nodes, root included (equals path length).
    pub accepted_len: usize,
}

/// Stochastic verification at `temperature > 0`.
///
/// Temperature 0 is a contract violation here — the deterministic pass is
/// [`verify_greedy`] — because acceptance-by-probability degenerates exactly
/// when the target collapses to a point mass.
pub fn verify_sampling(
    prefix: &TreePrefix<'_>,
    model: &MoETarget,
    temperature: f64,
    rng: &mut Rng,
) -> Result<VerifyResult> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidInput(format!(
            "verify_sampling requires temperature > 0 (got {temperature}); use verify_greedy"
        )));
    }
    let activation = prefix_activation(prefix, model)?;
    let tree = prefix.tree();
    let mut path = vec![0usize];
    let mut current = 0usize;
    let bonus_token = loop {
        let dist = model.target_dist(&tree.node_context(current), temperature)?;
        let mut probs = dist.probs().to_vec();
        let mut descended = false;
        for child in prefix.kept_children(current) {
            let token = tree.node(child).token as usize;
            let p = *probs.get(token).ok_or_else(|| {
                Error::InvalidInput(format!("token {token} out of range for the model vocabulary"))
            })?;
            if rng.next_f64() < p {
                path.push(child);
                current = child;
                descended = true;
                break;
            }
            // Rejected: remove the child's mass and renormalize the rest.
            probs[token] = 0.0;
            let rest: f64 = probs.iter().sum();
            if rest <= 0.0 {
                return Err(Error::Invariant(
                    "residual distribution lost all mass after a rejection".into(),
                ));
            }
            for q in &mut probs {
                *q /= rest;
            }
        }
        if !descended {
            break Distribution::new(probs)?.sample(rng) as Token;
        }
    };
    Ok(finish(prefix, path, bonus_token, activation))
}

/// Deterministic verification for temperature 0.
///
/// At each node the target's argmax token is the only acceptable
/// continuation: the matching kept child (if any) is accepted, otherwise the
/// argmax itself is emitted as the bonus token. The result is token-for-token
/// identical to plain greedy decoding.
pub fn verify_greedy(prefix: &TreePrefix<'_>, model: &MoETarget) -> Result<VerifyResult> {
    let activation = prefix_activation(prefix, model)?;
    let tree = prefix.tree();
    let mut path = vec![0usize];
    let mut current = 0usize;
    let bonus_token = loop {
        let greedy = model.target_dist(&tree.node_context(current), 0.0)?.argmax() as Token;
        match prefix
            .kept_children(current)
            .into_iter()
            .find(|&c| tree.node(c).token == greedy)
        {
            Some(child) => {
                path.push(child);
                current = child;
            }
            None => break greedy,
        }
    };
    Ok(finish(prefix, path, bonus_token, activation))
}

/// Expert union over the contexts of every kept node.
fn prefix_activation(prefix: &TreePrefix<'_>, model: &MoETarget) -> Result<ExpertActivation> {
    let contexts = prefix.kept_contexts();
    let refs: Vec<&[Token]> = contexts.iter().map(|c| c.as_slice()).collect();
    model.expert_union(&refs)
}

fn finish(
    prefix: &TreePrefix<'_>,
    path: Vec<usize>,
    bonus_token: Token,
    activation: ExpertActivation,
) -> VerifyResult {
    let tree = prefix.tree();
    let mut committed_tokens: Vec<Token> = path.iter().map(|&id| tree.node(id).token).collect();
    committed_tokens.push(bonus_token);
    let accepted_len = path.len();
    VerifyResult { accepted_path: path, bonus_token, committed_tokens, activation, accepted_len }
}
