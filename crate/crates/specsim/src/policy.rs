//! Prefix-size selection policies.
//!
//! All policies answer the same question — how many of the tree's top-scored
//! nodes to hand the verifier — and return a [`PolicyDecision`]. The adaptive
//! policy maximizes estimated accepted tokens per unit of profiled cost and
//! has no tunable knobs; the baselines (fixed budget, score coverage,
//! depth confidence) reproduce common static and semi-adaptive schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::CostTable;
use crate::error::{Error, Result};
use crate::estimator::AcceptEstimate;
use crate::tree::DraftTree;

/// A selected prefix size plus the evidence behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    /// Number of tree nodes (root included) to verify.
    pub k_star: usize,
    /// Expected accepted tokens per autoregressive-step-equivalent of cost at
    /// `k_star`; only the utility-driven policy computes this.
    pub utility: Option<f64>,
    /// Per-k score/cost ratios scanned by the utility policy (diagnostic).
    pub scanned: Vec<f64>,
}

/// Utility-maximizing adaptive selection (the `evict` policy).
///
/// Scans every prefix size k, forms `S[k] / C(k)` from the accept estimate
/// and the profiled cost table, and returns the argmax; ties resolve to the
/// smallest k. Rescaling either input by a positive constant leaves the
/// decision unchanged, so only the *shape* of the cost curve matters.
pub fn select_prefix_evict(estimate: &AcceptEstimate, table: &CostTable) -> Result<PolicyDecision> {
    let s = &estimate.prefix_sums;
    if s.is_empty() {
        return Err(Error::InvalidInput("evict selection over an empty estimate".into()));
    }
    if s.len() > table.per_k.len() {
        return Err(Error::InvalidInput(format!(
            "estimate covers {} prefix sizes but the cost table only {}",
            s.len(),
            table.per_k.len()
        )));
    }
    let mut scanned = Vec::with_capacity(s.len());
    let mut best_k = 1;
    let mut best_ratio = s[0] / table.per_k[0];
    for (i, (&sk, &ck)) in s.iter().zip(&table.per_k).enumerate() {
        let ratio = sk / ck;
        scanned.push(ratio);
        if ratio > best_ratio {
            best_ratio = ratio;
            best_k = i + 1;
        }
    }
    Ok(PolicyDecision { k_star: best_k, utility: Some(table.ar_cost * best_ratio), scanned })
}

/// Static budget: always verify `k_fixed` nodes, clamped to the tree.
pub fn select_prefix_fixed(k_fixed: usize, available: usize) -> Result<PolicyDecision> {
    if k_fixed == 0 || available == 0 {
        return Err(Error::InvalidInput("fixed selection requires k >= 1 on a non-empty tree".into()));
    }
    Ok(PolicyDecision { k_star: k_fixed.min(available), utility: None, scanned: vec![] })
}

/// Score coverage: the smallest k whose score mass reaches a fraction `rho`
/// of the full tree's. `rho = 1` degenerates to the full tree.
pub fn select_prefix_coverage(estimate: &AcceptEstimate, rho: f64) -> Result<PolicyDecision> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidInput(format!("coverage rho must be in (0, 1], got {rho}")));
    }
    let s = &estimate.prefix_sums;
    if s.is_empty() {
        return Err(Error::InvalidInput("coverage selection over an empty estimate".into()));
    }
    let total = *s.last().unwrap();
    let k_star = s
        .iter()
        .position(|&sk| sk / total >= rho)
        .map(|i| i + 1)
        .unwrap_or(s.len());
    Ok(PolicyDecision { k_star, utility: None, scanned: vec![] })
}

/// Depth confidence: keep every layer down to the deepest one that still
/// contains a node with cumulative score >= `threshold`, and verify as many
/// nodes as those layers hold. Layer maxima never increase with depth, so
/// the kept depth shrinks monotonically as the threshold rises.
pub fn select_depth_confidence(tree: &DraftTree, threshold: f64) -> Result<PolicyDecision> {
    if !(0.0..=1.0).contains(&threshold) || !threshold.is_finite() {
        return Err(Error::InvalidInput(format!(
            "depth-confidence threshold must be in [0, 1], got {threshold}"
        )));
    }
    let mut k = 0;
    for layer in tree.layers() {
        let max = layer
            .iter()
            .map(|&id| tree.node(id).cum_score)
            .fold(f64::NEG_INFINITY, f64::max);
        if max >= threshold {
            k += layer.len();
        } else {
            break;
        }
    }
    // The root layer always qualifies (its score is exactly 1).
    Ok(PolicyDecision { k_star: k.max(1), utility: None, scanned: vec![] })
}

/// Which selection policy a run uses, as written on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicySpec {
    /// Utility-maximizing adaptive verification.
    Evict,
    /// Static budget of k nodes.
    Fixed(usize),
    /// Smallest prefix reaching a score-coverage fraction.
    Coverage(f64),
    /// Confidence-gated tree depth.
    DepthConf(f64),
    /// No speculation: plain one-token decoding.
    Autoregressive,
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(msg);
        match s.split_once(':') {
            None => match s {
                "evict" => Ok(PolicySpec::Evict),
                "autoregressive" => Ok(PolicySpec::Autoregressive),
                other => Err(bad(format!(
                    "unknown policy '{other}' (expected evict, fixed:<k>, coverage:<rho>, depthconf:<t>, or autoregressive)"
                ))),
            },
            Some(("fixed", v)) => {
                let k: usize = v
                    .parse()
                    .map_err(|_| bad(format!("fixed policy needs an integer budget, got '{v}'")))?;
                if k == 0 {
                    return Err(bad("fixed policy budget must be >= 1".into()));
                }
                Ok(PolicySpec::Fixed(k))
            }
            Some(("coverage", v)) => {
                let rho: f64 = v
                    .parse()
                    .map_err(|_| bad(format!("coverage policy needs a real rho, got '{v}'")))?;
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(bad(format!("coverage rho must be in (0, 1], got {rho}")));
                }
                Ok(PolicySpec::Coverage(rho))
            }
            Some(("depthconf", v)) => {
                let t: f64 = v
                    .parse()
                    .map_err(|_| bad(format!("depthconf policy needs a real threshold, got '{v}'")))?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(bad(format!("depthconf threshold must be in [0, 1], got {t}")));
                }
                Ok(PolicySpec::DepthConf(t))
            }
            Some((other, _)) => Err(bad(format!("unknown policy family '{other}'"))),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Evict => write!(f, "evict"),
            PolicySpec::Fixed(k) => write!(f, "fixed:{k}"),
            PolicySpec::Coverage(rho) => write!(f, "coverage:{rho}"),
            PolicySpec::DepthConf(t) => write!(f, "depthconf:{t}"),
            PolicySpec::Autoregressive => write!(f, "autoregressive"),
        }
    }
}

impl TryFrom<String> for PolicySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> String {
        p.to_string()
    }
}

impl PolicySpec {
    /// Filesystem-safe tag used to derive per-policy output names.
    pub fn file_tag(&self) -> String {
        self.to_string().replace(':', "_")
    }
}
