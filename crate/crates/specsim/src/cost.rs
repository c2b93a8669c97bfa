//! Verification cost model and offline profiling.
//!
//! Simulated latency of one verification pass is affine in the work it
//! triggers: a fixed launch overhead, the drafting steps, the verified token
//! count, and — the dominant term for sparse MoE targets — the total number
//! of distinct experts whose weights must be touched across layers. Profiling
//! runs warm-up trees through the simulator to tabulate the expected cost
//! `C(k)` of verifying a `k`-node prefix, which the selection policy later
//! reads off as a lookup table.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::drafter::Drafter;
use crate::error::{Error, Result};
use crate::moe::{ExpertActivation, MoEConfig, MoETarget, Token};
use crate::rng::{hash_words, Rng};
use crate::tree::{build_tree, prune_topk, TreeParams};

/// Coefficients of the affine cost model, in abstract latency units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Per-pass launch overhead.
    pub fixed_overhead: f64,
    /// Cost per verified tree node.
    pub per_token: f64,
    /// Cost per distinct (layer, expert) pair touched — the memory-bandwidth
    /// term that makes MoE verification expensive.
    pub per_expert: f64,
    /// Cost per drafted tree layer.
    pub per_draft_step: f64,
}

impl Default for CostParams {
    /// Expert-dominated preset: expert loads cost an order of magnitude more
    /// than per-token compute.
    fn default() -> Self {
        CostParams { fixed_overhead: 2.0, per_token: 0.1, per_expert: 1.0, per_draft_step: 0.5 }
    }
}

impl CostParams {
    /// Dense-regime preset: no expert term, so cost grows only with k.
    pub fn dense() -> Self {
        CostParams { per_expert: 0.0, ..CostParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("fixed_overhead", self.fixed_overhead),
            ("per_token", self.per_token),
            ("per_expert", self.per_expert),
            ("per_draft_step", self.per_draft_step),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("cost {name} must be finite and >= 0, got {v}")));
            }
        }
        if fields.iter().all(|&(_, v)| v == 0.0) {
            return Err(Error::Config("at least one cost coefficient must be positive".into()));
        }
        Ok(())
    }
}

/// Simulated latency of one verification pass.
///
/// `k` is the number of verified tree nodes (root included) and
/// `steps_drafted` the number of tree layers drafted beforehand.
pub fn simulate_verify_cost(
    params: &CostParams,
    k: usize,
    activation: &ExpertActivation,
    steps_drafted: usize,
) -> f64 {
    params.fixed_overhead
        + params.per_draft_step * steps_drafted as f64
        + params.per_token * k as f64
        + params.per_expert * activation.union_size_total as f64
}

/// Provenance of a profiled cost table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileMeta {
    pub num_profile_iters: usize,
    pub seed: u64,
    /// Hash of the (model, tree, cost, drafter) configuration the table was
    /// profiled under; guards against mixing tables across setups.
    pub config_hash: String,
}

/// Profiled lookup table: expected verification cost per prefix size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    /// `per_k[k-1]` is the smoothed mean cost of verifying `k` nodes,
    /// for k in 1..=draft_tokens+1.
    pub per_k: Vec<f64>,
    /// Reference cost of one plain autoregressive decode step.
    pub ar_cost: f64,
    pub meta: ProfileMeta,
}

impl CostTable {
    pub fn validate(&self) -> Result<()> {
        if self.per_k.is_empty() {
            return Err(Error::Invariant("cost table has no entries".into()));
        }
        for (i, &c) in self.per_k.iter().enumerate() {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::Invariant(format!("cost entry {i} is {c}")));
            }
        }
        for w in self.per_k.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Invariant(format!(
                    "cost table not monotone after smoothing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(self.ar_cost.is_finite() && self.ar_cost > 0.0) {
            return Err(Error::Invariant(format!("ar_cost is {}", self.ar_cost)));
        }
        if self.per_k[0] < self.ar_cost {
            return Err(Error::Invariant(format!(
                "single-node verification ({}) undercuts an autoregressive step ({})",
                self.per_k[0], self.ar_cost
            )));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("cost table serialization cannot fail");
        s.push('\n');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let table: CostTable = serde_json::from_str(s)
            .map_err(|e| Error::Config(format!("malformed cost table JSON: {e}")))?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }
}

/// Stable hash of everything a cost table depends on besides the seed.
pub fn profile_config_hash(
    model: &MoEConfig,
    tree: &TreeParams,
    params: &CostParams,
    alpha: f64,
    noise_scale: f64,
) -> String {
    let words = [
        model.vocab_size as u64,
        model.num_layers as u64,
        model.num_experts as u64,
        model.active_experts as u64,
        model.hidden_dim as u64,
        model.context_order as u64,
        model.seed,
        tree.steps as u64,
        tree.topk as u64,
        tree.draft_tokens as u64,
        params.fixed_overhead.to_bits(),
        params.per_token.to_bits(),
        params.per_expert.to_bits(),
        params.per_draft_step.to_bits(),
        alpha.to_bits(),
        noise_scale.to_bits(),
    ];
    format!("{:016x}", hash_words(0xC057, &words))
}

/// Cost of one autoregressive step: one token, fully routed once per layer.
pub fn autoregressive_cost(params: &CostParams, model: &MoEConfig) -> f64 {
    params.fixed_overhead
        + params.per_token
        + params.per_expert * (model.num_layers * model.active_experts) as f64
}

/// Profile expected verification cost per prefix size.
///
/// Builds `num_iters` draft trees from random warm-up contexts, truncates
/// each to every feasible k, and averages the simulated cost. The averaged
/// curve is smoothed with a running maximum so the published table is
/// monotone in k even under sampling noise.
pub fn profile_costs(
    model: &MoETarget,
    drafter: &Drafter,
    params: &CostParams,
    tree_params: &TreeParams,
    num_iters: usize,
    rng: &mut Rng,
) -> Result<CostTable> {
    params.validate()?;
    tree_params.validate(model.config().vocab_size)?;
    if num_iters == 0 {
        return Err(Error::Config("profiling requires num_iters >= 1".into()));
    }
    let full_tree = 1 + tree_params.steps * tree_params.topk;
    let kmax = full_tree.min(tree_params.draft_tokens + 1);
    let mut sums = vec![0.0; kmax];
    let warmup_len = model.config().context_order + 4;
    for _ in 0..num_iters {
        let context: Vec<Token> = (0..warmup_len)
            .map(|_| rng.next_below(model.config().vocab_size as u64) as Token)
            .collect();
        let root = model.target_dist(&context, 1.0)?.sample(rng) as Token;
        let tree = build_tree(drafter, root, &context, tree_params.steps, tree_params.topk)?;
        for k in 1..=kmax.min(tree.len()) {
            let prefix = prune_topk(&tree, k)?;
            let contexts = prefix.kept_contexts();
            let refs: Vec<&[Token]> = contexts.iter().map(|c| c.as_slice()).collect();
            let activation = model.expert_union(&refs)?;
            sums[k - 1] += simulate_verify_cost(params, k, &activation, tree_params.steps);
        }
    }
    let mut per_k: Vec<f64> = sums.iter().map(|s| s / num_iters as f64).collect();
    // Running-max smoothing: C(k) must not decrease in k.
    for i in 1..per_k.len() {
        if per_k[i] < per_k[i - 1] {
            per_k[i] = per_k[i - 1];
        }
    }
    let table = CostTable {
        per_k,
        ar_cost: autoregressive_cost(params, model.config()),
        meta: ProfileMeta {
            num_profile_iters: num_iters,
            seed: rng.seed(),
            config_hash: profile_config_hash(
                model.config(),
                tree_params,
                params,
                drafter.alpha(),
                drafter.noise_scale(),
            ),
        },
    };
    table.validate()?;
    Ok(table)
}
