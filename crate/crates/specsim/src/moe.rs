//! Synthetic sparse mixture-of-experts target model.
//!
//! The target is a deterministic stand-in for a real MoE language model at
//! desk scale: every layer routes a pseudo-random hidden state (hashed from
//! the recent context window) to its top scoring experts, and the selected
//! experts' logit tables are blended into the next-token distribution. All
//! parameters are generated from the model seed, so two models built from the
//! same config are identical.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dist::{softmax_temp, top_k_indices, Distribution};
use crate::error::{Error, Result};
use crate::rng::{hash_words, Rng};

/// Token index into the model vocabulary.
pub type Token = u32;

/// Spread of the per-expert logit tables (entries are uniform in +/- this).
const EXPERT_TABLE_SCALE: f64 = 8.0;
/// Recency decay for token embeddings inside the context window; closer to 1
/// means neighboring contexts route more alike (more expert sharing).
const EMBED_DECAY: f64 = 0.9;

// Stream tags keeping parameter generation and context hashing disjoint.
const TAG_ROUTER: u64 = 1;
const TAG_TABLE: u64 = 2;
const TAG_EMBED: u64 = 3;

/// Model shape and seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoEConfig {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub num_experts: usize,
    pub active_experts: usize,
    pub hidden_dim: usize,
    pub context_order: usize,
    pub seed: u64,
}

impl Default for MoEConfig {
    /// Desk-scale default: 64 tokens, 4 layers of 32 experts with 4 active,
    /// 32-dim hidden states hashed from the last 4 tokens.
    fn default() -> Self {
        MoEConfig {
            vocab_size: 64,
            num_layers: 4,
            num_experts: 32,
            active_experts: 4,
            hidden_dim: 32,
            context_order: 4,
            seed: 7,
        }
    }
}

impl MoEConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("num_layers", self.num_layers),
            ("num_experts", self.num_experts),
            ("active_experts", self.active_experts),
            ("hidden_dim", self.hidden_dim),
            ("context_order", self.context_order),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.active_experts > self.num_experts {
            return Err(Error::Config(format!(
                "active_experts ({}) exceeds num_experts ({})",
                self.active_experts, self.num_experts
            )));
        }
        Ok(())
    }
}

/// Per-layer sets of experts touched by a batch of contexts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertActivation {
    /// One set of expert indices per layer.
    pub per_layer: Vec<BTreeSet<usize>>,
    /// Sum of the per-layer set sizes; the quantity the cost model charges.
    pub union_size_total: usize,
}

impl ExpertActivation {
    fn from_sets(per_layer: Vec<BTreeSet<usize>>) -> Self {
        let union_size_total = per_layer.iter().map(|s| s.len()).sum();
        ExpertActivation { per_layer, union_size_total }
    }
}

/// Deterministic synthetic MoE target model.
#[derive(Debug, Clone)]
pub struct MoETarget {
    config: MoEConfig,
    /// Unit-norm router rows, indexed [layer][expert][dim].
    router: Vec<Vec<Vec<f64>>>,
    /// Per-expert output logit tables, indexed [layer][expert][token].
    tables: Vec<Vec<Vec<f64>>>,
}

impl MoETarget {
    /// Generate router weights and expert tables from the config seed.
    pub fn new(config: MoEConfig) -> Result<Self> {
        config.validate()?;
        let (l, n, d, v) = (
            config.num_layers,
            config.num_experts,
            config.hidden_dim,
            config.vocab_size,
        );
        let mut router = Vec::with_capacity(l);
        let mut tables = Vec::with_capacity(l);
        for layer in 0..l {
            let mut rows = Vec::with_capacity(n);
            let mut tabs = Vec::with_capacity(n);
            for expert in 0..n {
                let mut rs = Rng::derived(config.seed, &[TAG_ROUTER, layer as u64, expert as u64]);
                let mut row: Vec<f64> = (0..d).map(|_| rs.next_signed_unit()).collect();
                normalize(&mut row);
                rows.push(row);

                let mut ts = Rng::derived(config.seed, &[TAG_TABLE, layer as u64, expert as u64]);
                let tab: Vec<f64> = (0..v)
                    .map(|_| EXPERT_TABLE_SCALE * ts.next_signed_unit())
                    .collect();
                tabs.push(tab);
            }
            router.push(rows);
            tables.push(tabs);
        }
        Ok(MoETarget { config, router, tables })
    }

    pub fn config(&self) -> &MoEConfig {
        &self.config
    }

    /// Hidden state for one layer: hash each token of the trailing
    /// `context_order` window into a pseudo-random unit vector, combine with
    /// geometrically decaying recency weights, and renormalize. Embeddings are
    /// keyed by token (salted per layer), not by window position, so contexts
    /// that share most of their recent tokens get strongly correlated states
    /// — and hence overlapping expert routes — while the recency weights keep
    /// the state sensitive to token order.
    pub fn hidden_state(&self, layer: usize, context: &[Token]) -> Result<Vec<f64>> {
        self.check_layer(layer)?;
        if context.is_empty() {
            return Err(Error::InvalidInput("hidden_state requires a non-empty context".into()));
        }
        let d = self.config.hidden_dim;
        let window = tail(context, self.config.context_order);
        let mut h = vec![0.0; d];
        // Most recent token first, weight decaying toward older tokens.
        let mut weight = 1.0;
        for &tok in window.iter().rev() {
            let key = hash_words(self.config.seed, &[TAG_EMBED, layer as u64, tok as u64]);
            let mut vs = Rng::new(key);
            let mut vec: Vec<f64> = (0..d).map(|_| vs.next_signed_unit()).collect();
            normalize(&mut vec);
            for (hi, vi) in h.iter_mut().zip(&vec) {
                *hi += weight * vi;
            }
            weight *= EMBED_DECAY;
        }
        normalize(&mut h);
        Ok(h)
    }

    /// Top `active_experts` experts for a hidden state, as a sorted index set.
    /// Score ties resolve to the lowest expert index.
    pub fn route(&self, layer: usize, hidden: &[f64]) -> Result<Vec<usize>> {
        let mut selected: Vec<usize> = self
            .route_scored(layer, hidden)?
            .into_iter()
            .map(|(e, _)| e)
            .collect();
        selected.sort_unstable();
        Ok(selected)
    }

    /// Selected experts with their router scores, in rank order.
    fn route_scored(&self, layer: usize, hidden: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_layer(layer)?;
        if hidden.len() != self.config.hidden_dim {
            return Err(Error::InvalidInput(format!(
                "hidden state has dim {}, expected {}",
                hidden.len(),
                self.config.hidden_dim
            )));
        }
        let scores: Vec<f64> = self.router[layer]
            .iter()
            .map(|row| dot(row, hidden))
            .collect();
        Ok(top_k_indices(&scores, self.config.active_experts)
            .into_iter()
            .map(|e| (e, scores[e]))
            .collect())
    }

    /// Next-token distribution for a context.
    ///
    /// Per layer: route the hidden state, softmax-normalize the selected
    /// experts' router scores into blend weights, and accumulate the weighted
    /// expert logit tables. The summed logits are then shaped by
    /// `softmax_temp` (temperature 0 selects the argmax as a point mass).
    pub fn target_dist(&self, context: &[Token], temperature: f64) -> Result<Distribution> {
        if context.is_empty() {
            return Err(Error::InvalidInput("target_dist requires a non-empty context".into()));
        }
        let mut logits = vec![0.0; self.config.vocab_size];
        for layer in 0..self.config.num_layers {
            let h = self.hidden_state(layer, context)?;
            let selected = self.route_scored(layer, &h)?;
            let max = selected
                .iter()
                .map(|&(_, s)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> = selected.iter().map(|&(_, s)| (s - max).exp()).collect();
            let wsum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= wsum;
            }
            for (&(expert, _), &w) in selected.iter().zip(&weights) {
                let table = &self.tables[layer][expert];
                for (l, t) in logits.iter_mut().zip(table) {
                    *l += w * t;
                }
            }
        }
        softmax_temp(&logits, temperature)
    }

    /// Union of routed experts per layer across a batch of contexts.
    ///
    /// This is the activation footprint a single verification pass over all
    /// the given positions would touch.
    pub fn expert_union(&self, contexts: &[&[Token]]) -> Result<ExpertActivation> {
        if contexts.is_empty() {
            return Err(Error::InvalidInput("expert_union requires at least one context".into()));
        }
        let mut per_layer = vec![BTreeSet::new(); self.config.num_layers];
        for ctx in contexts {
            for (layer, set) in per_layer.iter_mut().enumerate() {
                let h = self.hidden_state(layer, ctx)?;
                for (e, _) in self.route_scored(layer, &h)? {
                    set.insert(e);
                }
            }
        }
        Ok(ExpertActivation::from_sets(per_layer))
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.config.num_layers {
            return Err(Error::InvalidInput(format!(
                "layer {} out of range for {} layers",
                layer, self.config.num_layers
            )));
        }
        Ok(())
    }

    /// Test-only constructor with explicit parameters.
    #[cfg(test)]
    pub(crate) fn with_params(
        config: MoEConfig,
        router: Vec<Vec<Vec<f64>>>,
        tables: Vec<Vec<Vec<f64>>>,
    ) -> Self {
        MoETarget { config, router, tables }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale a vector to unit norm; degenerate inputs fall back to a unit basis
/// vector chosen by hashing the raw bits, so the result is always unit norm.
fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm < 1e-12 {
        let idx = hash_words(0, &v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let i = (idx % v.len() as u64) as usize;
        v.fill(0.0);
        v[i] = 1.0;
        return;
    }
    for x in v {
        *x /= norm;
    }
}

/// Trailing `n` elements of a slice (all of it if shorter).
fn tail<T>(xs: &[T], n: usize) -> &[T] {
    &xs[xs.len().saturating_sub(n)..]
}
