//! Miscalibrated draft model derived from the target.
//!
//! The drafter interpolates between the target's own temperature-1
//! distribution and a seeded pseudo-random perturbation. `alpha` is the
//! calibration knob: 1 reproduces the target exactly, 0 is pure noise, and
//! values in between model drafters of varying quality.

use crate::dist::{softmax_temp, Distribution};
use crate::error::{Error, Result};
use crate::moe::{MoETarget, Token};
use crate::rng::{hash_words, unit_from_hash};

/// Draft distribution source: a blend of the target and seeded noise.
#[derive(Debug, Clone)]
pub struct Drafter<'a> {
    target: &'a MoETarget,
    alpha: f64,
    noise_seed: u64,
    noise_scale: f64,
}

impl<'a> Drafter<'a> {
    /// `alpha` in [0, 1] is the weight on the true target distribution;
    /// `noise_scale >= 0` sets how peaked the perturbation logits are.
    pub fn new(target: &'a MoETarget, alpha: f64, noise_seed: u64, noise_scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
        }
        if !noise_scale.is_finite() || noise_scale < 0.0 {
            return Err(Error::Config(format!("noise_scale must be >= 0, got {noise_scale}")));
        }
        Ok(Drafter { target, alpha, noise_seed, noise_scale })
    }

    pub fn target(&self) -> &MoETarget {
        self.target
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Draft next-token distribution for a context.
    ///
    /// `alpha * target_dist(ctx, T=1) + (1 - alpha) * perturbation(ctx)`.
    /// The endpoints short-circuit, so `alpha == 1` is bit-identical to the
    /// target distribution. Deterministic in (seeds, trailing context window).
    pub fn draft_dist(&self, context: &[Token]) -> Result<Distribution> {
        if self.alpha == 1.0 {
            return self.target.target_dist(context, 1.0);
        }
        let pert = self.perturbation(context)?;
        if self.alpha == 0.0 {
            return Ok(pert);
        }
        let base = self.target.target_dist(context, 1.0)?;
        let probs: Vec<f64> = base
            .probs()
            .iter()
            .zip(pert.probs())
            .map(|(p, q)| self.alpha * p + (1.0 - self.alpha) * q)
            .collect();
        Distribution::new(probs)
    }

    /// Softmax of pseudo-random logits keyed by (noise seed, context window).
    /// Only the trailing `context_order` tokens enter the key, matching the
    /// context sensitivity of the target itself.
    fn perturbation(&self, context: &[Token]) -> Result<Distribution> {
        if context.is_empty() {
            return Err(Error::InvalidInput("draft_dist requires a non-empty context".into()));
        }
        let order = self.target.config().context_order;
        let window = &context[context.len().saturating_sub(order)..];
        let words: Vec<u64> = window.iter().map(|&t| t as u64).collect();
        let key = hash_words(self.noise_seed, &words);
        let logits: Vec<f64> = (0..self.target.config().vocab_size)
            .map(|v| {
                let u = unit_from_hash(hash_words(key, &[v as u64]));
                // Exponential tail so the perturbation concentrates on a few
                // context-dependent tokens instead of flattening everything;
                // u < 1 by construction.
                self.noise_scale * -(1.0 - u).ln()
            })
            .collect();
        softmax_temp(&logits, 1.0)
    }
}
