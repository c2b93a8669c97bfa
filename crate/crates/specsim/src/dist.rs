//! Finite discrete probability distributions and temperature shaping.
//!
//! [`Distribution`] is a validated probability vector over token indices
//! 0..V. All distributions in the simulator are built either by
//! [`softmax_temp`] or by explicit mixing/renormalization, so validity is
//! checked once at construction and relied upon everywhere else.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Tolerance on the total mass of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability distribution over a finite token vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validate and wrap a probability vector.
    ///
    /// Entries must be finite and non-negative and sum to 1 within
    /// [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("distribution must be non-empty".into()));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "probability at index {i} is {p}; entries must be finite and >= 0"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, outside 1 +/- {SUM_TOLERANCE}"
            )));
        }
        Ok(Distribution { probs })
    }

    /// Uniform distribution over `n` outcomes.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("uniform distribution needs n >= 1".into()));
        }
        Ok(Distribution { probs: vec![1.0 / n as f64; n] })
    }

    /// Point mass on `index` in a vocabulary of `n` outcomes.
    pub fn point_mass(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::InvalidInput(format!(
                "point mass index {index} out of range for size {n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Distribution { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of outcome `i` (panics if out of range).
    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_index(&self.probs)
    }

    /// Inverse-CDF sample. Outcomes with zero probability are never returned.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.next_f64();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return i;
                }
            }
        }
        // Rounding can leave u marginally above the accumulated mass; fall
        // back to the last outcome with positive probability.
        last_positive
    }

    /// Total-variation distance: half the L1 distance between the vectors.
    pub fn tv_distance(&self, other: &Distribution) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::InvalidInput(format!(
                "tv_distance over mismatched supports ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        let l1: f64 = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(0.5 * l1)
    }
}

/// Temperature-shaped softmax over raw logits.
///
/// `temperature == 0` is an explicit greedy branch: a point mass on the
/// argmax logit (ties to the lowest index), never a division by zero. For
/// `temperature > 0` the usual max-subtracted exponential normalization is
/// used, so the result is invariant to adding a constant to every logit.
pub fn softmax_temp(logits: &[f64], temperature: f64) -> Result<Distribution> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax over empty logits".into()));
    }
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(Error::InvalidInput(format!(
            "temperature must be finite and >= 0, got {temperature}"
        )));
    }
    for (i, &x) in logits.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!("logit at index {i} is {x}")));
        }
    }
    if temperature == 0.0 {
        return Distribution::point_mass(logits.len(), argmax_index(logits));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&x| ((x - max) / temperature).exp())
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Distribution::new(probs)
}

/// Index of the maximum value; ties resolve to the lowest index.
pub fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest values, ordered by (value desc, index asc).
///
/// `k` is clamped to the length of `values`.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| a.cmp(&b))
    });
    idx.truncate(k);
    idx
}
