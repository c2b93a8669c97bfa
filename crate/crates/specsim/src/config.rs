//! Run configuration: JSON-loadable, fully defaulted, strictly validated.
//!
//! Every field has a default so an empty `{}` file (or no file at all) is a
//! valid desk-scale run. Unknown keys are rejected rather than ignored —
//! silently dropping a misspelled knob is how benchmark numbers go wrong.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::CostParams;
use crate::error::{Error, Result};
use crate::moe::MoEConfig;
use crate::policy::PolicySpec;
use crate::tree::TreeParams;

/// Synthetic prompt pool: `count` prompts of `length` random tokens each,
/// drawn deterministically from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub count: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig { count: 16, length: 16, seed: 11 }
    }
}

/// Everything one benchmark run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for decode-time randomness (drafter noise, verification).
    pub seed: u64,
    pub model: MoEConfig,
    /// Draft-quality levels exercised by benchmarks; runs cycle through
    /// these per prompt.
    pub alphas: Vec<f64>,
    /// Sharpness of the drafter's hash-noise perturbation.
    pub noise_scale: f64,
    pub tree: TreeParams,
    /// Target sampling temperature (0 = greedy).
    pub temperature: f64,
    pub policy: PolicySpec,
    pub cost: CostParams,
    /// Optional pre-profiled cost table; when absent the run profiles one.
    pub cost_table: Option<PathBuf>,
    pub prompts: PromptConfig,
    /// Tokens to generate per prompt.
    pub max_new_tokens: usize,
    pub out_csv: Option<PathBuf>,
    pub out_json: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            model: MoEConfig::default(),
            alphas: vec![0.3, 0.6, 0.95],
            noise_scale: 2.0,
            tree: TreeParams::default(),
            temperature: 1.0,
            policy: PolicySpec::Evict,
            cost: CostParams::default(),
            cost_table: None,
            prompts: PromptConfig::default(),
            max_new_tokens: 64,
            out_csv: None,
            out_json: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.tree.validate(self.model.vocab_size)?;
        self.cost.validate()?;
        if self.alphas.is_empty() {
            return Err(Error::Config("alphas must not be empty".into()));
        }
        for &a in &self.alphas {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("alpha must be in [0, 1], got {a}")));
            }
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::Config(format!(
                "noise_scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Config(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.prompts.count == 0 || self.prompts.length == 0 {
            return Err(Error::Config("prompt pool needs count >= 1 and length >= 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parse a config from JSON text, applying defaults for missing fields and
/// rejecting unknown keys.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load and validate a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
