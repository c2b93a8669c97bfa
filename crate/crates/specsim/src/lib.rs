//! Deterministic desk-scale simulator for expert-aware speculative decoding.
//!
//! The crate models the full loop at toy scale: a synthetic sparse
//! mixture-of-experts target whose routing decides which experts a
//! verification pass must touch, a quality-dialable drafter, layer-wise
//! top-k draft trees, exact and estimated accepted-length mathematics, an
//! offline-profiled cost table, prefix-size selection policies (including
//! the utility-maximizing adaptive one), lossless tree verification, and a
//! benchmark harness with a CLI. Everything is seeded and replayable:
//! the same config produces byte-identical CSV and JSON outputs.

pub mod config;
pub mod cost;
pub mod dist;
pub mod drafter;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod moe;
pub mod policy;
pub mod rng;
pub mod tree;
pub mod verifier;

pub use config::{load_config, parse_config, PromptConfig, RunConfig};
pub use cost::{autoregressive_cost, profile_costs, simulate_verify_cost, CostParams, CostTable};
pub use dist::{softmax_temp, Distribution};
pub use drafter::Drafter;
pub use error::{Error, Result};
pub use estimator::{
    enumerate_accept_oracle, estimated_accept_prefix_sums, exact_expected_accept_len,
    mc_accept_oracle, node_target_probs, AcceptEstimate,
};
pub use harness::{
    profile_table, run_oracle_suite, BenchmarkOutput, IterationStats, PolicyAggregate,
    PolicyResult, Report, Runner,
};
pub use moe::{ExpertActivation, MoEConfig, MoETarget, Token};
pub use policy::{
    select_depth_confidence, select_prefix_coverage, select_prefix_evict, select_prefix_fixed,
    PolicyDecision, PolicySpec,
};
pub use rng::Rng;
pub use tree::{build_tree, prune_topk, DraftTree, TreeNode, TreeParams, TreePrefix};
pub use verifier::{verify_greedy, verify_sampling, VerifyResult};
