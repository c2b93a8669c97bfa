//! End-to-end decode loop, benchmark orchestration, and report emission.
//!
//! A [`Runner`] owns the target model and a cost table (profiled at
//! construction or loaded from disk) and repeats the speculative iteration:
//! sample the next token from the target, grow a draft tree under it, let the
//! configured policy pick a prefix size, verify, commit, and charge simulated
//! latency. Multiple policies run against identical prompt and noise streams
//! so their aggregates are paired, and everything — per-iteration CSV rows,
//! summary JSON, cost tables — is byte-reproducible from the config seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::cost::{profile_config_hash, profile_costs, simulate_verify_cost, CostTable, ProfileMeta};
use crate::dist::Distribution;
use crate::drafter::Drafter;
use crate::error::{Error, Result};
use crate::estimator::{
    enumerate_accept_oracle, estimated_accept_prefix_sums, exact_expected_accept_len,
    mc_accept_oracle, node_target_probs,
};
use crate::moe::{MoEConfig, MoETarget, Token};
use crate::policy::{
    select_depth_confidence, select_prefix_coverage, select_prefix_evict, select_prefix_fixed,
    PolicySpec,
};
use crate::rng::{hash_words, Rng};
use crate::tree::{build_tree, prune_topk, DraftTree};
use crate::verifier::{verify_greedy, verify_sampling};

/// Profiling iterations used when a run has to build its own cost table.
pub const DEFAULT_PROFILE_ITERS: usize = 200;

pub const CSV_HEADER: &str =
    "step,k_star,verified_tokens,accepted_len,committed,union_size_total,sim_latency,utility";

// Stream tags: every random stream in a run is derived from the config seed
// plus one of these, so streams never alias and replays are exact.
const TAG_PROFILE: u64 = 11;
const TAG_DECODE: u64 = 12;
const TAG_NOISE: u64 = 13;
const TAG_PROMPT: u64 = 14;

/// One verification iteration's ledger line.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    /// Iteration index within its prompt (resets to 0 per prompt).
    pub step: usize,
    /// Prefix size the policy chose; 0 on autoregressive rows.
    pub k_star: usize,
    /// Tokens scored by the verification pass (= k_star).
    pub verified_tokens: usize,
    /// Tree nodes committed, root included; 0 on autoregressive rows.
    pub accepted_len: usize,
    /// Tokens appended to the output this iteration.
    pub committed: usize,
    /// Layer-summed expert-union size charged this iteration.
    pub union_size_total: usize,
    pub sim_latency: f64,
    /// ar_cost * S[k*] / C(k*) — accepted-token value per cost, normalized so
    /// 1.0 means "as good as plain decoding"; exactly 1 on autoregressive rows.
    pub utility: f64,
}

/// Render rows in the pinned eight-column CSV layout.
pub fn rows_to_csv<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = &'a IterationStats>,
{
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.k_star,
            r.verified_tokens,
            r.accepted_len,
            r.committed,
            r.union_size_total,
            r.sim_latency,
            r.utility
        ));
    }
    out
}

/// One prompt's decode trace.
#[derive(Debug, Clone)]
pub struct PromptRun {
    pub prompt_index: usize,
    /// Draft quality this prompt was decoded with.
    pub alpha: f64,
    /// Generated tokens, clipped to max_new_tokens.
    pub tokens: Vec<Token>,
    pub iterations: Vec<IterationStats>,
}

/// All prompts decoded under one policy.
#[derive(Debug, Clone)]
pub struct PolicyResult {
    pub policy: PolicySpec,
    pub prompts: Vec<PromptRun>,
}

impl PolicyResult {
    /// Iteration rows across all prompts, in prompt order.
    pub fn all_rows(&self) -> impl Iterator<Item = &IterationStats> {
        self.prompts.iter().flat_map(|p| p.iterations.iter())
    }

    pub fn csv_string(&self) -> String {
        rows_to_csv(self.all_rows())
    }
}

/// Summary numbers for one policy, all recomputable from its CSV rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub iterations: usize,
    pub committed_tokens: usize,
    /// Mean accepted tree nodes per iteration (bonus token excluded).
    pub mat: f64,
    /// Mean committed tokens per iteration (bonus token included).
    pub mat_with_bonus: f64,
    pub mean_verified_tokens: f64,
    pub mean_union_size: f64,
    pub mean_iteration_latency: f64,
    /// Simulated time per output token: total latency / total committed.
    pub tpot: f64,
    /// Simulated decode throughput: total committed / total latency.
    pub tokens_per_latency_unit: f64,
    pub speedup_vs_ar: f64,
}

impl PolicyAggregate {
    pub fn from_rows<'a, I>(rows: I, ar_cost: f64) -> Result<PolicyAggregate>
    where
        I: IntoIterator<Item = &'a IterationStats>,
    {
        let mut n = 0usize;
        let mut committed = 0usize;
        let mut accepted = 0.0;
        let mut verified = 0.0;
        let mut union = 0.0;
        let mut latency = 0.0;
        for r in rows {
            n += 1;
            committed += r.committed;
            accepted += r.accepted_len as f64;
            verified += r.verified_tokens as f64;
            union += r.union_size_total as f64;
            latency += r.sim_latency;
        }
        if n == 0 {
            return Err(Error::InvalidInput("no iterations to aggregate".into()));
        }
        let tpot = latency / committed as f64;
        Ok(PolicyAggregate {
            iterations: n,
            committed_tokens: committed,
            mat: accepted / n as f64,
            mat_with_bonus: committed as f64 / n as f64,
            mean_verified_tokens: verified / n as f64,
            mean_union_size: union / n as f64,
            mean_iteration_latency: latency / n as f64,
            tpot,
            tokens_per_latency_unit: committed as f64 / latency,
            speedup_vs_ar: ar_cost / tpot,
        })
    }
}

/// Benchmark summary emitted as JSON: paired per-policy aggregates keyed by
/// policy spec string, plus the cost-table provenance they were scored with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub ar_cost: f64,
    pub profile: ProfileMeta,
    pub policies: BTreeMap<String, PolicyAggregate>,
}

impl Report {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization cannot fail");
        s.push('\n');
        s
    }
}

/// A report plus the raw traces it was aggregated from.
#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub report: Report,
    pub results: Vec<PolicyResult>,
}

/// One row of a tree-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub mean_union_size: f64,
    pub mean_sim_latency: f64,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,mean_union_size,mean_sim_latency\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.k, r.mean_union_size, r.mean_sim_latency));
    }
    out
}

fn mean_alpha(config: &RunConfig) -> f64 {
    config.alphas.iter().sum::<f64>() / config.alphas.len() as f64
}

/// Profile a cost table for `config` (the drafter uses the mean of the
/// configured alphas, matching what a run will see on average).
pub fn profile_table(config: &RunConfig, num_iters: usize) -> Result<CostTable> {
    config.validate()?;
    let model = MoETarget::new(config.model.clone())?;
    let noise_seed = hash_words(config.seed, &[TAG_NOISE]);
    let drafter = Drafter::new(&model, mean_alpha(config), noise_seed, config.noise_scale)?;
    let mut rng = Rng::derived(config.seed, &[TAG_PROFILE]);
    profile_costs(&model, &drafter, &config.cost, &config.tree, num_iters, &mut rng)
}

/// Owns a run's model and cost table and executes decode loops against them.
pub struct Runner {
    config: RunConfig,
    model: MoETarget,
    table: CostTable,
    noise_seed: u64,
    /// Largest admissible prefix size: min(draft_tokens + 1, tree nodes).
    budget: usize,
}

impl Runner {
    pub fn new(config: RunConfig) -> Result<Runner> {
        Self::with_profile_iters(config, DEFAULT_PROFILE_ITERS)
    }

    /// Like [`Runner::new`] but with an explicit profiling budget (ignored
    /// when the config points at a pre-profiled table).
    pub fn with_profile_iters(config: RunConfig, profile_iters: usize) -> Result<Runner> {
        config.validate()?;
        let model = MoETarget::new(config.model.clone())?;
        let table = match &config.cost_table {
            Some(path) => {
                let table = CostTable::load(path)?;
                let want = profile_config_hash(
                    model.config(),
                    &config.tree,
                    &config.cost,
                    mean_alpha(&config),
                    config.noise_scale,
                );
                if table.meta.config_hash != want {
                    return Err(Error::Config(format!(
                        "cost table {} was profiled under a different configuration \
                         (hash {}, this run needs {})",
                        path.display(),
                        table.meta.config_hash,
                        want
                    )));
                }
                table
            }
            None => profile_table(&config, profile_iters)?,
        };
        let full_tree = 1 + config.tree.steps * config.tree.topk;
        let budget = full_tree.min(config.tree.draft_tokens + 1);
        if table.per_k.len() < budget {
            return Err(Error::Invariant(format!(
                "cost table covers {} prefix sizes but the run needs {budget}",
                table.per_k.len()
            )));
        }
        let noise_seed = hash_words(config.seed, &[TAG_NOISE]);
        Ok(Runner { config, model, table, noise_seed, budget })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &MoETarget {
        &self.model
    }

    pub fn table(&self) -> &CostTable {
        &self.table
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Deterministic synthetic prompt `prompt_index` of this run.
    pub fn prompt_tokens(&self, prompt_index: usize) -> Vec<Token> {
        let mut rng = Rng::derived(self.config.prompts.seed, &[TAG_PROMPT, prompt_index as u64]);
        (0..self.config.prompts.length)
            .map(|_| rng.next_below(self.config.model.vocab_size as u64) as Token)
            .collect()
    }

    /// Draft quality assigned to prompt `prompt_index` (cycles the alpha list).
    pub fn prompt_alpha(&self, prompt_index: usize) -> f64 {
        self.config.alphas[prompt_index % self.config.alphas.len()]
    }

    /// Decode one prompt under one policy.
    ///
    /// Returns the generated tokens (clipped to max_new_tokens; the last
    /// iteration may commit past the limit and its row reports the full
    /// commit) and the per-iteration rows.
    pub fn decode(
        &self,
        policy: PolicySpec,
        prompt: &[Token],
        alpha: f64,
        rng: &mut Rng,
    ) -> Result<(Vec<Token>, Vec<IterationStats>)> {
        if prompt.is_empty() {
            return Err(Error::InvalidInput("decode requires a non-empty prompt".into()));
        }
        let temp = self.config.temperature;
        let drafter = Drafter::new(&self.model, alpha, self.noise_seed, self.config.noise_scale)?;
        let ar_union = self.config.model.num_layers * self.config.model.active_experts;
        let mut ctx = prompt.to_vec();
        let mut generated: Vec<Token> = Vec::new();
        let mut rows = Vec::new();
        while generated.len() < self.config.max_new_tokens {
            let step = rows.len();
            let next = self.model.target_dist(&ctx, temp)?;
            let root = if temp == 0.0 { next.argmax() } else { next.sample(rng) } as Token;
            if policy == PolicySpec::Autoregressive {
                ctx.push(root);
                generated.push(root);
                rows.push(IterationStats {
                    step,
                    k_star: 0,
                    verified_tokens: 0,
                    accepted_len: 0,
                    committed: 1,
                    union_size_total: ar_union,
                    sim_latency: self.table.ar_cost,
                    utility: 1.0,
                });
                continue;
            }
            let tree =
                build_tree(&drafter, root, &ctx, self.config.tree.steps, self.config.tree.topk)?;
            let budget = self.budget.min(tree.len());
            let mut estimate = estimated_accept_prefix_sums(&tree);
            estimate.truncate(budget);
            let decision = match policy {
                PolicySpec::Evict => select_prefix_evict(&estimate, &self.table)?,
                PolicySpec::Fixed(k) => select_prefix_fixed(k, budget)?,
                PolicySpec::Coverage(rho) => select_prefix_coverage(&estimate, rho)?,
                PolicySpec::DepthConf(t) => select_depth_confidence(&tree, t)?,
                PolicySpec::Autoregressive => unreachable!("handled above"),
            };
            let k_star = decision.k_star.clamp(1, budget);
            let prefix = prune_topk(&tree, k_star)?;
            let verdict = if temp == 0.0 {
                verify_greedy(&prefix, &self.model)?
            } else {
                verify_sampling(&prefix, &self.model, temp, rng)?
            };
            ctx.extend_from_slice(&verdict.committed_tokens);
            generated.extend_from_slice(&verdict.committed_tokens);
            rows.push(IterationStats {
                step,
                k_star,
                verified_tokens: k_star,
                accepted_len: verdict.accepted_len,
                committed: verdict.committed_tokens.len(),
                union_size_total: verdict.activation.union_size_total,
                sim_latency: simulate_verify_cost(
                    &self.config.cost,
                    k_star,
                    &verdict.activation,
                    self.config.tree.steps,
                ),
                utility: self.table.ar_cost * estimate.prefix_sums[k_star - 1]
                    / self.table.per_k[k_star - 1],
            });
        }
        generated.truncate(self.config.max_new_tokens);
        Ok((generated, rows))
    }

    /// Decode every configured prompt under `policy`. Prompt tokens, alphas,
    /// and per-prompt random streams depend only on the config, so calling
    /// this for several policies yields paired comparisons.
    pub fn run_policy(&self, policy: PolicySpec) -> Result<PolicyResult> {
        let mut prompts = Vec::with_capacity(self.config.prompts.count);
        for idx in 0..self.config.prompts.count {
            let prompt = self.prompt_tokens(idx);
            let alpha = self.prompt_alpha(idx);
            let mut rng = Rng::derived(self.config.seed, &[TAG_DECODE, idx as u64]);
            let (tokens, iterations) = self.decode(policy, &prompt, alpha, &mut rng)?;
            prompts.push(PromptRun { prompt_index: idx, alpha, tokens, iterations });
        }
        Ok(PolicyResult { policy, prompts })
    }

    /// Run every policy over the shared prompt set and aggregate.
    pub fn run_benchmark(&self, policies: &[PolicySpec]) -> Result<BenchmarkOutput> {
        if policies.is_empty() {
            return Err(Error::Config("run_benchmark needs at least one policy".into()));
        }
        let mut results = Vec::with_capacity(policies.len());
        let mut aggregates = BTreeMap::new();
        for &policy in policies {
            let key = policy.to_string();
            if aggregates.contains_key(&key) {
                return Err(Error::Config(format!("duplicate policy '{key}' in comparison")));
            }
            let result = self.run_policy(policy)?;
            let aggregate = PolicyAggregate::from_rows(result.all_rows(), self.table.ar_cost)?;
            aggregates.insert(key, aggregate);
            results.push(result);
        }
        let report = Report {
            ar_cost: self.table.ar_cost,
            profile: self.table.meta.clone(),
            policies: aggregates,
        };
        Ok(BenchmarkOutput { report, results })
    }

    /// Fixed-k benchmark across a grid of prefix sizes — the memory-bandwidth
    /// picture: how the expert footprint and latency scale with tree size.
    pub fn sweep_tree_size(&self, k_grid: &[usize]) -> Result<Vec<SweepRow>> {
        if k_grid.is_empty() {
            return Err(Error::InvalidInput("sweep needs a non-empty k grid".into()));
        }
        for &k in k_grid {
            if k == 0 || k > self.budget {
                return Err(Error::InvalidInput(format!(
                    "sweep k {k} outside the feasible range 1..={}",
                    self.budget
                )));
            }
        }
        let mut out = Vec::with_capacity(k_grid.len());
        for &k in k_grid {
            let result = self.run_policy(PolicySpec::Fixed(k))?;
            let mut n = 0usize;
            let mut union = 0.0;
            let mut latency = 0.0;
            for row in result.all_rows() {
                n += 1;
                union += row.union_size_total as f64;
                latency += row.sim_latency;
            }
            out.push(SweepRow {
                k,
                mean_union_size: union / n as f64,
                mean_sim_latency: latency / n as f64,
            });
        }
        Ok(out)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Derive a per-policy output path: `report.csv` + `fixed_32` →
/// `report.fixed_32.csv`; extension-less paths get the tag appended.
pub fn tagged_path(base: &Path, tag: &str) -> PathBuf {
    match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => base.with_extension(format!("{tag}.{ext}")),
        None => base.with_extension(tag),
    }
}

/// One named result from the self-check suite.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn small_oracle_model(seed: u64) -> Result<MoETarget> {
    MoETarget::new(MoEConfig {
        vocab_size: 16,
        num_layers: 2,
        num_experts: 8,
        active_experts: 2,
        hidden_dim: 8,
        context_order: 2,
        seed,
    })
}

/// Cross-validate the estimator and verifier against their independent
/// oracles on a small model. Each check reruns mathematics that the unit
/// tests pin down at larger sizes; this suite exists so a binary install can
/// vouch for itself without the test harness.
pub fn run_oracle_suite(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut checks = Vec::new();

    // Closed-form expected accepted length vs exhaustive enumeration.
    {
        let model = small_oracle_model(seed ^ 0x51)?;
        let drafter = Drafter::new(&model, 0.7, hash_words(seed, &[31]), 2.0)?;
        let mut rng = Rng::derived(seed, &[32]);
        let mut max_err = 0.0f64;
        let mut compared = 0usize;
        for _ in 0..40 {
            let ctx: Vec<Token> = (0..6).map(|_| rng.next_below(16) as Token).collect();
            let root = model.target_dist(&ctx, 1.0)?.sample(&mut rng) as Token;
            let tree = build_tree(&drafter, root, &ctx, 3, 4)?;
            let probs = node_target_probs(&tree, &model, 1.0)?;
            for k in [1, 5, 9, tree.len()] {
                let prefix = prune_topk(&tree, k)?;
                let exact = exact_expected_accept_len(&prefix, &probs)?;
                let enumerated = enumerate_accept_oracle(&prefix, &probs)?;
                max_err = max_err.max((exact - enumerated).abs());
                compared += 1;
            }
        }
        checks.push(OracleCheck {
            name: "closed-form-vs-enumeration",
            pass: max_err <= 1e-9,
            detail: format!("max |closed form - enumeration| = {max_err:.3e} over {compared} prefixes"),
        });
    }

    // Closed form vs Monte-Carlo replay of the sampling verifier.
    {
        let model = small_oracle_model(seed ^ 0x52)?;
        let drafter = Drafter::new(&model, 0.6, hash_words(seed, &[41]), 2.0)?;
        let mut rng = Rng::derived(seed, &[42]);
        let mut pass = true;
        let mut worst_sigma = 0.0f64;
        for _ in 0..5 {
            let ctx: Vec<Token> = (0..6).map(|_| rng.next_below(16) as Token).collect();
            let root = model.target_dist(&ctx, 1.0)?.sample(&mut rng) as Token;
            let tree = build_tree(&drafter, root, &ctx, 3, 4)?;
            let prefix = prune_topk(&tree, 7)?;
            let probs = node_target_probs(&tree, &model, 1.0)?;
            let exact = exact_expected_accept_len(&prefix, &probs)?;
            let trials = 20_000usize;
            let (mean, stderr) = mc_accept_oracle(&prefix, &model, 1.0, &mut rng, trials)?;
            let diff = (mean - exact).abs();
            // Rule-of-three slack: acceptance events rarer than ~1/trials can
            // go unobserved, collapsing the sample stderr to zero.
            if diff > 3.0 * stderr + 5.0 / trials as f64 {
                pass = false;
            }
            if stderr > 0.0 {
                worst_sigma = worst_sigma.max(diff / stderr);
            }
        }
        checks.push(OracleCheck {
            name: "closed-form-vs-monte-carlo",
            pass,
            detail: format!(
                "worst |mean - exact| = {worst_sigma:.2} sigma over 5 prefixes x 20000 trials"
            ),
        });
    }

    // Committed-token distribution equals the target distribution.
    {
        let model = MoETarget::new(MoEConfig {
            vocab_size: 6,
            num_layers: 2,
            num_experts: 8,
            active_experts: 2,
            hidden_dim: 8,
            context_order: 2,
            seed: seed ^ 0x53,
        })?;
        let tree = DraftTree::from_edges(0, vec![1, 2], &[(0, 1, 0.4), (0, 2, 0.3), (0, 3, 0.2)])?;
        let prefix = prune_topk(&tree, 4)?;
        let target = model.target_dist(&tree.node_context(0), 1.0)?;
        let trials = 30_000usize;
        let mut counts = vec![0usize; 6];
        let mut rng = Rng::derived(seed, &[43]);
        for _ in 0..trials {
            let res = verify_sampling(&prefix, &model, 1.0, &mut rng)?;
            counts[res.committed_tokens[1] as usize] += 1;
        }
        let empirical =
            Distribution::new(counts.iter().map(|&c| c as f64 / trials as f64).collect())?;
        let tv = empirical.tv_distance(&target)?;
        checks.push(OracleCheck {
            name: "sampling-losslessness",
            pass: tv < 0.03,
            detail: format!("first-committed-token TV vs target = {tv:.4} at {trials} trials"),
        });
    }

    // Greedy tree verification reproduces token-by-token greedy decoding.
    {
        let model = MoETarget::new(MoEConfig::default())?;
        let drafter = Drafter::new(&model, 0.5, hash_words(seed, &[51]), 2.0)?;
        let mut rng = Rng::derived(seed, &[52]);
        let mut pass = true;
        for _ in 0..20 {
            let ctx: Vec<Token> = (0..8).map(|_| rng.next_below(64) as Token).collect();
            let root = model.target_dist(&ctx, 0.0)?.argmax() as Token;
            let tree = build_tree(&drafter, root, &ctx, 3, 4)?;
            let prefix = prune_topk(&tree, 9)?;
            let committed = verify_greedy(&prefix, &model)?.committed_tokens;
            let mut ref_ctx = ctx.clone();
            let mut reference = Vec::with_capacity(committed.len());
            for _ in 0..committed.len() {
                let tok = model.target_dist(&ref_ctx, 0.0)?.argmax() as Token;
                reference.push(tok);
                ref_ctx.push(tok);
            }
            if committed != reference {
                pass = false;
            }
        }
        checks.push(OracleCheck {
            name: "greedy-equals-autoregressive",
            pass,
            detail: "tree-verified greedy vs token-by-token greedy on 20 contexts".into(),
        });
    }

    Ok(checks)
}
