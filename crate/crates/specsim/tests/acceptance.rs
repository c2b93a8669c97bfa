//! Acceptance suite: ten go/no-go checks, one test per criterion.
//!
//! Every tolerance is pinned in the assertion itself. Each test prints a
//! one-line summary (visible with `--nocapture`); wall-clock runtimes are
//! informational only and never asserted on.

use std::process::Command;
use std::time::Instant;

use specsim::config::{PromptConfig, RunConfig};
use specsim::cost::{CostParams, CostTable, ProfileMeta};
use specsim::dist::Distribution;
use specsim::drafter::Drafter;
use specsim::estimator::{
    enumerate_accept_oracle, estimated_accept_prefix_sums, exact_expected_accept_len,
    node_target_probs, AcceptEstimate,
};
use specsim::harness::{profile_table, PolicyResult, Runner};
use specsim::moe::{MoEConfig, MoETarget, Token};
use specsim::policy::{select_depth_confidence, select_prefix_coverage, select_prefix_evict, PolicySpec};
use specsim::rng::Rng;
use specsim::tree::{build_tree, prune_topk, DraftTree};
use specsim::verifier::verify_sampling;

// ---------------------------------------------------------------- helpers --

/// Random tree of 2..=max_nodes nodes with distinct tokens and draft probs
/// in (0, 1]; shaped by attaching each new node to a uniformly chosen
/// existing one.
fn random_tree(rng: &mut Rng, max_nodes: usize) -> DraftTree {
    let n = 2 + rng.next_below((max_nodes - 1) as u64) as usize;
    let mut edges = Vec::with_capacity(n - 1);
    for id in 1..n {
        let parent = rng.next_below(id as u64) as usize;
        let q = 0.05 + 0.9 * rng.next_f64();
        edges.push((parent, id as Token, q));
    }
    DraftTree::from_edges(0, vec![1, 2, 3], &edges).unwrap()
}

/// Random per-node conditional target probabilities: every sibling group
/// sums to strictly less than 1, as a renormalizing verifier requires.
fn random_sibling_probs(tree: &DraftTree, rng: &mut Rng) -> Vec<f64> {
    let mut probs = vec![0.0; tree.len()];
    probs[0] = 1.0;
    for id in 0..tree.len() {
        let kids = tree.children_of(id);
        if kids.is_empty() {
            continue;
        }
        let raw: Vec<f64> = kids.iter().map(|_| 0.05 + rng.next_f64()).collect();
        let total: f64 = raw.iter().sum();
        let mass = 0.1 + 0.85 * rng.next_f64();
        for (&kid, r) in kids.iter().zip(&raw) {
            probs[kid] = mass * r / total;
        }
    }
    probs
}

/// Exhaustive maximum cumulative score over ancestor-closed k-node subsets.
fn best_ancestor_closed_score(tree: &DraftTree, k: usize) -> f64 {
    let n = tree.len();
    assert!(n <= 16, "bitmask enumerator is for small trees");
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << n) {
        if mask & 1 == 0 || mask.count_ones() as usize != k {
            continue;
        }
        let mut closed = true;
        for id in 1..n {
            if mask >> id & 1 == 1 {
                let parent = tree.node(id).parent.unwrap();
                if mask >> parent & 1 == 0 {
                    closed = false;
                    break;
                }
            }
        }
        if !closed {
            continue;
        }
        let score: f64 =
            (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| tree.node(i).cum_score).sum();
        if score > best {
            best = score;
        }
    }
    best
}

fn small_model(seed: u64) -> MoETarget {
    MoETarget::new(MoEConfig {
        vocab_size: 6,
        num_layers: 2,
        num_experts: 8,
        active_experts: 2,
        hidden_dim: 8,
        context_order: 2,
        seed,
    })
    .unwrap()
}

fn tpot_for_alpha_at_most(result: &PolicyResult, max_alpha: f64) -> f64 {
    let mut latency = 0.0;
    let mut committed = 0usize;
    for prompt in &result.prompts {
        if prompt.alpha <= max_alpha {
            for row in &prompt.iterations {
                latency += row.sim_latency;
                committed += row.committed;
            }
        }
    }
    assert!(committed > 0, "alpha subset is empty");
    latency / committed as f64
}

// -------------------------------------------------------------- criteria --

/// Closed-form expected accepted length equals brute-force enumeration over
/// accept/reject outcomes, within 1e-9, on 500 random trees of <= 12 nodes
/// at every feasible prefix size.
#[test]
fn criterion_01_exact_expectation_matches_enumeration() {
    let t0 = Instant::now();
    let mut rng = Rng::new(101);
    let mut max_err = 0.0f64;
    let mut prefixes = 0usize;
    for _ in 0..500 {
        let tree = random_tree(&mut rng, 12);
        let probs = random_sibling_probs(&tree, &mut rng);
        for k in 1..=tree.len() {
            let prefix = prune_topk(&tree, k).unwrap();
            let exact = exact_expected_accept_len(&prefix, &probs).unwrap();
            let enumerated = enumerate_accept_oracle(&prefix, &probs).unwrap();
            let err = (exact - enumerated).abs();
            assert!(err <= 1e-9, "tree of {} nodes, k={k}: |{exact} - {enumerated}| = {err}", tree.len());
            max_err = max_err.max(err);
            prefixes += 1;
        }
    }
    println!(
        "criterion 01 pass: max |closed form - enumeration| = {max_err:.3e} over {prefixes} prefixes ({:.1?})",
        t0.elapsed()
    );
}

/// The sampling verifier is lossless: over 2e5 trials per prefix shape, the
/// empirical first-committed-token distribution is within TV 0.01 of the
/// exact target distribution.
#[test]
fn criterion_02_sampling_verifier_is_lossless() {
    let t0 = Instant::now();
    let model = small_model(2025);
    let trials = 200_000usize;
    let mut worst_tv = 0.0f64;
    for children in [2usize, 3, 4] {
        let edges: Vec<(usize, Token, f64)> = (0..children)
            .map(|c| (0usize, (c + 1) as Token, 0.45 / (c + 1) as f64))
            .collect();
        let tree = DraftTree::from_edges(0, vec![3, 1], &edges).unwrap();
        let prefix = prune_topk(&tree, tree.len()).unwrap();
        let target = model.target_dist(&tree.node_context(0), 1.0).unwrap();
        let mut counts = vec![0usize; 6];
        let mut rng = Rng::derived(202, &[children as u64]);
        for _ in 0..trials {
            let res = verify_sampling(&prefix, &model, 1.0, &mut rng).unwrap();
            counts[res.committed_tokens[1] as usize] += 1;
        }
        let empirical =
            Distribution::new(counts.iter().map(|&c| c as f64 / trials as f64).collect()).unwrap();
        let tv = empirical.tv_distance(&target).unwrap();
        assert!(tv < 0.01, "{children}-child prefix: TV = {tv}");
        worst_tv = worst_tv.max(tv);
    }
    println!(
        "criterion 02 pass: worst first-token TV = {worst_tv:.4} over 3 prefix shapes x {trials} trials ({:.1?})",
        t0.elapsed()
    );
}

/// At temperature 0 every policy commits exactly the autoregressive greedy
/// token stream, for 50 prompts.
#[test]
fn criterion_03_greedy_decoding_is_policy_invariant() {
    let t0 = Instant::now();
    let cfg = RunConfig {
        temperature: 0.0,
        prompts: PromptConfig { count: 50, length: 12, seed: 303 },
        max_new_tokens: 32,
        ..RunConfig::default()
    };
    let runner = Runner::with_profile_iters(cfg, 60).unwrap();
    let reference = runner.run_policy(PolicySpec::Autoregressive).unwrap();
    for policy in [
        PolicySpec::Evict,
        PolicySpec::Fixed(32),
        PolicySpec::Coverage(0.7),
        PolicySpec::DepthConf(0.5),
    ] {
        let result = runner.run_policy(policy).unwrap();
        for (want, got) in reference.prompts.iter().zip(&result.prompts) {
            assert_eq!(
                want.tokens, got.tokens,
                "policy {policy} diverged from greedy on prompt {}",
                want.prompt_index
            );
        }
    }
    println!(
        "criterion 03 pass: 4 speculative policies x 50 prompts x 32 tokens identical to greedy ({:.1?})",
        t0.elapsed()
    );
}

/// Top-k pruning by cumulative score is optimal: its kept-score sum equals
/// the exhaustive maximum over ancestor-closed k-subsets for 1000 random
/// trees of <= 12 nodes at every feasible k.
#[test]
fn criterion_04_pruning_matches_exhaustive_optimum() {
    let t0 = Instant::now();
    let mut rng = Rng::new(404);
    let mut checked = 0usize;
    for _ in 0..1000 {
        let tree = random_tree(&mut rng, 12);
        for k in 1..=tree.len() {
            let prefix = prune_topk(&tree, k).unwrap();
            let kept: f64 = prefix.kept_ids().iter().map(|&id| tree.node(id).cum_score).sum();
            let best = best_ancestor_closed_score(&tree, k);
            assert!(
                kept >= best - 1e-9 && (kept - best).abs() <= 1e-9,
                "tree of {} nodes, k={k}: pruned {kept} vs exhaustive {best}",
                tree.len()
            );
            checked += 1;
        }
    }
    println!(
        "criterion 04 pass: pruning equals the exhaustive optimum on {checked} (tree, k) cases ({:.1?})",
        t0.elapsed()
    );
}

/// The utility argmax matches a naive loop oracle on 1e4 random (S, C)
/// pairs and is invariant to positive rescaling of either input.
#[test]
fn criterion_05_utility_argmax_matches_naive_oracle() {
    let t0 = Instant::now();
    let mut rng = Rng::new(505);
    let meta = ProfileMeta { num_profile_iters: 1, seed: 0, config_hash: "acceptance".into() };
    for _ in 0..10_000 {
        let n = 1 + rng.next_below(40) as usize;
        let mut sums = vec![1.0];
        for _ in 1..n {
            sums.push(sums.last().unwrap() + rng.next_f64());
        }
        let per_k: Vec<f64> = (0..n).map(|_| 0.5 + 30.0 * rng.next_f64()).collect();
        let estimate = AcceptEstimate { prefix_sums: sums.clone(), exact_value: None };
        let table = CostTable { per_k: per_k.clone(), ar_cost: 7.0, meta: meta.clone() };
        let got = select_prefix_evict(&estimate, &table).unwrap().k_star;

        let mut want = 1;
        for k in 1..=n {
            if sums[k - 1] / per_k[k - 1] > sums[want - 1] / per_k[want - 1] {
                want = k;
            }
        }
        assert_eq!(got, want, "argmax mismatch on {n} prefix sizes");

        for &lambda in &[0.0625, 3.0, 512.0] {
            let scaled_cost = CostTable {
                per_k: per_k.iter().map(|c| c * lambda).collect(),
                ar_cost: 7.0,
                meta: meta.clone(),
            };
            assert_eq!(select_prefix_evict(&estimate, &scaled_cost).unwrap().k_star, want);
            let scaled_est = AcceptEstimate {
                prefix_sums: sums.iter().map(|s| s * lambda).collect(),
                exact_value: None,
            };
            assert_eq!(select_prefix_evict(&scaled_est, &table).unwrap().k_star, want);
        }
    }
    println!(
        "criterion 05 pass: naive argmax agreement + scale invariance on 10000 (S, C) pairs ({:.1?})",
        t0.elapsed()
    );
}

/// With a perfectly calibrated drafter (alpha = 1) at temperature 1, the
/// pre-verification estimate equals the exact expectation within 1e-9 for
/// every prefix of 100 random trees.
#[test]
fn criterion_06_calibrated_estimate_equals_exact_value() {
    let t0 = Instant::now();
    let model = MoETarget::new(MoEConfig::default()).unwrap();
    let drafter = Drafter::new(&model, 1.0, 606, 2.0).unwrap();
    let mut rng = Rng::new(607);
    let mut max_err = 0.0f64;
    for _ in 0..100 {
        let ctx_len = 6 + rng.next_below(5) as usize;
        let ctx: Vec<Token> = (0..ctx_len).map(|_| rng.next_below(64) as Token).collect();
        let root = model.target_dist(&ctx, 1.0).unwrap().sample(&mut rng) as Token;
        let tree = build_tree(&drafter, root, &ctx, 3, 4).unwrap();
        let estimate = estimated_accept_prefix_sums(&tree);
        let probs = node_target_probs(&tree, &model, 1.0).unwrap();
        for k in 1..=tree.len() {
            let prefix = prune_topk(&tree, k).unwrap();
            let exact = exact_expected_accept_len(&prefix, &probs).unwrap();
            let err = (estimate.prefix_sums[k - 1] - exact).abs();
            assert!(err <= 1e-9, "k={k}: estimate {} vs exact {exact}", estimate.prefix_sums[k - 1]);
            max_err = max_err.max(err);
        }
    }
    println!(
        "criterion 06 pass: max |estimate - exact| = {max_err:.3e} at alpha=1 over 100 trees ({:.1?})",
        t0.elapsed()
    );
}

/// Monotonicity: expert unions and simulated costs never shrink as the
/// verified prefix grows; coverage prefix sizes never shrink in rho; the
/// confidence-gated depth never grows in its threshold.
#[test]
fn criterion_07_monotonicity_suite() {
    let t0 = Instant::now();
    let model = MoETarget::new(MoEConfig::default()).unwrap();
    let drafter = Drafter::new(&model, 0.6, 707, 2.0).unwrap();
    let params = CostParams::default();
    let mut rng = Rng::new(708);

    // (a) union size and simulated verify cost, k-by-k on 50 real trees.
    for _ in 0..50 {
        let ctx: Vec<Token> = (0..8).map(|_| rng.next_below(64) as Token).collect();
        let root = model.target_dist(&ctx, 1.0).unwrap().sample(&mut rng) as Token;
        let tree = build_tree(&drafter, root, &ctx, 3, 4).unwrap();
        let mut prev_union = 0usize;
        let mut prev_cost = 0.0f64;
        for k in 1..=tree.len() {
            let prefix = prune_topk(&tree, k).unwrap();
            let contexts = prefix.kept_contexts();
            let refs: Vec<&[Token]> = contexts.iter().map(|c| c.as_slice()).collect();
            let activation = model.expert_union(&refs).unwrap();
            let cost = specsim::cost::simulate_verify_cost(&params, k, &activation, 3);
            assert!(activation.union_size_total >= prev_union, "union shrank at k={k}");
            assert!(cost >= prev_cost, "cost shrank at k={k}");
            prev_union = activation.union_size_total;
            prev_cost = cost;
        }
    }

    // (b) a profiled cost table is monotone entry-wise.
    let table = profile_table(&RunConfig::default(), 50).unwrap();
    for w in table.per_k.windows(2) {
        assert!(w[1] >= w[0], "profiled table not monotone: {} then {}", w[0], w[1]);
    }

    // (c) coverage prefix size is non-decreasing in rho...
    for _ in 0..100 {
        let ctx: Vec<Token> = (0..8).map(|_| rng.next_below(64) as Token).collect();
        let root = model.target_dist(&ctx, 1.0).unwrap().sample(&mut rng) as Token;
        let tree = build_tree(&drafter, root, &ctx, 3, 4).unwrap();
        let estimate = estimated_accept_prefix_sums(&tree);
        let mut prev_k = 0usize;
        for rho in [0.05, 0.2, 0.4, 0.6, 0.8, 0.95, 1.0] {
            let k = select_prefix_coverage(&estimate, rho).unwrap().k_star;
            assert!(k >= prev_k, "coverage prefix shrank at rho={rho}");
            prev_k = k;
        }
        // ...(d) and the confidence-gated node count never grows in the
        // threshold on the same trees.
        let mut prev_nodes = usize::MAX;
        for threshold in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
            let k = select_depth_confidence(&tree, threshold).unwrap().k_star;
            assert!(k <= prev_nodes, "confidence depth grew at threshold={threshold}");
            prev_nodes = k;
        }
    }
    println!("criterion 07 pass: union/cost/coverage/depth monotonicity all hold ({:.1?})", t0.elapsed());
}

/// Paired comparison, adaptive vs full-budget verification, mixed draft
/// quality: the adaptive policy verifies strictly fewer tokens, touches
/// strictly fewer experts, runs iterations faster, and never pays more per
/// token — with at least 5% lower TPOT on the hard (alpha <= 0.5) prompts —
/// at the price of a bounded MAT drop.
#[test]
fn criterion_08_adaptive_beats_full_budget_on_paired_runs() {
    let t0 = Instant::now();
    let cfg = RunConfig {
        seed: 808,
        prompts: PromptConfig { count: 60, length: 16, seed: 809 },
        max_new_tokens: 256,
        ..RunConfig::default()
    };
    assert_eq!(cfg.alphas, vec![0.3, 0.6, 0.95]);
    let runner = Runner::new(cfg).unwrap();
    let out = runner.run_benchmark(&[PolicySpec::Fixed(32), PolicySpec::Evict]).unwrap();
    let fixed = &out.report.policies["fixed:32"];
    let evict = &out.report.policies["evict"];

    assert!(
        evict.mean_verified_tokens < fixed.mean_verified_tokens,
        "verified tokens: evict {} vs fixed {}",
        evict.mean_verified_tokens,
        fixed.mean_verified_tokens
    );
    assert!(
        evict.mean_union_size < fixed.mean_union_size,
        "expert union: evict {} vs fixed {}",
        evict.mean_union_size,
        fixed.mean_union_size
    );
    assert!(
        evict.mean_iteration_latency < fixed.mean_iteration_latency,
        "iteration latency: evict {} vs fixed {}",
        evict.mean_iteration_latency,
        fixed.mean_iteration_latency
    );
    assert!(evict.tpot <= fixed.tpot, "TPOT: evict {} vs fixed {}", evict.tpot, fixed.tpot);
    assert!(evict.mat <= fixed.mat, "MAT: evict {} vs fixed {}", evict.mat, fixed.mat);

    let hard_fixed = tpot_for_alpha_at_most(&out.results[0], 0.5);
    let hard_evict = tpot_for_alpha_at_most(&out.results[1], 0.5);
    assert!(
        hard_evict <= 0.95 * hard_fixed,
        "hard-prompt TPOT improvement below 5%: evict {hard_evict} vs fixed {hard_fixed}"
    );

    println!(
        "criterion 08 pass: verified {:.2}<{:.2}, union {:.1}<{:.1}, latency {:.1}<{:.1}, \
         TPOT {:.2}<={:.2} (hard-prompt {:.2} vs {:.2}), MAT {:.2}<={:.2} ({:.1?})",
        evict.mean_verified_tokens,
        fixed.mean_verified_tokens,
        evict.mean_union_size,
        fixed.mean_union_size,
        evict.mean_iteration_latency,
        fixed.mean_iteration_latency,
        evict.tpot,
        fixed.tpot,
        hard_evict,
        hard_fixed,
        evict.mat,
        fixed.mat,
        t0.elapsed()
    );
}

/// Offline profiling is stable: 10-iteration and 1000-iteration tables agree
/// entry-wise within 20%, and identical seeds give bit-identical tables.
#[test]
fn criterion_09_profiling_is_stable() {
    let t0 = Instant::now();
    let cfg = RunConfig::default();
    let coarse = profile_table(&cfg, 10).unwrap();
    let fine = profile_table(&cfg, 1000).unwrap();
    assert_eq!(coarse.per_k.len(), fine.per_k.len());
    let mut worst = 0.0f64;
    for (k, (a, b)) in coarse.per_k.iter().zip(&fine.per_k).enumerate() {
        let rel = (a - b).abs() / b;
        assert!(rel <= 0.20, "per_k[{k}]: {a} vs {b} differ by {:.1}%", rel * 100.0);
        worst = worst.max(rel);
    }
    assert!((coarse.ar_cost - fine.ar_cost).abs() < 1e-12);

    let again = profile_table(&cfg, 10).unwrap();
    assert_eq!(coarse.to_json_string(), again.to_json_string());
    println!(
        "criterion 09 pass: 10 vs 1000 iteration tables within {:.2}% entry-wise; replays bit-identical ({:.1?})",
        worst * 100.0,
        t0.elapsed()
    );
}

/// The CLI is deterministic end to end: repeating any subcommand with the
/// same seed produces byte-identical CSV and JSON artifacts.
#[test]
fn criterion_10_cli_outputs_are_byte_identical() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    std::fs::write(
        &cfg_path,
        r#"{
  "seed": 33,
  "prompts": {"count": 6, "length": 8, "seed": 2},
  "max_new_tokens": 24
}
"#,
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

    // profile: a table per replay, bit-identical.
    for tag in ["a", "b"] {
        run_cli(&["profile", "--config", cfg, "--iters", "40", "--cost-table", &path(&format!("table_{tag}.json"))]);
    }
    assert_eq!(read("table_a.json"), read("table_b.json"), "profile artifacts differ");
    let table = path("table_a.json");

    // run: CSV + JSON per replay.
    for tag in ["a", "b"] {
        run_cli(&[
            "run", "--config", cfg, "--policy", "evict", "--cost-table", &table,
            "--out-csv", &path(&format!("run_{tag}.csv")),
            "--out-json", &path(&format!("run_{tag}.json")),
        ]);
    }
    assert_eq!(read("run_a.csv"), read("run_b.csv"), "run CSVs differ");
    assert_eq!(read("run_a.json"), read("run_b.json"), "run reports differ");

    // compare: per-policy CSVs + one report per replay.
    for tag in ["a", "b"] {
        run_cli(&[
            "compare", "--config", cfg, "--policy", "fixed:12", "--policy", "evict",
            "--cost-table", &table,
            "--out-csv", &path(&format!("cmp_{tag}.csv")),
            "--out-json", &path(&format!("cmp_{tag}.json")),
        ]);
    }
    for name in ["fixed_12", "evict"] {
        assert_eq!(read(&format!("cmp_a.{name}.csv")), read(&format!("cmp_b.{name}.csv")));
    }
    assert_eq!(read("cmp_a.json"), read("cmp_b.json"), "compare reports differ");

    // sweep.
    for tag in ["a", "b"] {
        run_cli(&[
            "sweep", "--config", cfg, "--k-grid", "1,4,8", "--cost-table", &table,
            "--out-csv", &path(&format!("sweep_{tag}.csv")),
        ]);
    }
    assert_eq!(read("sweep_a.csv"), read("sweep_b.csv"), "sweep CSVs differ");

    // oracle: self-checks pass through the binary too.
    let stdout = run_cli(&["oracle", "--seed", "3"]);
    assert!(stdout.contains("all 4 oracle checks passed"), "oracle output: {stdout}");

    println!("criterion 10 pass: profile/run/compare/sweep byte-identical across replays; oracle green ({:.1?})", t0.elapsed());
}

fn run_cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_specsim")).args(args).output().expect("CLI spawns");
    assert!(
        out.status.success(),
        "CLI {:?} failed with {:?}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}
