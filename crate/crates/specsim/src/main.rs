//! Command-line front end: profile, run, compare, sweep, oracle.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use specsim::config::{load_config, RunConfig};
use specsim::error::{Error, Result};
use specsim::harness::{
    profile_table, run_oracle_suite, sweep_to_csv, tagged_path, write_text, Report, Runner,
    DEFAULT_PROFILE_ITERS,
};
use specsim::policy::PolicySpec;

#[derive(Parser)]
#[command(name = "specsim", version, about = "Deterministic speculative-decoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Profile a verification cost table and write it as JSON.
    Profile {
        #[command(flatten)]
        common: CommonOpts,
        /// Profiling iterations.
        #[arg(long, default_value_t = DEFAULT_PROFILE_ITERS)]
        iters: usize,
        /// Where to write the table.
        #[arg(long, value_name = "PATH")]
        cost_table: PathBuf,
    },
    /// Decode the prompt set under one policy and report.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// evict | fixed:<k> | coverage:<rho> | depthconf:<t> | autoregressive.
        #[arg(long)]
        policy: Option<PolicySpec>,
        /// Per-iteration rows land here.
        #[arg(long, value_name = "PATH")]
        out_csv: Option<PathBuf>,
        /// Summary report lands here.
        #[arg(long, value_name = "PATH")]
        out_json: Option<PathBuf>,
        /// Load this pre-profiled cost table instead of profiling.
        #[arg(long, value_name = "PATH")]
        cost_table: Option<PathBuf>,
    },
    /// Paired multi-policy comparison over a shared prompt set.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        /// Policies to compare (repeat the flag). Default: autoregressive,
        /// fixed:<draft_tokens>, evict.
        #[arg(long = "policy")]
        policies: Vec<PolicySpec>,
        /// Base CSV path; each policy writes to it with its tag inserted.
        #[arg(long, value_name = "PATH")]
        out_csv: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out_json: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        cost_table: Option<PathBuf>,
    },
    /// Fixed-k sweep: expert footprint and latency versus tree size.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated prefix sizes.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        k_grid: Vec<usize>,
        #[arg(long, value_name = "PATH")]
        out_csv: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        cost_table: Option<PathBuf>,
    },
    /// Cross-check estimator and verifier against independent oracles.
    Oracle {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load(common: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Profile { common, iters, cost_table } => {
            let cfg = load(&common)?;
            let table = profile_table(&cfg, iters)?;
            table.save(&cost_table)?;
            println!(
                "wrote cost table {} ({} prefix sizes, ar_cost {}, {} iters, seed {})",
                cost_table.display(),
                table.per_k.len(),
                table.ar_cost,
                table.meta.num_profile_iters,
                table.meta.seed
            );
            Ok(())
        }
        Command::Run { common, policy, out_csv, out_json, cost_table } => {
            let mut cfg = load(&common)?;
            if let Some(p) = policy {
                cfg.policy = p;
            }
            if let Some(t) = cost_table {
                cfg.cost_table = Some(t);
            }
            if let Some(p) = out_csv {
                cfg.out_csv = Some(p);
            }
            if let Some(p) = out_json {
                cfg.out_json = Some(p);
            }
            let policy = cfg.policy;
            let runner = Runner::new(cfg)?;
            let out = runner.run_benchmark(&[policy])?;
            if let Some(path) = &runner.config().out_csv {
                write_text(path, &out.results[0].csv_string())?;
                println!("wrote {}", path.display());
            }
            if let Some(path) = &runner.config().out_json {
                write_text(path, &out.report.to_json_string())?;
                println!("wrote {}", path.display());
            }
            print_report(&out.report);
            Ok(())
        }
        Command::Compare { common, policies, out_csv, out_json, cost_table } => {
            let mut cfg = load(&common)?;
            if let Some(t) = cost_table {
                cfg.cost_table = Some(t);
            }
            if let Some(p) = out_csv {
                cfg.out_csv = Some(p);
            }
            if let Some(p) = out_json {
                cfg.out_json = Some(p);
            }
            let policies = if policies.is_empty() {
                vec![
                    PolicySpec::Autoregressive,
                    PolicySpec::Fixed(cfg.tree.draft_tokens),
                    PolicySpec::Evict,
                ]
            } else {
                policies
            };
            let runner = Runner::new(cfg)?;
            let out = runner.run_benchmark(&policies)?;
            if let Some(base) = &runner.config().out_csv {
                for result in &out.results {
                    let path = tagged_path(base, &result.policy.file_tag());
                    write_text(&path, &result.csv_string())?;
                    println!("wrote {}", path.display());
                }
            }
            if let Some(path) = &runner.config().out_json {
                write_text(path, &out.report.to_json_string())?;
                println!("wrote {}", path.display());
            }
            print_report(&out.report);
            Ok(())
        }
        Command::Sweep { common, k_grid, out_csv, cost_table } => {
            let mut cfg = load(&common)?;
            if let Some(t) = cost_table {
                cfg.cost_table = Some(t);
            }
            if let Some(p) = out_csv {
                cfg.out_csv = Some(p);
            }
            let runner = Runner::new(cfg)?;
            let rows = runner.sweep_tree_size(&k_grid)?;
            let csv = sweep_to_csv(&rows);
            if let Some(path) = &runner.config().out_csv {
                write_text(path, &csv)?;
                println!("wrote {}", path.display());
            }
            print!("{csv}");
            Ok(())
        }
        Command::Oracle { common } => {
            let cfg = load(&common)?;
            let checks = run_oracle_suite(cfg.seed)?;
            let mut failed = 0;
            for c in &checks {
                let mark = if c.pass { "ok  " } else { "FAIL" };
                println!("{mark} {}: {}", c.name, c.detail);
                if !c.pass {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::Invariant(format!("{failed} oracle check(s) failed")));
            }
            println!("all {} oracle checks passed", checks.len());
            Ok(())
        }
    }
}

fn print_report(report: &Report) {
    println!("ar_cost per token: {}", report.ar_cost);
    println!(
        "{:<16} {:>6} {:>7} {:>6} {:>7} {:>9} {:>8} {:>9} {:>8}",
        "policy", "iters", "tokens", "MAT", "MAT+1", "verified", "union", "TPOT", "speedup"
    );
    for (name, a) in &report.policies {
        println!(
            "{:<16} {:>6} {:>7} {:>6.3} {:>7.3} {:>9.3} {:>8.2} {:>9.3} {:>8.3}",
            name,
            a.iterations,
            a.committed_tokens,
            a.mat,
            a.mat_with_bonus,
            a.mean_verified_tokens,
            a.mean_union_size,
            a.tpot,
            a.speedup_vs_ar
        );
    }
}
