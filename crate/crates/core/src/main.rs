use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use v2vlink::env::Game;
use v2vlink::harness::{self, ExperimentConfig, Variant, POLICY_NAMES};

#[derive(Parser)]
#[command(name = "v2vlink", version, about = "V2V link adaptation: D3QN training and baseline comparison")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// 1 = throughput, 2 = energy efficiency.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    game: Option<u8>,
}

#[derive(Subcommand)]
enum Command {
    /// Train learners and write metrics, checkpoints and run records.
    Train {
        #[command(flatten)]
        common: Common,
        /// d3qn, ddqn, dqn or all.
        #[arg(long, default_value = "d3qn")]
        policy: String,
    },
    /// Evaluate one policy on frozen evaluation traces.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "d3qn")]
        policy: String,
    },
    /// Evaluate the trained agent and every baseline on shared traces.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Write the frozen evaluation traces as CSV.
    ExportTraces {
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic and finite-difference gradients on random networks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

struct Resolved {
    cfg: ExperimentConfig,
    seeds: Vec<u64>,
    out: PathBuf,
}

fn resolve(common: &Common) -> Result<Resolved> {
    let mut cfg = match &common.config {
        Some(p) => harness::load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(g) = common.game {
        cfg = cfg.with_game(Game::from_number(g)?);
    }
    let seeds = common.seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok(Resolved { cfg, seeds, out })
}

fn variants(policy: &str) -> Result<Vec<Variant>> {
    if policy == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    Ok(vec![policy.parse().with_context(|| {
        format!("`train` accepts d3qn, ddqn, dqn or all, got `{policy}`")
    })?])
}

fn save_config(r: &Resolved) -> Result<()> {
    std::fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    let path = r.out.join(format!("config_g{}.toml", r.cfg.game.kind.number()));
    r.cfg.save(&path)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, policy } => {
            let r = resolve(&common)?;
            let vs = variants(&policy)?;
            save_config(&r)?;
            for seed in &r.seeds {
                for v in &vs {
                    let run = harness::run_training(&r.cfg, *v, *seed, &r.out)?;
                    let rec = &run.record;
                    println!(
                        "trained {} game {} seed {}: {} episodes, {} steps, tail reward ratio {:.3} -> {}",
                        v.label(),
                        rec.game,
                        seed,
                        rec.episodes,
                        rec.total_steps,
                        rec.tail_reward_ratio,
                        r.out.join(&rec.checkpoint).display()
                    );
                }
            }
        }
        Command::Evaluate { common, policy } => {
            let r = resolve(&common)?;
            if !POLICY_NAMES.contains(&policy.as_str()) {
                bail!("unknown policy `{policy}`; expected one of {}", POLICY_NAMES.join(", "));
            }
            for seed in &r.seeds {
                let eval = harness::run_evaluation(&r.cfg, &policy, *seed, &r.out)?;
                print_summary_header();
                print_summary(&eval.summary);
            }
        }
        Command::Compare { common } => {
            let r = resolve(&common)?;
            for seed in &r.seeds {
                let rows = harness::run_comparison(&r.cfg, *seed, &r.out)?;
                println!("game {} seed {seed}", r.cfg.game.kind.number());
                print_summary_header();
                rows.iter().for_each(print_summary);
            }
        }
        Command::ExportTraces { common } => {
            let r = resolve(&common)?;
            for seed in &r.seeds {
                let path = harness::export_traces(&r.cfg, *seed, &r.out)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Gradcheck {
            seed,
            cases,
            step,
            tolerance,
        } => gradcheck(seed, cases, step, tolerance)?,
    }
    Ok(())
}

fn gradcheck(seed: u64, cases: usize, step: f64, tolerance: f64) -> Result<()> {
    let results = harness::run_gradcheck(seed, cases, step);
    let mut worst: f64 = 0.0;
    for (i, blocks) in results.iter().enumerate() {
        let line: Vec<String> = blocks
            .iter()
            .map(|b| format!("{}={:.2e}", b.block, b.rel_error))
            .collect();
        println!("case {i}: {}", line.join(" "));
        worst = blocks.iter().map(|b| b.rel_error).fold(worst, f64::max);
    }
    println!("worst relative error {worst:.3e} (tolerance {tolerance:.0e})");
    if worst >= tolerance {
        bail!("gradient check failed");
    }
    Ok(())
}

fn print_summary_header() {
    println!(
        "{:<8} {:>12} {:>8} {:>10} {:>8} {:>10} {:>9} {:>9}",
        "policy", "reward", "ratio", "valid/ep", "viol", "EE", "power", "tput"
    );
}

fn print_summary(s: &v2vlink::baselines::PolicySummary) {
    println!(
        "{:<8} {:>12.1} {:>8.3} {:>10.1} {:>8.4} {:>10.2} {:>9.3} {:>9.2}",
        s.policy,
        s.cumulative_reward,
        s.reward_ratio,
        s.mean_valid_per_episode,
        s.violation_rate,
        s.mean_ee_mbps_per_w,
        s.mean_power_w,
        s.mean_throughput_mbps
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
