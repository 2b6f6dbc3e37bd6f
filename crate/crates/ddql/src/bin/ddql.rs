//! Command-line front door: `train`, `compare`, `oracle`, `validate`.
//!
//! Artifacts land under the output root (`DDQL_OUTPUT_ROOT`, default the
//! current directory). Exit status is nonzero when any training run aborts,
//! so sweeps compose with shell scripting.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ddql::eval::Statistic;
use ddql::harness::{self, ExperimentConfig, Metric};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ddql", version, about = "Desk-scale laboratory for deep double Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config (preset name or file path).
    Train {
        /// `desk`, `paper-fullscale`, or a path to a config file.
        config: String,
        /// Added to every seed in the config; extends a sweep without
        /// touching the file.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Compare finished experiments on one metric.
    Compare {
        /// Experiment ids under the runs directory.
        #[arg(required = true)]
        ids: Vec<String>,
        /// mean_eval_return, overestimation, q_hat, or g_hat.
        #[arg(long, default_value = "mean_eval_return")]
        metric: String,
        /// Aggregate over seeds for the final-phase column: mean, median,
        /// or iqm.
        #[arg(long, default_value = "mean")]
        stat: String,
        /// `env=random,human` baseline triple; repeat per env to add
        /// normalized-score aggregates.
        #[arg(long = "baseline")]
        baselines: Vec<String>,
        /// Directory containing the per-experiment run dirs.
        /// Defaults to `<output root>/runs`.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print exact q* and uniform-policy q tables for a bundled env.
    Oracle {
        /// maxbias or gridworld.
        env: String,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
    },
    /// Parse and validate a config, print the run plan, change nothing.
    Validate {
        /// `desk`, `paper-fullscale`, or a path to a config file.
        config: String,
    },
}

fn parse_baseline(s: &str) -> Result<(String, f64, f64)> {
    let bad = || format!("baseline {s:?} is not env=random,human");
    let (env, pair) = s.split_once('=').with_context(bad)?;
    let (random, human) = pair.split_once(',').with_context(bad)?;
    Ok((env.trim().to_string(), random.trim().parse().with_context(bad)?, human.trim().parse().with_context(bad)?))
}

fn load(config_arg: &str) -> Result<(String, ExperimentConfig)> {
    let (label, text) = harness::load_config_source(config_arg)?;
    let cfg = ExperimentConfig::parse(&text).with_context(|| format!("in {label}"))?;
    Ok((label, cfg))
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Train { config, seed_offset } => {
            let (_, cfg) = load(&config)?;
            let outcome = harness::run_experiment(&cfg, seed_offset, &harness::output_root())?;
            for run in &outcome.runs {
                match (&run.error, &run.summary) {
                    (Some(e), _) => {
                        println!("run {}: ABORTED after {} phase(s): {e}", run.run_id, run.phases)
                    }
                    (None, Some(s)) => println!(
                        "run {}: {} steps, {} updates, {} episodes, {} phase(s) -> {}",
                        run.run_id,
                        s.env_steps,
                        s.gradient_updates,
                        s.episodes_completed,
                        run.phases,
                        run.csv_path.display()
                    ),
                    (None, None) => println!("run {}: finished", run.run_id),
                }
            }
            Ok(if outcome.all_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Compare { ids, metric, stat, baselines, dir } => {
            let metric = Metric::parse(&metric)?;
            let stat = Statistic::parse(&stat)?;
            let baselines =
                baselines.iter().map(|b| parse_baseline(b)).collect::<Result<Vec<_>>>()?;
            let dir = dir.unwrap_or_else(|| harness::output_root().join("runs"));
            let report = harness::compare(&ids, metric, stat, &baselines, &dir)?;
            for line in &report.lines {
                println!("{line}");
            }
            println!("table: {}", report.table_csv_path.display());
            for chart in &report.chart_paths {
                println!("chart: {}", chart.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { env, gamma } => {
            let report = harness::oracle_tables(&env, gamma)?;
            for line in report.lines() {
                println!("{line}");
            }
            let path = report.write_csv(&harness::output_root())?;
            println!("csv: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let (label, cfg) = load(&config)?;
            println!("{label}: ok");
            println!(
                "  env    {} (sticky {}, max_steps {}, clip {})",
                cfg.env_label(),
                cfg.env.sticky_prob,
                cfg.env.max_steps.map_or("none".into(), |m| m.to_string()),
                cfg.env.clip_rewards
            );
            println!(
                "  agent  {} / {} ({}, hidden {:?}, k={}, C={})",
                cfg.agent.algorithm.name(),
                cfg.agent.bootstrap_variant.name(),
                cfg.agent.architecture.head_mode.name(),
                cfg.agent.architecture.hidden_sizes,
                cfg.agent.update_frequency,
                cfg.agent.target_interval
            );
            println!(
                "  plan   {} seed(s) x {} steps, {} evaluation phase(s) per run",
                cfg.seeds.len(),
                cfg.total_steps,
                cfg.phases_per_run()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
