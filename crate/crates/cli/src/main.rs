//! `cfloss`: prepare data, train, grid-search γ₁/γ₂, verify loss relations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cfloss_core::relations::RelationId;
use cfloss_core::training::TrainCheckpoint;
use cfloss_core::InteractionDataset;

use commands::{PrepareArgs, SeedOutcome};
use config::{resolve_out, ExperimentConfig};

/// Invalid invocation or configuration (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Some relation check failed (exit code 3).
#[derive(Debug)]
struct VerificationFailed;

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("relation verification failed")
    }
}

impl std::error::Error for VerificationFailed {}

#[derive(Parser)]
#[command(name = "cfloss", version, about = "Collaborative-filtering loss laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ingest (or generate), k-core filter and split; writes dataset.json and stats.json.
    Prepare {
        /// `user<TAB>item[<TAB>timestamp]` log.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Synthetic generator spec, e.g. `zipf:1.0,users=1000,items=1500`.
        #[arg(long)]
        synthetic: Option<String>,
        #[arg(long, default_value_t = 10)]
        kcore: usize,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per seed; writes per-seed history, report and checkpoint plus mean_report.json.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
        /// Halt every seed after this many epochs, leaving a checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Continue a single seed from its checkpoint; the checkpoint's config wins.
        #[arg(long, conflicts_with = "stop_after")]
        resume: Option<PathBuf>,
    },
    /// Grid search over MAWU's γ₁ × γ₂; writes grid.csv and grid_summary.json.
    Grid {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        gamma1: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        gamma2: Vec<f64>,
    },
    /// Numerically check the relations between the losses.
    Verify {
        /// Subset of: ssm_bpr, bc_zero_margin, tau_zero, tau_inf, num_neg, theorem_a1.
        #[arg(long, value_delimiter = ',')]
        only: Vec<RelationId>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the mean reports of several train runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// Flat JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; the value is parsed as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    synthetic: Option<String>,
    /// Loss kind, e.g. mawu, directau, bpr.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExpArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut sets = self.set.clone();
        let mut push = |k: &str, v: serde_json::Value| sets.push(format!("{k}={v}"));
        if let Some(p) = &self.dataset {
            push("dataset", p.display().to_string().into());
        }
        if let Some(s) = &self.synthetic {
            push("synthetic", s.clone().into());
        }
        if let Some(l) = &self.loss {
            push("kind", l.clone().into());
        }
        if !self.seeds.is_empty() {
            push("seeds", self.seeds.clone().into());
        }
        if let Some(n) = self.max_epochs {
            push("max_epochs", n.into());
        }
        if let Some(n) = self.jobs {
            push("jobs", n.into());
        }
        let cfg = ExperimentConfig::load(self.config.as_deref(), &sets)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig, default: &str) -> PathBuf {
        resolve_out(self.out.as_deref(), cfg.out_dir.as_deref(), default)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Prepare { input, synthetic, kcore, split_seed, out } => {
            let out = resolve_out(out.as_deref(), None, "data");
            let stats = commands::prepare(&PrepareArgs { input, synthetic, kcore, split_seed, out })?;
            print_json(&stats)
        }
        Cmd::Train { exp, stop_after, resume } => {
            if let Some(ck_path) = resume {
                let ck = TrainCheckpoint::load_json(&ck_path)?;
                let cfg = exp.load()?;
                let ds: InteractionDataset = cfg.load_dataset()?;
                let out = exp.out_dir(&cfg, "train");
                let seed = ck.config.seed;
                let dir = commands::seed_dir(&out, seed);
                return match commands::train_seed(&ds, ck.config.clone(), Some(ck), None, &dir)? {
                    SeedOutcome::Finished(r) => print_json(&r),
                    SeedOutcome::Stopped { .. } => unreachable!(),
                };
            }
            let cfg = exp.load()?;
            let ds = cfg.load_dataset()?;
            let out = exp.out_dir(&cfg, "train");
            match commands::train(&cfg, &ds, &out, stop_after)? {
                Some(m) if m.seeds_ok.is_empty() && m.seeds_diverged.is_empty() => {
                    anyhow::bail!("every seed failed")
                }
                Some(m) => print_json(&m),
                None => Ok(()),
            }
        }
        Cmd::Grid { exp, gamma1, gamma2 } => {
            let cfg = exp.load()?;
            let ds = cfg.load_dataset()?;
            let out = exp.out_dir(&cfg, "grid");
            let summary = commands::grid(&cfg, &ds, &gamma1, &gamma2, &out)?;
            print_json(&summary.best)
        }
        Cmd::Verify { only, seed, out } => {
            let out = resolve_out(out.as_deref(), None, "verify");
            let summary = commands::verify(&only, seed, &out)?;
            for r in &summary.reports {
                let status = if r.passed { "PASS" } else { "FAIL" };
                eprintln!("{status} {:<16} {}", r.relation, r.criterion);
            }
            print_json(&summary)?;
            if summary.passed {
                Ok(())
            } else {
                Err(VerificationFailed.into())
            }
        }
        Cmd::Report { runs, out } => {
            let rows = commands::report(&runs)?;
            if let Some(out) = out {
                commands::write_comparison(&rows, &resolve_out(Some(&out), None, "report"))?;
            }
            print!("{}", commands::comparison_csv(&rows));
            Ok(())
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<VerificationFailed>().is_some() {
        3
    } else if e.downcast_ref::<Usage>().is_some() {
        1
    } else if let Some(cfloss_core::Error::Config(_)) = e.downcast_ref::<cfloss_core::Error>() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<VerificationFailed>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
