//! The `mbde` command-line harness.
//!
//! Exit codes: 0 success, 1 runtime error, 2 config error, 3 budget
//! refusal, 4 certificate or theory failure. `MBDE_THREADS` caps the worker
//! pool.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use commands::*;
pub use config::{Domain, ExperimentConfig, SourceMode, TargetParams};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mbde", version, about = "Mollified boosted density estimation")]
pub struct Cli {
    /// Flat key-value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Use the original training sizes (10 000 samples, 750 epochs).
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Override any config key, e.g. `--set train.epochs=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Boost one model at the configured ε.
    Train,
    /// Release samples from a model, charging the ledger in the output directory.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        k: u64,
        /// Refuse the release if the ledger would exceed this total.
        #[arg(long)]
        eps_total: Option<f64>,
    },
    /// NLL, mode coverage, KL and a log-density grid.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Check that a model's log-ratio to Q_0 stays within ε/2.
    Certify {
        #[arg(long)]
        model: PathBuf,
    },
    /// Bound checks over the ε sweep, or on given model files.
    Theory {
        #[arg(long)]
        model: Vec<PathBuf>,
    },
    /// ε × repeat sweep table.
    Experiment {
        #[arg(long)]
        domain: Option<Domain>,
    },
}

impl Cli {
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if self.paper_scale {
            cfg.apply_paper_scale();
        }
        for o in &self.overrides {
            cfg.set_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.mcmc.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Command::Experiment { domain: Some(d) } = &self.command {
            cfg.domain = *d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::BudgetExceeded { .. } => 3,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::Train => {
            let out = cmd_train(&cfg)?;
            println!("{}", out.model.display());
        }
        Command::Sample { model, k, eps_total } => {
            let out = cmd_sample(model, *k, *eps_total, &cfg.out, &cfg.mcmc)?;
            println!(
                "{} ({} released, ε spent {})",
                out.samples.display(),
                out.ledger.released,
                out.ledger.spent
            );
        }
        Command::Eval { model } => {
            let out = cmd_eval(model, &cfg)?;
            let m = &out.metrics;
            println!(
                "nll {:.6} ± {:.6}  coverage {:.4}  kl {:.6} ± {:.6}",
                m.nll.value, m.nll.stderr, m.coverage.value, m.kl.value, m.kl.stderr
            );
        }
        Command::Certify { model } => {
            let r = cmd_certify(model, &cfg)?;
            let c = &r.certificate;
            println!(
                "max |log q/q0| = {:.6e}, bound {:.6e}: {}",
                c.max_abs,
                c.bound,
                if c.pass { "pass" } else { "FAIL" }
            );
            if !c.pass {
                return Ok(4);
            }
        }
        Command::Theory { model } => {
            let r = cmd_theory(&cfg, model)?;
            let s = &r.summary;
            println!(
                "exact {}/{} passed, statistical {}/{} passed, {} premises not met",
                s.exact_checks - s.exact_failures,
                s.exact_checks,
                s.statistical_checks - s.statistical_failures,
                s.statistical_checks,
                s.premise_not_met
            );
            for rec in r.records.iter().filter(|r| r.exact && !r.pass) {
                eprintln!(
                    "failed {}: observed {} > bound {} ({})",
                    rec.check, rec.observed, rec.bound, rec.inputs
                );
            }
            if !r.exact_ok() {
                return Ok(4);
            }
        }
        Command::Experiment { .. } => {
            let out = cmd_experiment(&cfg)?;
            println!("{}", out.table.display());
        }
    }
    Ok(0)
}

fn init_threads() {
    if let Some(n) = std::env::var("MBDE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, which keeps the existing one.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            match &e {
                Error::Config { line: 0, message } => eprintln!("config error: {message}"),
                Error::Config { line, message } => eprintln!("config error at line {line}: {message}"),
                Error::BudgetExceeded { required, available } => {
                    eprintln!("refused: release needs a total budget of {required}, only {available} allowed")
                }
                e => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
