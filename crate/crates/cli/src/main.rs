//! `wdiff`: batch experiments for the torus Wasserstein diffusion.
//!
//! Exit codes: 0 all checks passed, 1 a check or invariant failed,
//! 2 configuration or usage error.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wdiff::config::ExperimentConfig;
use wdiff::Error;

#[derive(Parser, Debug)]
#[command(name = "wdiff", version, about = "Simulation, gradient estimation and validation runs")]
struct Cli {
    /// Plain-text `key = value` config; omitted keys take the standard scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write SVG plots of the emitted tables.
    #[arg(long, global = true)]
    plot: bool,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Particle trajectories plus structural invariant checks.
    Simulate {
        /// Number of common-noise paths to store.
        #[arg(long, default_value_t = 4)]
        paths: usize,
        /// Steps between stored trajectory rows.
        #[arg(long, default_value_t = 50)]
        stride: usize,
    },
    /// Direct, finite-difference and BEL gradients on one scenario.
    Gradient,
    /// I2, K and weight-norm scaling over the width sweep.
    EpsSweep {
        /// Paths used for the K field.
        #[arg(long, default_value_t = 50)]
        k_paths: usize,
    },
    /// BEL and finite differences over the horizon grid.
    RateSweep,
    /// Both sides of the idiosyncratic integration by parts.
    IbpCheck,
    /// Particle KDE against the spectral density on shared noise.
    DensityCompare {
        /// Beta-replicas for the kernel estimate.
        #[arg(long, default_value_t = 256)]
        m_beta: usize,
        /// Common-noise replica to compare on.
        #[arg(long, default_value_t = 0)]
        w_replica: u64,
    },
    /// The full acceptance suite.
    Validate {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
    /// Moment-bound statistics of the particle derivatives.
    Moments,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Gradient => "gradient",
            Command::EpsSweep { .. } => "eps-sweep",
            Command::RateSweep => "rate-sweep",
            Command::IbpCheck => "ibp-check",
            Command::DensityCompare { .. } => "density-compare",
            Command::Validate { .. } => "validate",
            Command::Moments => "moments",
        }
    }
}

/// Result of a subcommand that ran to completion.
pub enum Outcome {
    Passed,
    /// Name of the failed assertion.
    Failed(String),
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &cli.out {
        overrides.push(("output_dir".into(), out.display().to_string()));
    }
    ExperimentConfig::parse_with_overrides(&text, &overrides)
}

fn is_invariant_violation(e: &Error) -> bool {
    matches!(
        e,
        Error::NonFinite { .. } | Error::MassDrift { .. } | Error::Inversion(_) | Error::NoiseMismatch(_)
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("wdiff: config error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("wdiff: config error: {e}");
            return ExitCode::from(2);
        }
    }
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("wdiff: {e}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli.command, &config, cli.plot) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(what)) => {
            eprintln!("wdiff: check failed: {what}");
            ExitCode::from(1)
        }
        Err(e) if is_invariant_violation(&e) => {
            eprintln!("wdiff: check failed: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("wdiff: {e}");
            ExitCode::from(2)
        }
    }
}
