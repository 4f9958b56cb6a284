//! Command-line experiment runner for the `mvlab` library.
//!
//! Each subcommand reads a JSON config (`"schema": 1`), writes its outputs
//! into `--out DIR` and exits with 0 on pass, 2 when an assumption gate
//! fails and 1 on errors or failed checks.

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// Empirical check failed.
    Fail,
    /// A theoretical assumption does not hold; results are informational.
    Gate,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Gate => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mvlab", version, about = "Mean-field particle experiments with exact Gaussian references")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Particle simulation with convergence metrics and a rate fit.
    Simulate(Common),
    /// Coupling by change of measure and the log-Harnack check.
    Coupled(Common),
    /// Table of explicit rate constants.
    Rates(Common),
    /// Free energy and mean-field entropy in the quadratic family.
    Energy(Common),
    /// Reference checks of the metrics and formulas.
    MetricsSelftest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

macro_rules! load_with_seed {
    ($ty:ty, $common:expr) => {{
        let mut loaded = config::load::<$ty>(&$common.config)?;
        if let Some(s) = $common.seed {
            loaded.config.seed = s;
        }
        loaded
    }};
}

/// Runs a parsed command line, returning a short summary and the verdict.
pub fn execute(cli: Cli) -> anyhow::Result<(String, Verdict)> {
    match cli.command {
        Command::Simulate(c) => {
            let l = load_with_seed!(config::SimulateConfig, c);
            let out = config::out_dir(c.out);
            let (r, v) = commands::simulate::run(&l.config, &l.sha256, &out)?;
            let summary = format!(
                "simulate: {} (fitted {} rate {:.6}{}); outputs in {}",
                r.status,
                r.fit_series,
                r.fit.rate,
                r.required_rate.map(|x| format!(", required {x:.6}")).unwrap_or_default(),
                out.display()
            );
            Ok((summary, v))
        }
        Command::Coupled(c) => {
            let l = load_with_seed!(config::CoupledConfig, c);
            let out = config::out_dir(c.out);
            let (r, v) = commands::coupled::run(&l.config, &l.sha256, &out)?;
            let summary = format!(
                "coupled: {} over {} horizons{}; outputs in {}",
                if r.pass { "pass" } else { "fail" },
                r.runs.len(),
                r.scaling_exponent.map(|e| format!(", scaling exponent {e:.3}")).unwrap_or_default(),
                out.display()
            );
            Ok((summary, v))
        }
        Command::Rates(c) => {
            let l = load_with_seed!(config::RatesConfig, c);
            let out = config::out_dir(c.out);
            let (_, v) = commands::rates::run(&l.config, &l.sha256, &out)?;
            Ok((format!("rates: written to {}", out.join("rates.json").display()), v))
        }
        Command::Energy(c) => {
            let l = load_with_seed!(config::EnergyConfig, c);
            let out = config::out_dir(c.out);
            let (r, v) = commands::energy::run(&l.config, &l.sha256, &out)?;
            Ok((
                format!("energy: {} (infimum {:.9}); outputs in {}", if r.pass { "pass" } else { "fail" }, r.infimum, out.display()),
                v,
            ))
        }
        Command::MetricsSelftest { config: path, seed, out } => {
            let mut l = match path {
                Some(p) => config::load::<config::SelftestConfig>(&p)?,
                None => config::Loaded {
                    config: config::SelftestConfig::default(),
                    sha256: config::sha256_hex(b""),
                },
            };
            if let Some(s) = seed {
                l.config.seed = s;
            }
            let out = config::out_dir(out);
            let (r, v) = commands::selftest::run(&l.config, &l.sha256, &out)?;
            let lines: Vec<String> = r
                .checks
                .iter()
                .map(|c| format!("  {}: {}", c.name, if c.pass { "pass" } else { "FAIL" }))
                .collect();
            Ok((format!("metrics-selftest:\n{}", lines.join("\n")), v))
        }
    }
}

/// Exit code for an error: 2 when it reports a violated assumption.
pub fn error_exit_code(err: &anyhow::Error) -> i32 {
    let gate = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<mvlab::Error>(),
            Some(mvlab::Error::AssumptionViolated { .. } | mvlab::Error::NotControllable { .. })
        )
    });
    if gate {
        2
    } else {
        1
    }
}
