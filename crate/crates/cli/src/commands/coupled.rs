//! `coupled`: log-Harnack check by coupling with change of measure, swept
//! over horizons.

use std::path::Path;

use anyhow::bail;
use mvlab::coupling::{log_harnack_check, CouplingOptions, HarnackReport};
use mvlab::rates::fit_exp_rate;
use serde::{Deserialize, Serialize};

use crate::config::{CoupledConfig, Provenance};
use crate::output::{write_atomic, write_json, Table};
use crate::Verdict;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRun {
    #[serde(flatten)]
    pub report: HarnackReport,
    pub dt: f64,
    pub mean_weight: f64,
    pub control_v: Vec<f64>,
    pub xi_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub paths: usize,
    pub runs: Vec<HorizonRun>,
    /// Least-squares slope of `ln rhs` against `ln T`.
    pub scaling_exponent: Option<f64>,
    pub pass: bool,
}

pub fn run(cfg: &CoupledConfig, sha: &str, out: &Path) -> anyhow::Result<(CoupledReport, Verdict)> {
    if cfg.horizons.is_empty() {
        bail!("invalid config at `horizons`: at least one horizon is required");
    }
    if cfg.steps == 0 || cfg.paths == 0 {
        bail!("invalid config: `steps` and `paths` must be at least 1");
    }
    let system = cfg.system.build()?;
    let mut runs = Vec::new();
    for (i, &horizon) in cfg.horizons.iter().enumerate() {
        if !(horizon > 0.0) || !horizon.is_finite() {
            bail!("invalid config at `horizons[{i}]`: must be finite and > 0");
        }
        let opts = CouplingOptions {
            horizon,
            dt: horizon / cfg.steps as f64,
            seed: cfg.seed,
            paths: cfg.paths,
            shift: cfg.shift,
        };
        let (report, run) = log_harnack_check(&system, &cfg.mu, &cfg.nu, &opts)?;
        let mut table = Table::new(&["t", "xi_sq"]);
        for (t, v) in &run.xi_path {
            table.push(vec![Some(*t), Some(*v)]);
        }
        let xi_file = format!("xi_{i}.csv");
        write_atomic(out, &xi_file, &table.to_csv()?)?;
        runs.push(HorizonRun {
            report,
            dt: opts.dt,
            mean_weight: run.mean_weight,
            control_v: run.control_v,
            xi_file,
        });
    }
    let scaling_exponent = scaling_exponent(&runs);
    let pass = runs.iter().all(|r| r.report.pass);
    let report = CoupledReport {
        provenance: Provenance::new("coupled", sha, cfg.seed),
        paths: cfg.paths,
        runs,
        scaling_exponent,
        pass,
    };
    write_json(out, "report.json", &report)?;
    Ok((report, if pass { Verdict::Pass } else { Verdict::Fail }))
}

fn scaling_exponent(runs: &[HorizonRun]) -> Option<f64> {
    let (ts, vs): (Vec<f64>, Vec<f64>) = runs
        .iter()
        .filter(|r| r.report.rhs_empirical > 0.0)
        .map(|r| (r.report.horizon.ln(), r.report.rhs_empirical))
        .unzip();
    if ts.len() < 3 {
        // The exponential fit needs three points; two give the exact slope.
        return match ts.len() {
            2 if ts[0] != ts[1] => Some((vs[1].ln() - vs[0].ln()) / (ts[1] - ts[0])),
            _ => None,
        };
    }
    // ln rhs = intercept − rate · ln T, so the exponent is −rate.
    let window = (f64::NEG_INFINITY, f64::INFINITY);
    fit_exp_rate(&ts, &vs, Some(window)).ok().map(|f| -f.rate)
}
