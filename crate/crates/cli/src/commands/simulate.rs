//! `simulate`: particle run with convergence metrics, a rate fit and the
//! matching theoretical rate where one is available.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use mvlab::gaussian_oracle::{gaussian_entropy, gaussian_w2, law_at, stationary_measure};
use mvlab::meanfield_energy::mean_field_entropy;
use mvlab::metrics::{entropy_knn, paired_cost_sq_mean, w2_empirical, CostSpec};
use mvlab::model::{check_example21, check_example22};
use mvlab::noise::derive_seed;
use mvlab::particles::{run_pair_with, simulate};
use mvlab::rates::{example22_kappa, fit_exp_rate, quadratic_pair_deltas, rate_example21, twist_constants, RateFit};
use mvlab::{AssumptionReport, EmpiricalMeasure, GaussianMeasure, Model, PotentialSpec, SimConfig};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Metric, Provenance, Series, SimulateConfig};
use crate::output::{svg_line_chart, write_atomic, write_json, Table};
use crate::Verdict;

const PAIR_DOMAIN: u64 = 0x5041_4952;
const REFERENCE_DOMAIN: u64 = 0x5245_4646;

pub const COLUMNS: [&str; 8] = [
    "t",
    "w2_emp",
    "w2_oracle",
    "ent_knn",
    "ent_oracle",
    "psi_bar_sq_mean",
    "w2_fit",
    "mean_field_entropy",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    /// Rate the fitted series is compared against, if the theory covers it.
    pub rate: Option<f64>,
    pub assumption: Option<AssumptionReport>,
    pub guarantee: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub t: f64,
    pub coordinate: usize,
    pub kind: String,
    pub empirical: f64,
    pub exact: f64,
    pub standard_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub model: String,
    pub particles: usize,
    pub steps: usize,
    pub fit_series: String,
    pub fit: RateFit,
    pub oracle_fit: Option<RateFit>,
    pub theory: Theory,
    /// Rate the fit must reach: theoretical rate times `1 − rate_tolerance`.
    pub required_rate: Option<f64>,
    /// `fit.rate − required_rate`.
    pub margin: Option<f64>,
    pub moment_checks: Vec<MomentCheck>,
    pub notes: Vec<String>,
    pub pass: bool,
    pub status: String,
}

struct References {
    stationary: Option<GaussianMeasure>,
    reference: Option<EmpiricalMeasure>,
    psi_bar: Option<CostSpec>,
    w2_sub: usize,
}

pub fn run(cfg: &SimulateConfig, sha: &str, out: &Path) -> anyhow::Result<(SimulateReport, Verdict)> {
    cfg.validate()?;
    let n = cfg.sim.particles;
    let sim = SimConfig {
        dt: cfg.sim.dt,
        horizon: cfg.sim.horizon,
        particles: n,
        seed: cfg.seed,
        record_every: cfg.sim.record_every,
        storage: mvlab::particles::Storage::Full,
    };
    sim.validate().map_err(|e| anyhow!("invalid config at `sim`: {e}"))?;
    let mut notes = Vec::new();

    let init = cfg.init.sample(n, cfg.seed)?;
    let stationary = match stationary_measure(&cfg.model) {
        Ok(s) => Some(s),
        Err(e) => {
            notes.push(format!("no stationary reference law: {e}"));
            None
        }
    };
    let needs_reference = cfg.metrics.contains(&Metric::W2) || cfg.metrics.contains(&Metric::EntropyKnn);
    let reference = match (&stationary, needs_reference) {
        (Some(s), true) => Some(s.sample(n, derive_seed(cfg.seed, REFERENCE_DOMAIN))?),
        _ => None,
    };
    let psi_bar = match (&cfg.model, cfg.metrics.contains(&Metric::PsiBar)) {
        (Model::Kinetic(k), true) => {
            let (a, r, _) = twist_constants(k.beta())?;
            Some(CostSpec::PsiBar { b: k.b().clone(), a, r })
        }
        _ => None,
    };
    let ctx = References {
        stationary,
        reference,
        psi_bar,
        w2_sub: cfg.w2_subsample.min(n),
    };

    let mut table = Table::new(&COLUMNS);
    let mut finals: Vec<(f64, EmpiricalMeasure)> = Vec::new();
    match &cfg.pair_init {
        Some(pair) => {
            let second = pair.sample(n, derive_seed(cfg.seed, PAIR_DOMAIN))?;
            let mut err = None;
            run_pair_with(&cfg.model, &init, &second, &sim, |t, p, q| {
                match row(cfg, &ctx, t, p, Some(q)) {
                    Ok(r) => table.push(r),
                    Err(e) => {
                        err.get_or_insert(e);
                    }
                }
                finals.push((t, p.clone()));
                Ok(())
            })?;
            if let Some(e) = err {
                return Err(e);
            }
        }
        None => {
            let traj = simulate(&cfg.model, &init, &sim)?;
            let rows: Vec<anyhow::Result<Vec<Option<f64>>>> = traj
                .times
                .par_iter()
                .zip(&traj.snapshots)
                .map(|(&t, s)| row(cfg, &ctx, t, s.cloud().expect("full storage"), None))
                .collect();
            for r in rows {
                table.push(r?);
            }
            finals = traj
                .times
                .iter()
                .zip(traj.snapshots)
                .map(|(&t, s)| (t, s.cloud().expect("full storage").clone()))
                .collect();
        }
    }

    let moment_checks = if cfg.oracle {
        moment_checks(cfg, &finals, &mut notes)
    } else {
        Vec::new()
    };
    drop(finals);

    let series = cfg.fit_series.unwrap_or_else(|| default_series(cfg));
    let times: Vec<f64> = table.rows.iter().map(|r| r[0].expect("time")).collect();
    let fit = fit_column(&table, &times, series.column(), cfg.fit_window)
        .with_context(|| format!("fitting `{}`", series.column()))?;
    let oracle_fit = match series {
        Series::W2Emp | Series::W2Fit => fit_column(&table, &times, "w2_oracle", cfg.fit_window).ok(),
        Series::EntKnn => fit_column(&table, &times, "ent_oracle", cfg.fit_window).ok(),
        _ => None,
    };
    let theory = theory(cfg, series);
    let required_rate = theory.rate.map(|r| r * (1.0 - cfg.rate_tolerance));
    let margin = required_rate.map(|r| fit.rate - r);
    let moments_ok = moment_checks.iter().all(|c| c.pass);
    let (verdict, status) = if theory.rate.is_some() && !theory.guarantee {
        (Verdict::Gate, "no theoretical guarantee")
    } else if margin.is_none_or(|m| m >= 0.0) && moments_ok {
        (Verdict::Pass, "pass")
    } else {
        (Verdict::Fail, "fail")
    };

    let report = SimulateReport {
        provenance: Provenance::new("simulate", sha, cfg.seed),
        model: match cfg.model {
            Model::Granular(_) => "granular".into(),
            Model::Kinetic(_) => "kinetic".into(),
        },
        particles: n,
        steps: sim.steps(),
        fit_series: series.column().into(),
        fit,
        oracle_fit,
        theory,
        required_rate,
        margin,
        moment_checks,
        notes,
        pass: verdict == Verdict::Pass,
        status: status.into(),
    };

    write_atomic(out, "series.csv", &table.to_csv()?)?;
    write_json(out, "report.json", &report)?;
    if cfg.plots {
        for col in &COLUMNS[1..] {
            let values = table.column(col).expect("known column");
            let pts: Vec<(f64, f64)> = times
                .iter()
                .zip(values)
                .filter_map(|(&t, v)| v.map(|v| (t, v)))
                .collect();
            if !pts.is_empty() {
                write_atomic(out, &format!("{col}.svg"), svg_line_chart(col, &pts).as_bytes())?;
            }
        }
    }
    Ok((report, verdict))
}

fn default_series(cfg: &SimulateConfig) -> Series {
    if cfg.metrics.contains(&Metric::PsiBar) {
        Series::PsiBarSqMean
    } else if cfg.metrics.contains(&Metric::W2) {
        Series::W2Fit
    } else if cfg.metrics.contains(&Metric::EntropyKnn) {
        Series::EntKnn
    } else {
        Series::W2Oracle
    }
}

fn row(
    cfg: &SimulateConfig,
    ctx: &References,
    t: f64,
    cloud: &EmpiricalMeasure,
    second: Option<&EmpiricalMeasure>,
) -> anyhow::Result<Vec<Option<f64>>> {
    let law = if cfg.oracle {
        law_at(&cfg.model, &cfg.init, t).ok()
    } else {
        None
    };
    let oracle_pair = law.as_ref().zip(ctx.stationary.as_ref());
    let w2 = cfg.metrics.contains(&Metric::W2);
    let w2_emp = match (&ctx.reference, w2) {
        (Some(r), true) => {
            let idx: Vec<usize> = (0..ctx.w2_sub).collect();
            Some(w2_empirical(&subsample(cloud, &idx)?, &subsample(r, &idx)?, &CostSpec::Euclidean)?)
        }
        _ => None,
    };
    let w2_oracle = oracle_pair.map(|(l, s)| gaussian_w2(l, s)).transpose()?;
    let ent_knn = match (&ctx.reference, cfg.metrics.contains(&Metric::EntropyKnn)) {
        (Some(r), true) => Some(entropy_knn(cloud, r, cfg.knn_k)?),
        _ => None,
    };
    let ent_oracle = oracle_pair.map(|(l, s)| gaussian_entropy(l, s)).transpose()?;
    let psi = match (&ctx.psi_bar, second) {
        (Some(c), Some(q)) => Some(paired_cost_sq_mean(cloud, q, c)?),
        _ => None,
    };
    let fit_law = if w2 || cfg.metrics.contains(&Metric::Energy) {
        Some(cloud.gaussian_fit()?)
    } else {
        None
    };
    let w2_fit = match (&fit_law, &ctx.stationary, w2) {
        (Some(f), Some(s), true) => Some(gaussian_w2(f, s)?),
        _ => None,
    };
    let energy = match (&cfg.model, &fit_law, cfg.metrics.contains(&Metric::Energy)) {
        (Model::Granular(g), Some(f), true) => mean_field_entropy(f, g.potential(), g.interaction()).ok(),
        _ => None,
    };
    Ok(vec![Some(t), w2_emp, w2_oracle, ent_knn, ent_oracle, psi, w2_fit, energy])
}

fn subsample(cloud: &EmpiricalMeasure, idx: &[usize]) -> mvlab::Result<EmpiricalMeasure> {
    let mut data = Vec::with_capacity(idx.len() * cloud.dim());
    for &i in idx {
        data.extend_from_slice(cloud.point(i));
    }
    EmpiricalMeasure::new(data, cloud.dim())
}

fn fit_column(table: &Table, times: &[f64], col: &str, window: Option<(f64, f64)>) -> anyhow::Result<RateFit> {
    let values = table.column(col).ok_or_else(|| anyhow!("unknown column"))?;
    let (ts, vs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter_map(|(&t, v)| v.map(|v| (t, v)))
        .unzip();
    if ts.is_empty() {
        bail!("series `{col}` was not computed; enable its metric or the oracle");
    }
    Ok(fit_exp_rate(&ts, &vs, window)?)
}

fn theory(cfg: &SimulateConfig, series: Series) -> Theory {
    match &cfg.model {
        Model::Granular(g) => {
            if !matches!(series, Series::W2Emp | Series::W2Fit | Series::W2Oracle) {
                return no_theory("theoretical rates are only compared for W2 series in the granular model");
            }
            let (PotentialSpec::Quadratic { lambda }, Some(c)) = (g.potential(), g.interaction().mean_coupling())
            else {
                return no_theory("no explicit rate outside the quadratic family");
            };
            let (d1, d2) = quadratic_pair_deltas(c);
            let report = check_example21(*lambda, d1, d2);
            let unit = g.has_unit_diffusion();
            let guarantee = report.satisfied && unit;
            let note = if !unit {
                "no theoretical guarantee: the explicit granular rate assumes a = I".into()
            } else if !report.satisfied {
                format!("no theoretical guarantee: {}", report.detail)
            } else {
                "W2 decays at least at rate lambda + delta1 - delta2".into()
            };
            Theory {
                rate: Some(rate_example21(*lambda, d1, d2)),
                assumption: Some(report),
                guarantee,
                note,
            }
        }
        Model::Kinetic(k) => {
            if series != Series::PsiBarSqMean {
                return no_theory("theoretical rates are only compared for the paired twisted cost in the kinetic model");
            }
            let Some(theta) = k.interaction().mean_coupling() else {
                return no_theory("no explicit rate for non-linear interactions");
            };
            let unit_b = k.d1() == k.d2() && k.b() == &DMatrix::identity(k.d1(), k.d2());
            let report = match check_example22(k.beta(), theta) {
                Ok(r) => r,
                Err(e) => return no_theory(&format!("rate unavailable: {e}")),
            };
            let guarantee = report.satisfied && unit_b;
            let note = if !unit_b {
                "no theoretical guarantee: the explicit kinetic rate assumes B = I".into()
            } else if !report.satisfied {
                format!("no theoretical guarantee: {}", report.detail)
            } else {
                "mean twisted cost decays at least at rate 2 kappa".into()
            };
            Theory {
                rate: example22_kappa(k.beta(), theta).ok().map(|kappa| 2.0 * kappa),
                assumption: Some(report),
                guarantee,
                note,
            }
        }
    }
}

fn no_theory(note: &str) -> Theory {
    Theory {
        rate: None,
        assumption: None,
        guarantee: false,
        note: note.into(),
    }
}

/// Compares empirical means and variances with the exact law at evenly
/// spaced recorded times, within 3 Monte Carlo standard errors.
fn moment_checks(cfg: &SimulateConfig, records: &[(f64, EmpiricalMeasure)], notes: &mut Vec<String>) -> Vec<MomentCheck> {
    let k = cfg.moment_checkpoints;
    if k == 0 || records.len() < 2 {
        return Vec::new();
    }
    let last = records.len() - 1;
    let mut picks: Vec<usize> = (1..=k).map(|j| ((j * last) as f64 / k as f64).round() as usize).collect();
    picks.dedup();
    let mut out = Vec::new();
    for i in picks {
        let (t, cloud) = &records[i];
        let exact = match law_at(&cfg.model, &cfg.init, *t) {
            Ok(l) => l,
            Err(e) => {
                notes.push(format!("moment checks skipped: {e}"));
                return Vec::new();
            }
        };
        let m = cloud.moments();
        let n = m.n as f64;
        for c in 0..cloud.dim() {
            let var = exact.cov()[(c, c)];
            let se_mean = (var / n).sqrt();
            let se_var = var * (2.0 / (n - 1.0)).sqrt();
            for (kind, emp, ex, se) in [
                ("mean", m.mean[c], exact.mean()[c], se_mean),
                ("variance", m.cov[(c, c)], var, se_var),
            ] {
                out.push(MomentCheck {
                    t: *t,
                    coordinate: c,
                    kind: kind.into(),
                    empirical: emp,
                    exact: ex,
                    standard_error: se,
                    pass: (emp - ex).abs() <= 3.0 * se,
                });
            }
        }
    }
    out
}
