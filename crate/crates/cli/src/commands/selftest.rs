//! `metrics-selftest`: reference checks of the rate formulas, the exact `W₂`
//! solver, the k-NN entropy estimator and the Gaussian Talagrand inequality.

use std::path::Path;

use mvlab::gaussian_oracle::{gaussian_entropy, gaussian_w2};
use mvlab::metrics::{entropy_knn, w2_brute, w2_empirical, CostSpec, DEFAULT_KNN_K};
use mvlab::noise::derive_seed;
use mvlab::rates::{example22_kappa, kappa, theta_pair, twist_constants};
use mvlab::GaussianMeasure;
use serde::{Deserialize, Serialize};

use crate::config::{Provenance, SelftestConfig};
use crate::output::write_json;
use crate::Verdict;

pub const RATE_TOLERANCE: f64 = 1e-6;
pub const ENTROPY_TOLERANCE: f64 = 0.15;
const ENTROPY_SEEDS: u64 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl SelftestReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn run(cfg: &SelftestConfig, sha: &str, out: &Path) -> anyhow::Result<(SelftestReport, Verdict)> {
    let checks = vec![
        rate_formulas()?,
        w2_exactness(cfg.seed, cfg.w2_instances)?,
        entropy_estimator(cfg.seed, cfg.entropy_samples)?,
        talagrand_grid()?,
    ];
    let pass = checks.iter().all(|c| c.pass);
    let report = SelftestReport {
        provenance: Provenance::new("metrics-selftest", sha, cfg.seed),
        checks,
        pass,
    };
    write_json(out, "selftest.json", &report)?;
    Ok((report, if pass { Verdict::Pass } else { Verdict::Fail }))
}

pub fn rate_formulas() -> anyhow::Result<Check> {
    let (t1, t2) = theta_pair(1.0, 0.1)?;
    let (a, r, c) = twist_constants(1.0)?;
    let cases = [
        ("kappa(1,0,0)", kappa(1.0, 0.0, 0.0)?, 0.276_393_2),
        ("kappa(2,0.5,0.5)", kappa(2.0, 0.5, 0.5)?, 0.138_196_6),
        ("theta1(1,0.1)", t1, 0.273_606_8),
        ("theta2(1,0.1)", t2, 0.111_803_4),
        ("example22 kappa(1,0.1)", example22_kappa(1.0, 0.1)?, 0.169_868_0),
        ("a(1)", a, 1.224_744_9),
        ("r(1)", r, 0.408_248_3),
        ("C(1)", c, 1.809_017_0),
    ];
    let worst = cases
        .iter()
        .map(|(_, got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    let detail = cases
        .iter()
        .map(|(name, got, want)| format!("{name} = {got:.9} (reference {want})"))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Check {
        name: "rate_formulas".into(),
        pass: worst <= RATE_TOLERANCE,
        detail: format!("max abs error {worst:.3e}; {detail}"),
    })
}

pub fn w2_exactness(seed: u64, instances: usize) -> anyhow::Result<Check> {
    let mut mismatches = 0;
    for i in 0..instances {
        let n = 1 + i % 7;
        let d = 1 + (i / 7) % 3;
        let law = GaussianMeasure::standard(d)?;
        let p = law.sample(n, derive_seed(seed, 2 * i as u64))?;
        let q = law.sample(n, derive_seed(seed, 2 * i as u64 + 1))?;
        let exact = w2_empirical(&p, &q, &CostSpec::Euclidean)?;
        let brute = w2_brute(&p, &q, &CostSpec::Euclidean)?;
        if exact.to_bits() != brute.to_bits() {
            mismatches += 1;
        }
    }
    Ok(Check {
        name: "w2_exactness".into(),
        pass: mismatches == 0,
        detail: format!("{mismatches} of {instances} instances differ from permutation enumeration"),
    })
}

/// `(label, p, closed-form Ent(p | N(0,1)))`.
fn entropy_cases() -> anyhow::Result<Vec<(String, GaussianMeasure, f64)>> {
    let mut v = Vec::new();
    for m in [0.5f64, 1.0] {
        v.push((format!("mean {m}"), GaussianMeasure::isotropic(&[m], 1.0)?, m * m / 2.0));
    }
    for s2 in [0.5f64, 2.0] {
        v.push((
            format!("variance {s2}"),
            GaussianMeasure::isotropic(&[0.0], s2)?,
            0.5 * (s2 - 1.0 - s2.ln()),
        ));
    }
    Ok(v)
}

pub fn entropy_estimator(seed: u64, samples: usize) -> anyhow::Result<Check> {
    let q_law = GaussianMeasure::standard(1)?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (c, (label, p_law, exact)) in entropy_cases()?.into_iter().enumerate() {
        let mut est = Vec::new();
        for s in 0..ENTROPY_SEEDS {
            let base = derive_seed(seed, 1000 * c as u64 + s);
            let p = p_law.sample(samples, derive_seed(base, 1))?;
            let q = q_law.sample(samples, derive_seed(base, 2))?;
            est.push(entropy_knn(&p, &q, DEFAULT_KNN_K)?);
        }
        est.sort_by(f64::total_cmp);
        let median = 0.5 * (est[est.len() / 2 - 1] + est[est.len() / 2]);
        let rel = (median - exact).abs() / exact;
        worst = worst.max(rel);
        parts.push(format!("{label}: median {median:.5} vs {exact:.5} ({:.1}%)", 100.0 * rel));
    }
    Ok(Check {
        name: "entropy_estimator".into(),
        pass: worst <= ENTROPY_TOLERANCE,
        detail: parts.join("; "),
    })
}

pub fn talagrand_grid() -> anyhow::Result<Check> {
    let reference = GaussianMeasure::standard(1)?;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..20 {
        for j in 0..20 {
            let m = -2.0 + 4.0 * i as f64 / 19.0;
            let s2 = 0.25 + 3.75 * j as f64 / 19.0;
            let p = GaussianMeasure::isotropic(&[m], s2)?;
            let w = gaussian_w2(&p, &reference)?;
            let slack = w * w - 2.0 * gaussian_entropy(&p, &reference)?;
            worst = worst.max(slack);
        }
    }
    Ok(Check {
        name: "talagrand".into(),
        pass: worst <= 1e-12,
        detail: format!("max of W2^2 - 2 Ent over the 20x20 grid: {worst:.3e}"),
    })
}
