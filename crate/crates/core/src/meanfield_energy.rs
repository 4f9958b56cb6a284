//! Free energy `E(μ) = Ent(μ | μ_V) + ½∫∫W dμ dμ`, mean-field entropy and the
//! N-particle Hamiltonian for quadratic confinement and pair interaction.
//!
//! With `V = λ|x|²/2` and `W = (δ/2)|x−y|²` the minimizer is Gaussian, so the
//! infimum over Gaussian laws is the global one. Non-quadratic families are
//! rejected rather than approximated.

use serde::{Deserialize, Serialize};

use crate::error::ensure_dim;
use crate::gaussian_oracle::{gaussian_entropy, GaussianMeasure};
use crate::model::{InteractionSpec, PotentialSpec};
use crate::particles::EmpiricalMeasure;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub relative_entropy_term: f64,
    pub interaction_term: f64,
    pub total: f64,
}

fn quadratic_params(v: &PotentialSpec, w: &InteractionSpec) -> Result<(f64, f64)> {
    let lambda = match *v {
        PotentialSpec::Quadratic { lambda } => lambda,
        _ => {
            return Err(Error::Unsupported(
                "free energy needs a quadratic confinement; the Gaussian infimum is only an upper bound otherwise".into(),
            ))
        }
    };
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", "confinement curvature must be finite and > 0"));
    }
    let delta = match *w {
        InteractionSpec::QuadraticPair { delta } => delta,
        _ => {
            return Err(Error::Unsupported(
                "free energy needs a quadratic pair interaction".into(),
            ))
        }
    };
    if !delta.is_finite() {
        return Err(Error::NonFinite { what: "delta".into() });
    }
    Ok((lambda, delta))
}

/// Free energy of a Gaussian law. The interaction term `(δ/2)·tr Σ` does not
/// depend on the mean, since `E|X−Y|² = 2 tr Σ` for independent copies.
pub fn free_energy(mu: &GaussianMeasure, v: &PotentialSpec, w: &InteractionSpec) -> Result<EnergyReport> {
    let (lambda, delta) = quadratic_params(v, w)?;
    let d = mu.dim();
    let gibbs = GaussianMeasure::isotropic(&vec![0.0; d], 1.0 / lambda)?;
    let relative_entropy_term = gaussian_entropy(mu, &gibbs)?;
    let interaction_term = 0.5 * delta * mu.cov().trace();
    Ok(EnergyReport {
        relative_entropy_term,
        interaction_term,
        total: relative_entropy_term + interaction_term,
    })
}

/// `inf_ν E(ν) = (d/2) ln(1 + δ/λ)`, attained at `N(0, I/(λ+δ))`.
pub fn free_energy_infimum(dim: usize, v: &PotentialSpec, w: &InteractionSpec) -> Result<f64> {
    let (lambda, delta) = quadratic_params(v, w)?;
    if !(lambda + delta > 0.0) {
        return Err(Error::AssumptionViolated {
            assumption: "lambda + delta > 0",
            detail: format!("lambda + delta = {}: free energy is unbounded below", lambda + delta),
        });
    }
    Ok(0.5 * dim as f64 * (delta / lambda).ln_1p())
}

/// The free-energy minimizer `N(0, I/(λ+δ))`.
pub fn free_energy_minimizer(dim: usize, v: &PotentialSpec, w: &InteractionSpec) -> Result<GaussianMeasure> {
    let (lambda, delta) = quadratic_params(v, w)?;
    free_energy_infimum(dim, v, w)?;
    GaussianMeasure::isotropic(&vec![0.0; dim], 1.0 / (lambda + delta))
}

/// `E(μ) − inf E`, clamped at zero against rounding.
pub fn mean_field_entropy(mu: &GaussianMeasure, v: &PotentialSpec, w: &InteractionSpec) -> Result<f64> {
    let inf = free_energy_infimum(mu.dim(), v, w)?;
    Ok((free_energy(mu, v, w)?.total - inf).max(0.0))
}

/// `H_N(x₁,…,x_N) = Σᵢ V(xᵢ) + (1/(N−1)) Σ_{i<j} W(xᵢ, xⱼ)`.
pub fn hamiltonian_hn(xs: &EmpiricalMeasure, v: &PotentialSpec, w: &InteractionSpec) -> Result<f64> {
    let n = xs.n();
    if n < 2 {
        return Err(Error::invalid("N", format!("need at least 2 particles, got {n}")));
    }
    v.validate()?;
    w.validate()?;
    let confinement: Vec<f64> = xs.points().map(|x| v.value(x)).collect();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(w.pair_value(xs.point(i), xs.point(j))?);
        }
    }
    Ok(crate::linalg::pairwise_sum(&confinement) + crate::linalg::pairwise_sum(&pairs) / (n - 1) as f64)
}

/// Free energy over the isotropic Gaussian family `N(0, σ²I)` on a grid of
/// variances; returns `(argmin σ², energies)`.
pub fn variance_scan(dim: usize, variances: &[f64], v: &PotentialSpec, w: &InteractionSpec) -> Result<(f64, Vec<f64>)> {
    ensure_dim("variance grid (non-empty)", variances.len().max(1), variances.len())?;
    let energies = variances
        .iter()
        .map(|&s2| {
            let mu = GaussianMeasure::isotropic(&vec![0.0; dim], s2)?;
            Ok(free_energy(&mu, v, w)?.total)
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = energies
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| variances[i])
        .expect("non-empty grid");
    Ok((best, energies))
}
