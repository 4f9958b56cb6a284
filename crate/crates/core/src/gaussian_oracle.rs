//! Closed-form Gaussian reference solutions for the linear/quadratic models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite};
use crate::linalg::{self, expm, serde_matrix};
use crate::model::{GranularModel, KineticModel, Law, Model, PotentialSpec};
use crate::noise::{derive_seed, NoiseSource};
use crate::particles::EmpiricalMeasure;
use crate::{Error, Result};

const SAMPLE_DOMAIN: u64 = 0x5341_4d50;

/// Maximum RK4 step of the covariance ODE integrator.
pub const LYAPUNOV_MAX_STEP: f64 = 5e-3;

/// Gaussian law with SPD covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRaw", into = "GaussianRaw")]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRaw {
    mean: Vec<f64>,
    #[serde(with = "serde_matrix")]
    cov: DMatrix<f64>,
}

impl TryFrom<GaussianRaw> for GaussianMeasure {
    type Error = Error;

    fn try_from(raw: GaussianRaw) -> Result<Self> {
        GaussianMeasure::new(raw.mean, raw.cov)
    }
}

impl From<GaussianMeasure> for GaussianRaw {
    fn from(g: GaussianMeasure) -> Self {
        Self {
            mean: g.mean,
            cov: g.cov,
        }
    }
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("mean", "dimension must be at least 1"));
        }
        ensure_finite("gaussian mean", &mean)?;
        ensure_dim("covariance rows", mean.len(), cov.nrows())?;
        ensure_dim("covariance cols", mean.len(), cov.ncols())?;
        linalg::check_spd("gaussian covariance", &cov)?;
        Ok(Self {
            mean,
            cov: linalg::symmetrize(&cov),
        })
    }

    /// `N(mean, var·I)`.
    pub fn isotropic(mean: &[f64], var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean.to_vec(), DMatrix::identity(d, d) * var)
    }

    pub fn diagonal(mean: &[f64], vars: &[f64]) -> Result<Self> {
        ensure_dim("variances", mean.len(), vars.len())?;
        Self::new(
            mean.to_vec(),
            DMatrix::from_diagonal(&DVector::from_column_slice(vars)),
        )
    }

    /// Standard normal on `R^d`.
    pub fn standard(d: usize) -> Result<Self> {
        Self::isotropic(&vec![0.0; d], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `n` i.i.d. samples. Sample `i` depends only on `(seed, i)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        let l = self
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotSpd {
                what: "gaussian covariance".into(),
            })?
            .unpack();
        let d = self.dim();
        let src = NoiseSource::new(derive_seed(seed, SAMPLE_DOMAIN));
        let mut z = vec![0.0; d];
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            src.normals_at(i as u64, 0, &mut z);
            for r in 0..d {
                let lz: f64 = (0..=r).map(|c| l[(r, c)] * z[c]).sum();
                data.push(self.mean[r] + lz);
            }
        }
        EmpiricalMeasure::new(data, d)
    }

    /// Marginal on coordinates `range`.
    pub fn marginal(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.dim() {
            return Err(Error::invalid("range", "marginal outside the dimension"));
        }
        let k = range.end - range.start;
        Self::new(
            self.mean[range.clone()].to_vec(),
            self.cov.view((range.start, range.start), (k, k)).into_owned(),
        )
    }
}

impl Law for GaussianMeasure {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn mean(&self) -> Vec<f64> {
        self.mean.clone()
    }
}

/// Mean and variance of the 1D granular model with `V = λx²/2`,
/// `W = (δ/2)(x−y)²` and unit diffusion. `t = ∞` returns the limit.
pub fn ou_granular_moments(lambda: f64, delta: f64, m0: f64, var0: f64, t: f64) -> Result<(f64, f64)> {
    ensure_finite("ou parameters", &[lambda, delta, m0, var0])?;
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid("t", "must be >= 0"));
    }
    if !(var0 > 0.0) {
        return Err(Error::invalid("var0", "must be > 0"));
    }
    let c = lambda + delta;
    if !(c > 0.0) {
        return Err(Error::invalid(
            "lambda + delta",
            "effective curvature must be > 0 for a stationary variance",
        ));
    }
    let var_inf = 1.0 / c;
    if t.is_infinite() {
        let mean = if lambda > 0.0 {
            0.0
        } else if lambda == 0.0 {
            m0
        } else {
            return Err(Error::invalid("lambda", "mean diverges for lambda < 0"));
        };
        return Ok((mean, var_inf));
    }
    let mean = m0 * (-lambda * t).exp();
    let var = var_inf + (var0 - var_inf) * (-2.0 * c * t).exp();
    Ok((mean, var))
}

fn quadratic_pair_coefficients(model: &GranularModel) -> Result<(f64, f64)> {
    let lambda = match model.potential() {
        PotentialSpec::Quadratic { lambda } => *lambda,
        _ => {
            return Err(Error::Unsupported(
                "Gaussian oracle requires a quadratic potential".into(),
            ))
        }
    };
    let delta = model.interaction().mean_coupling().ok_or_else(|| {
        Error::Unsupported("Gaussian oracle requires a quadratic interaction".into())
    })?;
    Ok((lambda, delta))
}

/// Law at time `t` of the granular model with quadratic `V`, `W` started
/// from a Gaussian. With `c = λ + δ`:
/// `m_t = e^{−λat} m₀`, `Σ_t = Σ_∞ + e^{−cat}(Σ₀ − Σ_∞)e^{−cat}`, `Σ_∞ = I/c`.
pub fn granular_moments(model: &GranularModel, init: &GaussianMeasure, t: f64) -> Result<GaussianMeasure> {
    ensure_dim("initial law", model.dimension(), init.dim())?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid("t", "must be finite and >= 0"));
    }
    let (lambda, delta) = quadratic_pair_coefficients(model)?;
    let c = lambda + delta;
    let d = model.dimension();
    let a = model.diffusion();
    let mean = expm(&(a * (-lambda * t))) * linalg::vector_from(init.mean());
    let cov = if c != 0.0 {
        let inf = DMatrix::identity(d, d) / c;
        let e = expm(&(a * (-c * t)));
        &inf + &e * (init.cov() - &inf) * &e
    } else {
        init.cov() + a * (2.0 * t)
    };
    GaussianMeasure::new(mean.as_slice().to_vec(), cov)
}

/// State matrices of a linear kinetic model: `(mean drift, fluctuation drift)`.
///
/// The mean-field coupling cancels in the mean equation, so the mean drift
/// omits it; the fluctuations around the mean see the full coupling.
pub fn kinetic_state_matrices(model: &KineticModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let c = model.interaction().mean_coupling().ok_or_else(|| {
        Error::Unsupported("kinetic Gaussian oracle requires a linear interaction".into())
    })?;
    let (d1, d2) = (model.d1(), model.d2());
    let d = d1 + d2;
    let mut mean = DMatrix::zeros(d, d);
    mean.view_mut((0, d1), (d1, d2)).copy_from(model.b());
    mean.view_mut((d1, d1), (d2, d2))
        .copy_from(&(-DMatrix::<f64>::identity(d2, d2)));
    mean.view_mut((d1, 0), (d2, d1))
        .copy_from(&(model.confinement() * -model.beta()));
    let mut fluct = mean.clone();
    fluct.view_mut((d1, 0), (d2, d1))
        .copy_from(&(model.confinement() * -model.beta() - model.b().transpose() * c));
    Ok((mean, fluct))
}

/// Noise covariance rate `diag(0, 2I)` of the kinetic model.
pub fn kinetic_noise(model: &KineticModel) -> DMatrix<f64> {
    let (d1, d2) = (model.d1(), model.d2());
    let mut q = DMatrix::zeros(d1 + d2, d1 + d2);
    for i in d1..d1 + d2 {
        q[(i, i)] = 2.0;
    }
    q
}

/// Gaussian law of `dZ = M(E Z) dt + F(Z − E Z) dt + noise` at time `t`:
/// the mean is propagated exactly by `e^{tM}` and the covariance solves
/// `Σ' = FΣ + ΣF* + Q` by classical RK4 with steps no larger than `max_step`.
pub fn linear_gaussian_flow(
    mean_matrix: &DMatrix<f64>,
    fluct_matrix: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    init: &GaussianMeasure,
    t: f64,
    max_step: f64,
) -> Result<GaussianMeasure> {
    let d = init.dim();
    for (what, m) in [("mean matrix", mean_matrix), ("state matrix", fluct_matrix), ("noise", noise)] {
        ensure_dim(what, d, m.nrows())?;
        ensure_dim(what, d, m.ncols())?;
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid("t", "must be finite and >= 0"));
    }
    if !(max_step > 0.0) {
        return Err(Error::invalid("max_step", "must be > 0"));
    }
    let mean = expm(&(mean_matrix * t)) * linalg::vector_from(init.mean());
    let steps = (t / max_step).ceil() as usize;
    let mut cov = init.cov().clone();
    if steps > 0 {
        let h = t / steps as f64;
        let rhs = |s: &DMatrix<f64>| fluct_matrix * s + s * fluct_matrix.transpose() + noise;
        for _ in 0..steps {
            let k1 = rhs(&cov);
            let k2 = rhs(&(&cov + &k1 * (0.5 * h)));
            let k3 = rhs(&(&cov + &k2 * (0.5 * h)));
            let k4 = rhs(&(&cov + &k3 * h));
            cov += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            cov = linalg::symmetrize(&cov);
            if linalg::check_spd("intermediate covariance", &cov).is_err() {
                return Err(Error::NotSpd {
                    what: format!(
                        "intermediate covariance (RK4 step {h} too large; reduce max_step)"
                    ),
                });
            }
        }
    }
    GaussianMeasure::new(mean.as_slice().to_vec(), cov)
}

/// Covariance at time `t` by Van Loan's block exponential; an exact
/// alternative to the RK4 path of [`linear_gaussian_flow`].
pub fn lyapunov_exact(fluct_matrix: &DMatrix<f64>, noise: &DMatrix<f64>, cov0: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let d = fluct_matrix.nrows();
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(&(-fluct_matrix));
    block.view_mut((0, d), (d, d)).copy_from(noise);
    block.view_mut((d, d), (d, d)).copy_from(&fluct_matrix.transpose());
    let e = expm(&(block * t));
    let phi_t = e.view((d, d), (d, d)).transpose();
    let integral = &phi_t * e.view((0, d), (d, d));
    let out = &phi_t * cov0 * phi_t.transpose() + integral;
    linalg::symmetrize(&out)
}

/// Law at time `t` of the linear kinetic model started from a Gaussian.
pub fn kinetic_moments(model: &KineticModel, init: &GaussianMeasure, t: f64) -> Result<GaussianMeasure> {
    ensure_dim("initial law", model.dimension(), init.dim())?;
    let (m, f) = kinetic_state_matrices(model)?;
    linear_gaussian_flow(&m, &f, &kinetic_noise(model), init, t, LYAPUNOV_MAX_STEP)
}

/// Law of either model family at time `t`.
pub fn law_at(model: &Model, init: &GaussianMeasure, t: f64) -> Result<GaussianMeasure> {
    match model {
        Model::Granular(g) => granular_moments(g, init, t),
        Model::Kinetic(k) => kinetic_moments(k, init, t),
    }
}

/// `W₂` between Gaussians.
pub fn gaussian_w2(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    ensure_dim("gaussian dimension", p.dim(), q.dim())?;
    let dm: f64 = p.mean.iter().zip(&q.mean).map(|(a, b)| (a - b).powi(2)).sum();
    let sq = linalg::sqrtm_psd(&q.cov);
    let cross = linalg::sqrtm_psd(&(&sq * &p.cov * &sq));
    let tr = (&p.cov + &q.cov - cross * 2.0).trace();
    Ok((dm + tr).max(0.0).sqrt())
}

/// Relative entropy `Ent(p|q) = KL(p‖q)` between Gaussians.
pub fn gaussian_entropy(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64> {
    ensure_dim("gaussian dimension", p.dim(), q.dim())?;
    let d = p.dim() as f64;
    let lq = q.cov.clone().cholesky().ok_or_else(|| Error::NotSpd {
        what: "reference covariance".into(),
    })?;
    let lp = p.cov.clone().cholesky().ok_or_else(|| Error::NotSpd {
        what: "covariance".into(),
    })?;
    let logdet = |l: &nalgebra::Cholesky<f64, nalgebra::Dyn>| -> f64 {
        2.0 * l.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let tr = lq.solve(&p.cov).trace();
    let dm = linalg::vector_from(&q.mean) - linalg::vector_from(&p.mean);
    let maha = dm.dot(&lq.solve(&dm));
    let kl = 0.5 * (tr - d + maha + logdet(&lq) - logdet(&lp));
    Ok(kl.max(0.0))
}

/// Unique stationary law of a model in the quadratic family.
///
/// Granular: `N(0, (λ+δ)⁻¹ I)`; requires `λ > 0` and `λ + δ > 0`.
/// Kinetic: `N(0, diag((θI + β(BB*)⁻¹)⁻¹, I))`, the Gibbs law of
/// `V̄(x, y) = (θ/2)|x|² + (β/2)|(BB*)^{-1/2}x|² + ½|y|²`.
pub fn stationary_measure(model: &Model) -> Result<GaussianMeasure> {
    match model {
        Model::Granular(g) => {
            let (lambda, delta) = quadratic_pair_coefficients(g)?;
            let c = lambda + delta;
            if !(c > 0.0) {
                return Err(Error::invalid(
                    "lambda + delta",
                    "effective curvature must be > 0",
                ));
            }
            if !(lambda > 0.0) {
                return Err(Error::invalid(
                    "lambda",
                    "must be > 0 for the stationary mean to be unique",
                ));
            }
            GaussianMeasure::isotropic(&vec![0.0; g.dimension()], 1.0 / c)
        }
        Model::Kinetic(k) => {
            let c = k.interaction().mean_coupling().ok_or_else(|| {
                Error::Unsupported("stationary law requires a linear interaction".into())
            })?;
            let (d1, d2) = (k.d1(), k.d2());
            let bbt = k.b() * k.b().transpose();
            let inv = bbt.try_inverse().ok_or_else(|| Error::Singular { what: "BB*".into() })?;
            let curvature = DMatrix::<f64>::identity(d1, d1) * c + inv * k.beta();
            if linalg::check_spd("kinetic confinement", &curvature).is_err() {
                return Err(Error::invalid(
                    "interaction",
                    "effective position curvature must be positive definite",
                ));
            }
            let cx = curvature
                .try_inverse()
                .ok_or_else(|| Error::Singular { what: "confinement".into() })?;
            let mut cov = DMatrix::zeros(d1 + d2, d1 + d2);
            cov.view_mut((0, 0), (d1, d1)).copy_from(&cx);
            for i in d1..d1 + d2 {
                cov[(i, i)] = 1.0;
            }
            GaussianMeasure::new(vec![0.0; d1 + d2], cov)
        }
    }
}

/// Linear map `x ↦ m_q + T(x − m_p)` pushing `p` onto `q` optimally.
pub fn gaussian_transport_map(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<DMatrix<f64>> {
    ensure_dim("gaussian dimension", p.dim(), q.dim())?;
    let sp = linalg::sqrtm_psd(&p.cov);
    let isp = linalg::inv_sqrtm_psd(&p.cov);
    let mid = linalg::sqrtm_psd(&(&sp * &q.cov * &sp));
    Ok(linalg::symmetrize(&(&isp * mid * &isp)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InteractionSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g1(m: f64, v: f64) -> GaussianMeasure {
        GaussianMeasure::isotropic(&[m], v).unwrap()
    }

    #[test]
    fn ou_examples() {
        for t in [0.0, 0.3, 2.0] {
            let (m, v) = ou_granular_moments(1.0, 0.0, 1.0, 1.0, t).unwrap();
            assert_relative_eq!(m, (-t).exp(), epsilon = 1e-15);
            assert_relative_eq!(v, 1.0, epsilon = 1e-15);
        }
        assert_eq!(ou_granular_moments(1.0, 0.0, 0.7, 2.5, 0.0).unwrap(), (0.7, 2.5));
        assert_eq!(ou_granular_moments(1.0, 1.0, 0.0, 1.0, f64::INFINITY).unwrap(), (0.0, 0.5));
        assert!(ou_granular_moments(1.0, -1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn granular_moments_agree_with_scalar_ode() {
        let m = GranularModel::with_unit_diffusion(
            1,
            PotentialSpec::Quadratic { lambda: 1.0 },
            InteractionSpec::QuadraticPair { delta: 0.2 },
        )
        .unwrap();
        let out = granular_moments(&m, &g1(3.0, 1.0), 1.3).unwrap();
        let (mean, var) = ou_granular_moments(1.0, 0.2, 3.0, 1.0, 1.3).unwrap();
        assert_relative_eq!(out.mean()[0], mean, epsilon = 1e-13);
        assert_relative_eq!(out.cov()[(0, 0)], var, epsilon = 1e-13);
    }

    #[test]
    fn w2_examples() {
        assert_relative_eq!(gaussian_w2(&g1(0.0, 1.0), &g1(2.0, 1.0)).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(gaussian_w2(&g1(0.4, 1.7), &g1(0.4, 1.7)).unwrap(), 0.0);
        assert_relative_eq!(gaussian_w2(&g1(0.0, 1.0), &g1(0.0, 4.0)).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(gaussian_entropy(&g1(0.3, 2.0), &g1(0.3, 2.0)).unwrap(), 0.0);
        assert_relative_eq!(gaussian_entropy(&g1(1.5, 1.0), &g1(0.0, 1.0)).unwrap(), 1.125, epsilon = 1e-14);
        let s2: f64 = 4.0;
        assert_relative_eq!(
            gaussian_entropy(&g1(0.0, s2), &g1(0.0, 1.0)).unwrap(),
            0.5 * (s2 - 1.0 - s2.ln()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn stationary_examples() {
        let g: Model = GranularModel::with_unit_diffusion(
            1,
            PotentialSpec::Quadratic { lambda: 1.0 },
            InteractionSpec::QuadraticPair { delta: 1.0 },
        )
        .unwrap()
        .into();
        assert_eq!(stationary_measure(&g).unwrap().cov()[(0, 0)], 0.5);
        let bad: Model = GranularModel::with_unit_diffusion(
            1,
            PotentialSpec::Quadratic { lambda: 1.0 },
            InteractionSpec::QuadraticPair { delta: -1.0 },
        )
        .unwrap()
        .into();
        assert!(stationary_measure(&bad).is_err());
        let k: Model = KineticModel::identity(1, 1.0, InteractionSpec::MeanAttraction { theta: 0.0 })
            .unwrap()
            .into();
        let s = stationary_measure(&k).unwrap();
        assert_relative_eq!(s.cov().clone(), DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn kinetic_stationary_is_fixed_point() {
        let k = KineticModel::identity(1, 1.0, InteractionSpec::MeanAttraction { theta: 0.0 }).unwrap();
        let init = GaussianMeasure::standard(2).unwrap();
        for t in [0.0, 0.5, 3.0] {
            let out = kinetic_moments(&k, &init, t).unwrap();
            assert_relative_eq!(out.cov().clone(), init.cov().clone(), epsilon = 1e-12);
        }
    }

    #[test]
    fn kinetic_long_time_covariance() {
        let k = KineticModel::identity(1, 1.0, InteractionSpec::MeanAttraction { theta: 0.1 }).unwrap();
        let init = GaussianMeasure::diagonal(&[1.0, 0.0], &[0.3, 2.0]).unwrap();
        let out = kinetic_moments(&k, &init, 60.0).unwrap();
        assert_relative_eq!(out.cov()[(0, 0)], 1.0 / 1.1, epsilon = 1e-9);
        assert_relative_eq!(out.cov()[(1, 1)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(out.cov()[(0, 1)], 0.0, epsilon = 1e-9);
        let s = stationary_measure(&k.into()).unwrap();
        assert_relative_eq!(s.cov()[(0, 0)], 0.909_091, epsilon = 1e-6);
    }

    #[test]
    fn rk4_agrees_with_block_exponential() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let k = KineticModel::new(b, 1.5, InteractionSpec::MeanAttraction { theta: 0.2 }).unwrap();
        let init = GaussianMeasure::diagonal(&[1.0, -1.0, 0.5, 0.0], &[0.5, 1.5, 2.0, 0.7]).unwrap();
        let (_, f) = kinetic_state_matrices(&k).unwrap();
        let exact = lyapunov_exact(&f, &kinetic_noise(&k), init.cov(), 1.7);
        let rk = kinetic_moments(&k, &init, 1.7).unwrap();
        assert_relative_eq!(rk.cov().clone(), exact, epsilon = 1e-9);
    }

    #[test]
    fn general_b_stationary_is_lyapunov_fixed_point() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 2.0, 1.0]);
        let k = KineticModel::new(b, 0.8, InteractionSpec::MeanAttraction { theta: 0.3 }).unwrap();
        let s = stationary_measure(&k.clone().into()).unwrap();
        let (_, f) = kinetic_state_matrices(&k).unwrap();
        let resid = &f * s.cov() + s.cov() * f.transpose() + kinetic_noise(&k);
        assert!(resid.amax() < 1e-12, "{resid}");
    }

    #[test]
    fn ou_w2_decays_exactly() {
        let m = GranularModel::with_unit_diffusion(
            1,
            PotentialSpec::Quadratic { lambda: 1.0 },
            InteractionSpec::none(),
        )
        .unwrap();
        let inf = stationary_measure(&m.clone().into()).unwrap();
        for t in [0.0, 0.5, 1.0, 4.0] {
            let mu = granular_moments(&m, &g1(1.0, 1.0), t).unwrap();
            assert_relative_eq!(gaussian_w2(&mu, &inf).unwrap(), (-t).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn transport_map_pushes_forward() {
        let p = GaussianMeasure::new(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let q = GaussianMeasure::new(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5])).unwrap();
        let t = gaussian_transport_map(&p, &q).unwrap();
        assert_relative_eq!(&t * p.cov() * &t, q.cov().clone(), epsilon = 1e-10);
    }

    #[test]
    fn samples_match_moments() {
        let g = GaussianMeasure::new(vec![1.0, -2.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0])).unwrap();
        let s = g.sample(40_000, 3).unwrap();
        let fit = s.moments();
        assert!((fit.mean[0] - 1.0).abs() < 0.03);
        assert!((fit.cov[(0, 1)] - 0.6).abs() < 0.05);
        assert_eq!(s, g.sample(40_000, 3).unwrap());
    }

    fn arb_gaussian() -> impl Strategy<Value = GaussianMeasure> {
        (-2.0f64..2.0, -2.0f64..2.0, 0.2f64..3.0, 0.2f64..3.0, -0.9f64..0.9).prop_map(|(m1, m2, v1, v2, rho)| {
            let c = rho * (v1 * v2).sqrt();
            GaussianMeasure::new(vec![m1, m2], DMatrix::from_row_slice(2, 2, &[v1, c, c, v2])).unwrap()
        })
    }

    proptest! {
        #[test]
        fn w2_is_a_metric(p in arb_gaussian(), q in arb_gaussian(), r in arb_gaussian()) {
            let pq = gaussian_w2(&p, &q).unwrap();
            let qp = gaussian_w2(&q, &p).unwrap();
            prop_assert!((pq - qp).abs() < 1e-10);
            prop_assert!(gaussian_w2(&p, &p).unwrap() < 1e-6);
            let pr = gaussian_w2(&p, &r).unwrap();
            let rq = gaussian_w2(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
        }

        #[test]
        fn entropy_is_nonnegative(p in arb_gaussian(), q in arb_gaussian()) {
            prop_assert!(gaussian_entropy(&p, &q).unwrap() >= 0.0);
            prop_assert!(gaussian_entropy(&p, &p).unwrap() < 1e-12);
        }

        #[test]
        fn talagrand_for_standard_reference(p in arb_gaussian()) {
            let n = GaussianMeasure::standard(2).unwrap();
            let w = gaussian_w2(&p, &n).unwrap();
            prop_assert!(w * w <= 2.0 * gaussian_entropy(&p, &n).unwrap() + 1e-12);
        }

        #[test]
        fn granular_stationary_is_invariant(lambda in 0.1f64..3.0, delta in -0.05f64..2.0, t in 0.0f64..5.0) {
            let m = GranularModel::with_unit_diffusion(
                2,
                PotentialSpec::Quadratic { lambda },
                InteractionSpec::QuadraticPair { delta },
            ).unwrap();
            let s = stationary_measure(&m.clone().into()).unwrap();
            let out = granular_moments(&m, &s, t).unwrap();
            prop_assert!((out.cov() - s.cov()).amax() < 1e-12);
            prop_assert!(out.mean().iter().all(|v| v.abs() < 1e-15));
        }
    }
}
