//! Drift/diffusion model families and their parameter assumptions.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite};
use crate::linalg::{self, serde_matrix};
use crate::particles::EmpiricalMeasure;
use crate::{Error, Result};

/// A probability law the mean-field terms can be evaluated against.
pub trait Law {
    fn dim(&self) -> usize;

    fn mean(&self) -> Vec<f64>;

    /// Equal-weight atoms, when the law is an empirical measure.
    fn atoms(&self) -> Option<&EmpiricalMeasure> {
        None
    }
}

/// Confining potential `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `V(x) = (λ/2)|x|²`.
    Quadratic { lambda: f64 },
    /// `V(x) = a4|x|⁴ − a2|x|²`.
    DoubleWell { a4: f64, a2: f64 },
}

impl PotentialSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PotentialSpec::Quadratic { lambda } => {
                ensure_finite("potential.lambda", &[lambda])?;
            }
            PotentialSpec::DoubleWell { a4, a2 } => {
                ensure_finite("potential coefficients", &[a4, a2])?;
                if a4 <= 0.0 {
                    return Err(Error::invalid("a4", "double-well quartic coefficient must be > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match *self {
            PotentialSpec::Quadratic { lambda } => 0.5 * lambda * r2,
            PotentialSpec::DoubleWell { a4, a2 } => a4 * r2 * r2 - a2 * r2,
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let c = match *self {
            PotentialSpec::Quadratic { lambda } => lambda,
            PotentialSpec::DoubleWell { a4, a2 } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                4.0 * a4 * r2 - 2.0 * a2
            }
        };
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi;
        }
    }

    /// Global lower bound on the Hessian spectrum, `Hess_V ≥ κ I`.
    pub fn hessian_lower_bound(&self) -> f64 {
        match *self {
            PotentialSpec::Quadratic { lambda } => lambda,
            // Hess = 4a4(|x|²I + 2xxᵀ) − 2a2 I is smallest at the origin.
            PotentialSpec::DoubleWell { a2, .. } => -2.0 * a2,
        }
    }

    pub fn quadratic_curvature(&self) -> Option<f64> {
        match *self {
            PotentialSpec::Quadratic { lambda } => Some(lambda),
            PotentialSpec::DoubleWell { .. } => None,
        }
    }
}

/// Gradient `∇_x W(x, z)` of a user-supplied pair potential.
pub type PairGradient = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
/// Value `W(x, z)` of a user-supplied pair potential.
pub type PairValue = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// General pair interaction given by callbacks. Evaluated at O(N²) per step
/// and never assumption-checked.
#[derive(Clone)]
pub struct PairwiseInteraction {
    pub gradient: Arc<PairGradient>,
    pub value: Option<Arc<PairValue>>,
}

impl fmt::Debug for PairwiseInteraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairwiseInteraction").finish_non_exhaustive()
    }
}

impl PartialEq for PairwiseInteraction {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.gradient, &other.gradient)
    }
}

/// Interaction term of the drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionSpec {
    /// `W(x, y) = (δ/2)|x − y|²`, so `∇_x(W⊛μ)(x) = δ(x − mean(μ))`.
    QuadraticPair { delta: f64 },
    /// `V(x, μ) = (θ/2)|x − mean_x(μ)|²`.
    MeanAttraction { theta: f64 },
    #[serde(skip)]
    Pairwise(PairwiseInteraction),
}

impl InteractionSpec {
    pub fn none() -> Self {
        InteractionSpec::QuadraticPair { delta: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InteractionSpec::QuadraticPair { delta } => ensure_finite("interaction.delta", &[delta]),
            InteractionSpec::MeanAttraction { theta } => {
                ensure_finite("interaction.theta", &[theta])?;
                if theta < 0.0 {
                    return Err(Error::invalid("theta", "mean attraction requires theta >= 0"));
                }
                Ok(())
            }
            InteractionSpec::Pairwise(_) => Ok(()),
        }
    }

    /// Coefficient `c` when the interaction gradient is `c(x − mean)`.
    pub fn mean_coupling(&self) -> Option<f64> {
        match *self {
            InteractionSpec::QuadraticPair { delta } => Some(delta),
            InteractionSpec::MeanAttraction { theta } => Some(theta),
            InteractionSpec::Pairwise(_) => None,
        }
    }

    pub fn is_interacting(&self) -> bool {
        self.mean_coupling() != Some(0.0)
    }

    /// Pair potential value, for Hamiltonian evaluation.
    pub fn pair_value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            InteractionSpec::QuadraticPair { delta } => {
                let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                Ok(0.5 * delta * r2)
            }
            InteractionSpec::MeanAttraction { .. } => Err(Error::Unsupported(
                "mean attraction is a law-dependent potential, not a pair potential".into(),
            )),
            InteractionSpec::Pairwise(p) => p
                .value
                .as_ref()
                .map(|v| v(x, y))
                .ok_or_else(|| Error::Unsupported("pairwise interaction without value callback".into())),
        }
    }

    /// Writes `∇_x(W⊛μ)(x)` into `out`. `x` holds the first `out.len()`
    /// coordinates of the evaluation point; `law_mean` the law's mean over
    /// the same coordinates.
    fn mean_field_gradient(
        &self,
        x: &[f64],
        law_mean: &[f64],
        atoms: Option<&EmpiricalMeasure>,
        out: &mut [f64],
    ) -> Result<()> {
        match self {
            InteractionSpec::Pairwise(p) => {
                let atoms = atoms.ok_or_else(|| {
                    Error::Unsupported("pairwise interaction requires an empirical law".into())
                })?;
                out.fill(0.0);
                let mut g = vec![0.0; out.len()];
                for j in 0..atoms.n() {
                    (p.gradient)(x, atoms.point(j), &mut g);
                    for (o, gi) in out.iter_mut().zip(&g) {
                        *o += gi;
                    }
                }
                let inv = 1.0 / atoms.n() as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
            other => {
                let c = other.mean_coupling().unwrap_or(0.0);
                for ((o, xi), mi) in out.iter_mut().zip(x).zip(law_mean) {
                    *o = c * (xi - mi);
                }
            }
        }
        Ok(())
    }
}

/// Outcome of a parameter-assumption check. `margin > 0` exactly when the
/// assumption holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub satisfied: bool,
    pub margin: f64,
    pub detail: String,
}

impl AssumptionReport {
    fn from_margin(margin: f64, detail: String) -> Self {
        Self {
            satisfied: margin > 0.0,
            margin,
            detail,
        }
    }
}

/// Granular media type model `dX = √(2a) dB − a∇{V + W⊛L(X)}(X) dt` with a
/// constant symmetric diffusion matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GranularModelRaw", into = "GranularModelRaw")]
pub struct GranularModel {
    dimension: usize,
    potential: PotentialSpec,
    interaction: InteractionSpec,
    diffusion: DMatrix<f64>,
    lambda_a: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GranularModelRaw {
    dimension: usize,
    potential: PotentialSpec,
    #[serde(default = "InteractionSpec::none")]
    interaction: InteractionSpec,
    /// Defaults to the identity.
    #[serde(default, with = "opt_matrix")]
    diffusion: Option<DMatrix<f64>>,
}

impl TryFrom<GranularModelRaw> for GranularModel {
    type Error = Error;

    fn try_from(raw: GranularModelRaw) -> Result<Self> {
        let a = raw
            .diffusion
            .unwrap_or_else(|| DMatrix::identity(raw.dimension, raw.dimension));
        GranularModel::new(raw.dimension, raw.potential, raw.interaction, a)
    }
}

impl From<GranularModel> for GranularModelRaw {
    fn from(m: GranularModel) -> Self {
        Self {
            dimension: m.dimension,
            potential: m.potential,
            interaction: m.interaction,
            diffusion: Some(m.diffusion),
        }
    }
}

mod opt_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => crate::linalg::serde_matrix::serialize(m, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.map(|r| crate::linalg::serde_matrix::from_rows(&r))
            .transpose()
            .map_err(serde::de::Error::custom)
    }
}

impl GranularModel {
    pub fn new(
        dimension: usize,
        potential: PotentialSpec,
        interaction: InteractionSpec,
        diffusion: DMatrix<f64>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("dimension", "must be at least 1"));
        }
        potential.validate()?;
        interaction.validate()?;
        ensure_dim("diffusion rows", dimension, diffusion.nrows())?;
        ensure_dim("diffusion cols", dimension, diffusion.ncols())?;
        ensure_finite("diffusion", diffusion.as_slice())?;
        if !linalg::is_symmetric(&diffusion, linalg::SYMMETRY_TOL) {
            return Err(Error::NotSpd {
                what: "diffusion matrix (not symmetric)".into(),
            });
        }
        let lambda_a = linalg::sym_eigenvalues(&diffusion)[0];
        if lambda_a < -1e-12 * diffusion.amax().max(1.0) {
            return Err(Error::NotSpd {
                what: "diffusion matrix (negative eigenvalue)".into(),
            });
        }
        Ok(Self {
            dimension,
            potential,
            interaction,
            diffusion,
            lambda_a: lambda_a.max(0.0),
        })
    }

    /// Model with identity diffusion.
    pub fn with_unit_diffusion(
        dimension: usize,
        potential: PotentialSpec,
        interaction: InteractionSpec,
    ) -> Result<Self> {
        Self::new(dimension, potential, interaction, DMatrix::identity(dimension, dimension))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn interaction(&self) -> &InteractionSpec {
        &self.interaction
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    /// Smallest eigenvalue of the diffusion matrix.
    pub fn lambda_a(&self) -> f64 {
        self.lambda_a
    }

    /// Uniform ellipticity `a ≥ λ_a I` with `λ_a > 0`.
    pub fn check_h1(&self) -> AssumptionReport {
        AssumptionReport::from_margin(
            self.lambda_a,
            format!("smallest diffusion eigenvalue λ_a = {}", self.lambda_a),
        )
    }

    pub fn has_unit_diffusion(&self) -> bool {
        let id = DMatrix::<f64>::identity(self.dimension, self.dimension);
        (&self.diffusion - id).amax() <= 1e-12
    }

    /// Drift given the mean of the law (and its atoms for pairwise interactions).
    pub(crate) fn drift_into(
        &self,
        x: &[f64],
        law_mean: &[f64],
        atoms: Option<&EmpiricalMeasure>,
        grad: &mut [f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.potential.gradient_into(x, out);
        self.interaction
            .mean_field_gradient(x, law_mean, atoms, grad)?;
        for (o, g) in out.iter_mut().zip(grad.iter()) {
            *o += g;
        }
        // out ← −a·out
        let d = self.dimension;
        grad.copy_from_slice(out);
        for i in 0..d {
            out[i] = -(0..d).map(|j| self.diffusion[(i, j)] * grad[j]).sum::<f64>();
        }
        Ok(())
    }
}

/// Drift `b(x, μ) = −a(∇V(x) + ∇_x(W⊛μ)(x))` of the granular model.
pub fn drift_granular(model: &GranularModel, x: &[f64], mu: &dyn Law) -> Result<Vec<f64>> {
    ensure_dim("state point", model.dimension, x.len())?;
    ensure_dim("law", model.dimension, mu.dim())?;
    ensure_finite("state point", x)?;
    let mean = mu.mean();
    ensure_finite("law mean", &mean)?;
    let mut out = vec![0.0; x.len()];
    let mut scratch = vec![0.0; x.len()];
    model.drift_into(x, &mean, mu.atoms(), &mut scratch, &mut out)?;
    ensure_finite("drift", &out)?;
    Ok(out)
}

/// Kinetic McKean–Vlasov system on `R^{d1} × R^{d2}`:
/// `dX = BY dt`, `dY = √2 dW − {B*∇V(·, L)(X) + βB*(BB*)⁻¹X + Y} dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KineticModelRaw", into = "KineticModelRaw")]
pub struct KineticModel {
    d1: usize,
    d2: usize,
    b: DMatrix<f64>,
    beta: f64,
    interaction: InteractionSpec,
    /// `B*(BB*)⁻¹`, d2 × d1.
    confinement: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KineticModelRaw {
    #[serde(with = "serde_matrix")]
    b: DMatrix<f64>,
    beta: f64,
    #[serde(default = "InteractionSpec::none")]
    interaction: InteractionSpec,
}

impl TryFrom<KineticModelRaw> for KineticModel {
    type Error = Error;

    fn try_from(raw: KineticModelRaw) -> Result<Self> {
        KineticModel::new(raw.b, raw.beta, raw.interaction)
    }
}

impl From<KineticModel> for KineticModelRaw {
    fn from(m: KineticModel) -> Self {
        Self {
            b: m.b,
            beta: m.beta,
            interaction: m.interaction,
        }
    }
}

impl KineticModel {
    pub fn new(b: DMatrix<f64>, beta: f64, interaction: InteractionSpec) -> Result<Self> {
        ensure_finite("B", b.as_slice())?;
        ensure_finite("beta", &[beta])?;
        if beta <= 0.0 {
            return Err(Error::invalid("beta", "must be > 0"));
        }
        interaction.validate()?;
        let bbt = &b * b.transpose();
        let inv = bbt
            .clone()
            .try_inverse()
            .filter(|_| linalg::sym_eigenvalues(&bbt)[0] > 1e-12 * bbt.amax().max(1.0))
            .ok_or_else(|| Error::Singular { what: "BB*".into() })?;
        let confinement = b.transpose() * inv;
        Ok(Self {
            d1: b.nrows(),
            d2: b.ncols(),
            b,
            beta,
            interaction,
            confinement,
        })
    }

    /// `B = I_m`, the degenerate granular media setting.
    pub fn identity(m: usize, beta: f64, interaction: InteractionSpec) -> Result<Self> {
        Self::new(DMatrix::identity(m, m), beta, interaction)
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    pub fn dimension(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn interaction(&self) -> &InteractionSpec {
        &self.interaction
    }

    /// `B*(BB*)⁻¹`.
    pub fn confinement(&self) -> &DMatrix<f64> {
        &self.confinement
    }

    pub(crate) fn drift_into(
        &self,
        state: &[f64],
        law_mean: &[f64],
        atoms: Option<&EmpiricalMeasure>,
        grad: &mut [f64],
        out: &mut [f64],
    ) -> Result<()> {
        let (x, y) = state.split_at(self.d1);
        let (ox, oy) = out.split_at_mut(self.d1);
        for i in 0..self.d1 {
            ox[i] = (0..self.d2).map(|j| self.b[(i, j)] * y[j]).sum();
        }
        let grad = &mut grad[..self.d1];
        self.interaction
            .mean_field_gradient(x, &law_mean[..self.d1], atoms, grad)?;
        for k in 0..self.d2 {
            let mut acc = y[k];
            for i in 0..self.d1 {
                acc += self.b[(i, k)] * grad[i] + self.beta * self.confinement[(k, i)] * x[i];
            }
            oy[k] = -acc;
        }
        Ok(())
    }
}

/// Drift of the kinetic system, returned as `(x-component, y-component)`.
pub fn drift_kinetic(
    model: &KineticModel,
    x: &[f64],
    y: &[f64],
    mu: &dyn Law,
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure_dim("position", model.d1, x.len())?;
    ensure_dim("velocity", model.d2, y.len())?;
    ensure_dim("law", model.dimension(), mu.dim())?;
    let mut state = x.to_vec();
    state.extend_from_slice(y);
    ensure_finite("state", &state)?;
    let mean = mu.mean();
    let mut out = vec![0.0; state.len()];
    let mut scratch = vec![0.0; state.len()];
    model.drift_into(&state, &mean, mu.atoms(), &mut scratch, &mut out)?;
    ensure_finite("drift", &out)?;
    let y_part = out.split_off(model.d1);
    Ok((out, y_part))
}

/// Either model family; the unit of configuration and simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Granular(GranularModel),
    Kinetic(KineticModel),
}

impl Model {
    /// Dimension of the simulated state.
    pub fn dimension(&self) -> usize {
        match self {
            Model::Granular(m) => m.dimension(),
            Model::Kinetic(m) => m.dimension(),
        }
    }

    pub fn interaction(&self) -> &InteractionSpec {
        match self {
            Model::Granular(m) => m.interaction(),
            Model::Kinetic(m) => m.interaction(),
        }
    }
}

impl From<GranularModel> for Model {
    fn from(m: GranularModel) -> Self {
        Model::Granular(m)
    }
}

impl From<KineticModel> for Model {
    fn from(m: KineticModel) -> Self {
        Model::Kinetic(m)
    }
}

/// Granular media condition `λ + δ₁ − δ₂ > 0` where `Hess_V ≥ λ`,
/// `Hess_W ≥ δ₁` and `‖Hess_W‖ ≤ δ₂`.
pub fn check_example21(lambda: f64, delta1: f64, delta2: f64) -> AssumptionReport {
    if delta2 < 0.0 {
        return AssumptionReport {
            satisfied: false,
            margin: delta2,
            detail: format!("‖Hess_W‖ bound δ₂ = {delta2} must be nonnegative"),
        };
    }
    let margin = lambda + delta1 - delta2;
    AssumptionReport::from_margin(margin, format!("λ + δ₁ − δ₂ = {margin}"))
}

/// Upper end of the admissible interval for `θ` in the degenerate granular
/// media equation: `2β / (1 + 3√(2 + 2β + β²))`.
pub fn example22_theta_bound(beta: f64) -> f64 {
    2.0 * beta / (1.0 + 3.0 * (2.0 + 2.0 * beta + beta * beta).sqrt())
}

/// Degenerate granular media condition `θ ∈ (0, 2β/(1 + 3√(2+2β+β²)))`.
pub fn check_example22(beta: f64, theta: f64) -> Result<AssumptionReport> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid("beta", "must be finite and > 0"));
    }
    if !theta.is_finite() {
        return Err(Error::invalid("theta", "must be finite"));
    }
    let bound = example22_theta_bound(beta);
    if theta <= 0.0 {
        return Ok(AssumptionReport {
            satisfied: false,
            margin: theta,
            detail: format!("θ must be strictly positive (bound {bound})"),
        });
    }
    Ok(AssumptionReport::from_margin(
        bound - theta,
        format!("θ = {theta} against bound {bound}"),
    ))
}

/// Options for [`compute_r0`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct R0Options {
    pub step: f64,
    pub radius: f64,
}

impl Default for R0Options {
    fn default() -> Self {
        Self {
            step: 1e-2,
            radius: 50.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct R0Estimate {
    /// Quadrature value over `[0, radius]` times `‖Hess_W‖/4`.
    pub value: f64,
    /// Geometric bound on the neglected tail, same scaling.
    pub tail_bound: f64,
}

/// `r₀ = (‖Hess_W‖/4) ∫₀^∞ exp((1/4)∫₀ᵗ b₀(s) ds) dt`, truncated at
/// `opts.radius`.
///
/// The inner integral is accumulated panel by panel with Simpson's rule and
/// the outer one uses composite Simpson on the same grid. The tail beyond the
/// radius is bounded by fitting the log-decay rate of the outer integrand over
/// the last unit of time; a non-decaying integrand there is reported as
/// [`Error::DivergentTail`].
pub fn compute_r0(hess_w_norm: f64, b0: impl Fn(f64) -> f64, opts: R0Options) -> Result<R0Estimate> {
    if !hess_w_norm.is_finite() || hess_w_norm < 0.0 {
        return Err(Error::invalid("hess_w_norm", "must be finite and >= 0"));
    }
    if !(opts.step > 0.0) || !(opts.radius > 0.0) {
        return Err(Error::invalid("r0 options", "step and radius must be > 0"));
    }
    if hess_w_norm == 0.0 {
        return Ok(R0Estimate {
            value: 0.0,
            tail_bound: 0.0,
        });
    }
    // Even number of panels for composite Simpson.
    let mut panels = (opts.radius / opts.step).ceil() as usize;
    panels += panels % 2;
    let h = opts.radius / panels as f64;

    let mut log_g = Vec::with_capacity(panels + 1);
    let mut inner = 0.0;
    log_g.push(0.0);
    for i in 0..panels {
        let t0 = i as f64 * h;
        inner += h / 6.0 * (b0(t0) + 4.0 * b0(t0 + 0.5 * h) + b0(t0 + h));
        log_g.push(0.25 * inner);
    }
    if log_g.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            what: "b0 integral".into(),
        });
    }

    let g: Vec<f64> = log_g.iter().map(|l| l.exp()).collect();
    let mut outer = g[0] + g[panels];
    for (i, gi) in g.iter().enumerate().take(panels).skip(1) {
        outer += if i % 2 == 1 { 4.0 * gi } else { 2.0 * gi };
    }
    outer *= h / 3.0;

    let back = ((1.0 / h).round() as usize).clamp(1, panels);
    let window = back as f64 * h;
    let decay = (log_g[panels - back] - log_g[panels]) / window;
    let tail_decreasing = log_g[panels - back..]
        .windows(2)
        .all(|w| w[1] < w[0]);
    if !(decay > 0.0) || !tail_decreasing || !outer.is_finite() {
        return Err(Error::DivergentTail {
            radius: opts.radius,
        });
    }
    let tail = g[panels] / decay;
    let scale = hess_w_norm / 4.0;
    Ok(R0Estimate {
        value: scale * outer,
        tail_bound: scale * tail,
    })
}

/// Piecewise-linear interpolant of a tabulated `b₀`, held constant outside the
/// table.
#[derive(Clone, Debug, PartialEq)]
pub struct Tabulated {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl Tabulated {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        ensure_dim("tabulated values", grid.len(), values.len())?;
        if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid", "must be non-empty and strictly increasing"));
        }
        ensure_finite("tabulated values", &values)?;
        Ok(Self { grid, values })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.grid.len();
        if t <= self.grid[0] {
            return self.values[0];
        }
        if t >= self.grid[n - 1] {
            return self.values[n - 1];
        }
        let k = self.grid.partition_point(|&g| g <= t) - 1;
        let w = (t - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::GaussianMeasure;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn point_law(mean: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_rows(&[mean.to_vec()]).unwrap()
    }

    fn granular(lambda: f64, delta: f64) -> GranularModel {
        GranularModel::with_unit_diffusion(
            1,
            PotentialSpec::Quadratic { lambda },
            InteractionSpec::QuadraticPair { delta },
        )
        .unwrap()
    }

    #[test]
    fn granular_drift_examples() {
        let d = drift_granular(&granular(1.0, 0.0), &[2.0], &point_law(&[5.0])).unwrap();
        assert_eq!(d, vec![-2.0]);
        let d = drift_granular(&granular(1.0, 1.0), &[1.0], &point_law(&[1.0])).unwrap();
        assert_eq!(d, vec![-1.0]);
        let d = drift_granular(&granular(0.0, 2.0), &[0.0], &point_law(&[3.0])).unwrap();
        assert_eq!(d, vec![6.0]);
    }

    #[test]
    fn granular_drift_accepts_gaussian_law() {
        let mu = GaussianMeasure::isotropic(&[3.0], 2.0).unwrap();
        let d = drift_granular(&granular(0.0, 2.0), &[0.0], &mu).unwrap();
        assert_eq!(d, vec![6.0]);
    }

    #[test]
    fn granular_drift_rejects_bad_input() {
        let m = granular(1.0, 0.0);
        assert!(matches!(
            drift_granular(&m, &[1.0, 2.0], &point_law(&[0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            drift_granular(&m, &[f64::NAN], &point_law(&[0.0])),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn anisotropic_diffusion_scales_gradient() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let m = GranularModel::new(
            2,
            PotentialSpec::Quadratic { lambda: 1.0 },
            InteractionSpec::none(),
            a,
        )
        .unwrap();
        let d = drift_granular(&m, &[1.0, 1.0], &point_law(&[0.0, 0.0])).unwrap();
        assert_eq!(d, vec![-2.0, -0.5]);
        assert_eq!(m.lambda_a(), 0.5);
    }

    #[test]
    fn double_well_gradient() {
        let v = PotentialSpec::DoubleWell { a4: 1.0, a2: 1.0 };
        let mut g = [0.0];
        v.gradient_into(&[2.0], &mut g);
        // 4x³ − 2x at x = 2
        assert_eq!(g[0], 28.0);
        assert!(PotentialSpec::DoubleWell { a4: 0.0, a2: 1.0 }.validate().is_err());
    }

    #[test]
    fn pairwise_callback_averages_over_atoms() {
        let grad: Arc<PairGradient> = Arc::new(|x: &[f64], z: &[f64], out: &mut [f64]| {
            out[0] = x[0] - z[0];
        });
        let m = GranularModel::with_unit_diffusion(
            1,
            PotentialSpec::Quadratic { lambda: 0.0 },
            InteractionSpec::Pairwise(PairwiseInteraction {
                gradient: grad,
                value: None,
            }),
        )
        .unwrap();
        let mu = EmpiricalMeasure::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(drift_granular(&m, &[0.0], &mu).unwrap(), vec![1.0]);
        let g = GaussianMeasure::isotropic(&[0.0], 1.0).unwrap();
        assert!(drift_granular(&m, &[0.0], &g).is_err());
    }

    fn kinetic(beta: f64, theta: f64) -> KineticModel {
        KineticModel::identity(1, beta, InteractionSpec::MeanAttraction { theta }).unwrap()
    }

    #[test]
    fn kinetic_drift_examples() {
        let law = point_law(&[0.0, 0.0]);
        let (dx, dy) = drift_kinetic(&kinetic(1.0, 0.0), &[1.0], &[0.0], &law).unwrap();
        assert_eq!((dx[0], dy[0]), (0.0, -1.0));
        let (dx, dy) = drift_kinetic(&kinetic(2.0, 1.0), &[0.0], &[1.0], &law).unwrap();
        assert_eq!((dx[0], dy[0]), (1.0, -1.0));
        let (dx, dy) = drift_kinetic(&kinetic(1.0, 0.5), &[2.0], &[0.0], &law).unwrap();
        assert_eq!((dx[0], dy[0]), (0.0, -3.0));
    }

    #[test]
    fn kinetic_rejects_singular_b() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(matches!(
            KineticModel::new(b, 1.0, InteractionSpec::none()),
            Err(Error::Singular { .. })
        ));
        assert!(KineticModel::identity(1, 0.0, InteractionSpec::none()).is_err());
    }

    #[test]
    fn example21_reports() {
        let r = check_example21(3.0, 0.0, 1.0);
        assert!(r.satisfied);
        assert_eq!(r.margin, 2.0);
        let r = check_example21(1.0, 0.0, 1.0);
        assert!(!r.satisfied);
        assert_eq!(r.margin, 0.0);
        let r = check_example21(1.0, 1.0, 1.0);
        assert!(r.satisfied);
        assert_eq!(r.margin, 1.0);
    }

    #[test]
    fn example22_reports() {
        let bound = 2.0 / (1.0 + 3.0 * 5f64.sqrt());
        assert_relative_eq!(bound, 0.259_463, epsilon = 1e-6);
        let r = check_example22(1.0, 0.1).unwrap();
        assert!(r.satisfied);
        assert_relative_eq!(r.margin, bound - 0.1, epsilon = 1e-15);
        assert!(!check_example22(1.0, 0.26).unwrap().satisfied);
        let r = check_example22(1.0, 0.0).unwrap();
        assert!(!r.satisfied);
        assert!(r.margin <= 0.0);
        assert!(check_example22(0.0, 0.1).is_err());
    }

    #[test]
    fn example22_margin_monotone_on_grid() {
        let betas: Vec<f64> = (1..=20).map(|i| 0.25 * i as f64).collect();
        let thetas: Vec<f64> = (1..=20).map(|i| 0.02 * i as f64).collect();
        for &b in &betas {
            for w in thetas.windows(2) {
                let m0 = check_example22(b, w[0]).unwrap().margin;
                let m1 = check_example22(b, w[1]).unwrap().margin;
                assert!(m1 < m0);
            }
        }
        for &t in &thetas {
            for w in betas.windows(2) {
                let m0 = check_example22(w[0], t).unwrap().margin;
                let m1 = check_example22(w[1], t).unwrap().margin;
                assert!(m1 > m0);
            }
        }
    }

    #[test]
    fn r0_examples() {
        let opts = R0Options::default();
        assert_eq!(compute_r0(0.0, |_| 1.0, opts).unwrap().value, 0.0);
        let r = compute_r0(4.0, |_| -4.0, opts).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-9);
        assert!(r.tail_bound < 1e-20);
        let r = compute_r0(2.0, |_| -4.0, opts).unwrap();
        assert_relative_eq!(r.value, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn r0_detects_divergence() {
        assert!(matches!(
            compute_r0(1.0, |_| 0.0, R0Options::default()),
            Err(Error::DivergentTail { .. })
        ));
        assert!(matches!(
            compute_r0(1.0, |_| 1.0, R0Options::default()),
            Err(Error::DivergentTail { .. })
        ));
    }

    #[test]
    fn r0_with_tabulated_b0() {
        // b0(s) = −8s gives ∫₀^∞ e^{−t²} dt = √π/2.
        let grid: Vec<f64> = (0..=6000).map(|i| i as f64 * 0.01).collect();
        let vals: Vec<f64> = grid.iter().map(|s| -8.0 * s).collect();
        let tab = Tabulated::new(grid, vals).unwrap();
        let r = compute_r0(4.0, |t| tab.eval(t), R0Options::default()).unwrap();
        assert_relative_eq!(r.value, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-8);
    }

    proptest! {
        #[test]
        fn granular_drift_is_affine(
            lambda in -2.0f64..2.0, delta in -2.0f64..2.0,
            x1 in -5.0f64..5.0, x2 in -5.0f64..5.0, alpha in 0.0f64..1.0, m in -3.0f64..3.0,
        ) {
            let model = granular(lambda, delta);
            let law = point_law(&[m]);
            let d1 = drift_granular(&model, &[x1], &law).unwrap()[0];
            let d2 = drift_granular(&model, &[x2], &law).unwrap()[0];
            let mix = drift_granular(&model, &[alpha * x1 + (1.0 - alpha) * x2], &law).unwrap()[0];
            prop_assert!((mix - (alpha * d1 + (1.0 - alpha) * d2)).abs() < 1e-10);
        }

        #[test]
        fn granular_drift_depends_on_mean_only(
            delta in -2.0f64..2.0, x in -5.0f64..5.0, m in -3.0f64..3.0, s in 0.1f64..3.0,
        ) {
            let model = granular(1.0, delta);
            let a = EmpiricalMeasure::from_rows(&[vec![m - s], vec![m + s]]).unwrap();
            let b = point_law(&[m]);
            let da = drift_granular(&model, &[x], &a).unwrap()[0];
            let db = drift_granular(&model, &[x], &b).unwrap()[0];
            prop_assert!((da - db).abs() < 1e-12);
        }

        #[test]
        fn r0_is_linear_in_hess_norm(k in 0.1f64..10.0, rate in 1.0f64..8.0) {
            let opts = R0Options::default();
            let base = compute_r0(1.0, |_| -rate, opts).unwrap().value;
            let scaled = compute_r0(k, |_| -rate, opts).unwrap().value;
            prop_assert!((scaled - k * base).abs() <= 1e-12 * scaled.abs().max(1.0));
        }
    }
}
