//! Coupling by change of measure for linear kinetic systems
//! `dX = (AX + BY) dt`, `dY = Z((X, Y), L) dt + σ dW`.
//!
//! A second process `(X̄, Ȳ)` started from the other initial law receives a
//! deterministic control so that both processes coincide at time `T`. The
//! Girsanov density `R` of the control turns the law of `(X̄, Ȳ)` into the
//! genuine solution started from the other law, and `E_Q[log R]` bounds the
//! relative entropy between the two laws at time `T`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite};
use crate::gaussian_oracle::{gaussian_entropy, gaussian_transport_map, gaussian_w2, lyapunov_exact, GaussianMeasure};
use crate::linalg::{self, expm, integrate_matrix, pairwise_sum, vector_from};
use crate::model::KineticModel;
use crate::noise::NoiseSource;
use crate::{Error, Result};

/// Quadrature panels used for Gramians and control integrals.
pub const DEFAULT_QUADRATURE_PANELS: usize = 64;

/// Effective-sample-size fraction below which a run is marked low-confidence.
pub const ESS_WARN_FRACTION: f64 = 0.05;

/// Smallest `k` with `rank [B, AB, …, A^{k−1}B] = d1`, returned with that rank.
pub fn kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(usize, usize)> {
    let d1 = a.nrows();
    ensure_dim("A columns", d1, a.ncols())?;
    ensure_dim("B rows", d1, b.nrows())?;
    let d2 = b.ncols();
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut power = b.clone();
    let mut rank = 0;
    for k in 1..=d1.max(1) {
        blocks.push(power.clone());
        let mut m = DMatrix::zeros(d1, k * d2);
        for (i, blk) in blocks.iter().enumerate() {
            m.view_mut((0, i * d2), (d1, d2)).copy_from(blk);
        }
        let sv = m.singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        rank = sv.iter().filter(|&&s| s > 1e-10 * max && max > 0.0).count();
        if rank == d1 {
            return Ok((rank, k));
        }
        power = a * power;
    }
    Err(Error::NotControllable { rank, required: d1 })
}

/// `Q_T = ∫₀ᵀ t(T−t) e^{(T−t)A} BB* e^{(T−t)A*} dt` by composite Gauss–Legendre
/// quadrature with `panels` panels.
pub fn gramian(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: f64, panels: usize) -> Result<DMatrix<f64>> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("T", "must be finite and > 0"));
    }
    let d1 = a.nrows();
    ensure_dim("B rows", d1, b.nrows())?;
    let bbt = b * b.transpose();
    let q = integrate_matrix(0.0, horizon, panels, d1, d1, |t| {
        let e = expm(&(a * (horizon - t)));
        &e * &bbt * e.transpose() * (t * (horizon - t))
    });
    let q = linalg::symmetrize(&q);
    let ev = linalg::sym_eigenvalues(&q);
    let top = ev[ev.len() - 1];
    if !(ev[0] > 1e-12 * top) || !(top > 0.0) {
        return Err(Error::Singular {
            what: format!("Gramian Q_T (T = {horizon}; check controllability or quadrature resolution)"),
        });
    }
    Ok(q)
}

/// `∫₀ᵀ ((T−t)/T) e^{(T−t)A} B dt`.
fn control_input_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: f64, panels: usize) -> DMatrix<f64> {
    integrate_matrix(0.0, horizon, panels, b.nrows(), b.ncols(), |t| {
        expm(&(a * (horizon - t))) * b * ((horizon - t) / horizon)
    })
}

/// Control `v = Q_T⁻¹ {e^{TA} dx0 + ∫₀ᵀ ((T−t)/T) e^{(T−t)A} B dy0 dt}` with
/// `dx0 = X₀ − X̄₀` and `dy0 = Y₀ − Ȳ₀`.
pub fn control_v(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    horizon: f64,
    q_t: &DMatrix<f64>,
    dx0: &[f64],
    dy0: &[f64],
) -> Result<DVector<f64>> {
    ensure_dim("dx0", a.nrows(), dx0.len())?;
    ensure_dim("dy0", b.ncols(), dy0.len())?;
    let g = control_input_matrix(a, b, horizon, DEFAULT_QUADRATURE_PANELS);
    let rhs = expm(&(a * horizon)) * vector_from(dx0) + g * vector_from(dy0);
    q_t.clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular { what: "Gramian Q_T".into() })
}

/// Deterministic interpolation between the two processes for one path.
#[derive(Clone, Debug)]
pub struct CouplingShift {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    horizon: f64,
    v: DVector<f64>,
    dx0: DVector<f64>,
    dy0: DVector<f64>,
}

impl CouplingShift {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: f64, dx0: &[f64], dy0: &[f64]) -> Result<Self> {
        let q = gramian(a, b, horizon, DEFAULT_QUADRATURE_PANELS)?;
        let v = control_v(a, b, horizon, &q, dx0, dy0)?;
        Ok(Self {
            a: a.clone(),
            b: b.clone(),
            horizon,
            v,
            dx0: vector_from(dx0),
            dy0: vector_from(dy0),
        })
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    /// `t(T−t) B* e^{(T−t)A*} v`.
    pub fn shift(&self, t: f64) -> DVector<f64> {
        let e = expm(&(self.a.transpose() * (self.horizon - t)));
        self.b.transpose() * e * &self.v * (t * (self.horizon - t))
    }

    /// Time derivative of [`Self::shift`] by the product rule.
    pub fn shift_derivative(&self, t: f64) -> DVector<f64> {
        let s = self.horizon - t;
        let at = self.a.transpose();
        let ev = expm(&(&at * s)) * &self.v;
        self.b.transpose() * (&ev * (self.horizon - 2.0 * t) - &at * &ev * (t * s))
    }

    /// `Ȳ_t − Y_t = ((T−t)/T)(Ȳ₀ − Y₀) + t(T−t) B* e^{(T−t)A*} v`.
    pub fn y_gap(&self, t: f64) -> DVector<f64> {
        -&self.dy0 * ((self.horizon - t) / self.horizon) + self.shift(t)
    }

    /// `X̄_t − X_t = e^{tA}(X̄₀ − X₀) + ∫₀ᵗ e^{(t−r)A} B (Ȳ_r − Y_r) dr`.
    pub fn x_gap(&self, t: f64) -> DVector<f64> {
        let d1 = self.a.nrows();
        let free = expm(&(&self.a * t)) * (-&self.dx0);
        if t == 0.0 {
            return free;
        }
        let integral = integrate_matrix(0.0, t, DEFAULT_QUADRATURE_PANELS, d1, 1, |r| {
            DMatrix::from_column_slice(d1, 1, (expm(&(&self.a * (t - r))) * &self.b * self.y_gap(r)).as_slice())
        });
        free + integral.column(0)
    }
}

/// `Z((x, y), L) = K_x x + K_y y + M_x mean_x(L) + M_y mean_y(L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDrift {
    #[serde(with = "linalg::serde_matrix")]
    pub kx: DMatrix<f64>,
    #[serde(with = "linalg::serde_matrix")]
    pub ky: DMatrix<f64>,
    #[serde(with = "linalg::serde_matrix")]
    pub mx: DMatrix<f64>,
    #[serde(with = "linalg::serde_matrix")]
    pub my: DMatrix<f64>,
}

impl LinearDrift {
    /// Lipschitz constant in `(x, y)` plus that in the law (through `W₂`).
    pub fn lipschitz(&self) -> f64 {
        let state = hstack(&self.kx, &self.ky).singular_values().max();
        let law = hstack(&self.mx, &self.my).singular_values().max();
        state + law
    }

    fn eval(&self, x: &[f64], y: &[f64], law_mean: &[f64], out: &mut [f64]) {
        let d1 = x.len();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d1 {
                acc += self.kx[(i, j)] * x[j] + self.mx[(i, j)] * law_mean[j];
            }
            for j in 0..y.len() {
                acc += self.ky[(i, j)] * y[j] + self.my[(i, j)] * law_mean[d1 + j];
            }
            *o = acc;
        }
    }
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    m
}

/// Linear system `dX = (AX + BY) dt`, `dY = Z dt + σ dW`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearSystemRaw", into = "LinearSystemRaw")]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    z: LinearDrift,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearSystemRaw {
    #[serde(with = "linalg::serde_matrix")]
    a: DMatrix<f64>,
    #[serde(with = "linalg::serde_matrix")]
    b: DMatrix<f64>,
    #[serde(with = "linalg::serde_matrix")]
    sigma: DMatrix<f64>,
    z: LinearDrift,
}

impl TryFrom<LinearSystemRaw> for LinearSystem {
    type Error = Error;

    fn try_from(r: LinearSystemRaw) -> Result<Self> {
        LinearSystem::new(r.a, r.b, r.sigma, r.z)
    }
}

impl From<LinearSystem> for LinearSystemRaw {
    fn from(s: LinearSystem) -> Self {
        Self {
            a: s.a,
            b: s.b,
            sigma: s.sigma,
            z: s.z,
        }
    }
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>, z: LinearDrift) -> Result<Self> {
        let d1 = a.nrows();
        let d2 = b.ncols();
        ensure_dim("A columns", d1, a.ncols())?;
        ensure_dim("B rows", d1, b.nrows())?;
        ensure_dim("sigma rows", d2, sigma.nrows())?;
        ensure_dim("sigma cols", d2, sigma.ncols())?;
        for (what, m, r, c) in [
            ("Z.kx", &z.kx, d2, d1),
            ("Z.ky", &z.ky, d2, d2),
            ("Z.mx", &z.mx, d2, d1),
            ("Z.my", &z.my, d2, d2),
        ] {
            ensure_dim(what, r, m.nrows())?;
            ensure_dim(what, c, m.ncols())?;
            ensure_finite(what, m.as_slice())?;
        }
        for (what, m) in [("A", &a), ("B", &b), ("sigma", &sigma)] {
            ensure_finite(what, m.as_slice())?;
        }
        let sigma_inv = sigma
            .clone()
            .try_inverse()
            .filter(|_| sigma.singular_values().min() > 1e-12 * sigma.amax())
            .ok_or_else(|| Error::Singular { what: "sigma".into() })?;
        Ok(Self {
            a,
            b,
            sigma,
            sigma_inv,
            z,
        })
    }

    /// The linear kinetic model with mean attraction: `A = 0`, `σ = √2 I` and
    /// `Z = −θB*(x − mean_x) − βB*(BB*)⁻¹x − y`.
    pub fn from_kinetic(model: &KineticModel) -> Result<Self> {
        let theta = model.interaction().mean_coupling().ok_or_else(|| {
            Error::Unsupported("coupling requires a linear interaction".into())
        })?;
        let (d1, d2) = (model.d1(), model.d2());
        let bt = model.b().transpose();
        let z = LinearDrift {
            kx: -(&bt * theta) - model.confinement() * model.beta(),
            ky: -DMatrix::identity(d2, d2),
            mx: &bt * theta,
            my: DMatrix::zeros(d2, d2),
        };
        Self::new(
            DMatrix::zeros(d1, d1),
            model.b().clone(),
            DMatrix::identity(d2, d2) * 2f64.sqrt(),
            z,
        )
    }

    pub fn d1(&self) -> usize {
        self.a.nrows()
    }

    pub fn d2(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn drift(&self) -> &LinearDrift {
        &self.z
    }

    /// `(mean drift, fluctuation drift, noise rate)` of the full state.
    pub fn state_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (d1, d2) = (self.d1(), self.d2());
        let d = d1 + d2;
        let mut fluct = DMatrix::zeros(d, d);
        fluct.view_mut((0, 0), (d1, d1)).copy_from(&self.a);
        fluct.view_mut((0, d1), (d1, d2)).copy_from(&self.b);
        fluct.view_mut((d1, 0), (d2, d1)).copy_from(&self.z.kx);
        fluct.view_mut((d1, d1), (d2, d2)).copy_from(&self.z.ky);
        let mut mean = fluct.clone();
        mean.view_mut((d1, 0), (d2, d1))
            .copy_from(&(&self.z.kx + &self.z.mx));
        mean.view_mut((d1, d1), (d2, d2))
            .copy_from(&(&self.z.ky + &self.z.my));
        let mut noise = DMatrix::zeros(d, d);
        noise.view_mut((d1, d1), (d2, d2))
            .copy_from(&(&self.sigma * self.sigma.transpose()));
        (mean, fluct, noise)
    }

    /// Exact Gaussian law at time `t` from a Gaussian initial law.
    pub fn law_at(&self, init: &GaussianMeasure, t: f64) -> Result<GaussianMeasure> {
        ensure_dim("initial law", self.d1() + self.d2(), init.dim())?;
        let (m, f, q) = self.state_matrices();
        let mean = expm(&(m * t)) * vector_from(init.mean());
        let cov = lyapunov_exact(&f, &q, init.cov(), t);
        GaussianMeasure::new(mean.as_slice().to_vec(), cov)
    }
}

/// How the deterministic control enters the discretized `Ȳ` equation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftIntegration {
    /// Left-point Euler on the control's time derivative; terminal gap O(dt).
    #[default]
    Euler,
    /// Adds the exact increment of `t(T−t)B*e^{(T−t)A*}v` per step, so that
    /// `Ȳ − Y` equals its closed form on the grid.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingOptions {
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub paths: usize,
    #[serde(default)]
    pub shift: ShiftIntegration,
}

/// Gap between the two processes of the first path at one grid time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    pub t: f64,
    pub x_gap: Vec<f64>,
    pub y_gap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRun {
    /// Mean over paths of `ψ_B((X_T, Y_T), (X̄_T, Ȳ_T))`.
    pub terminal_gap: f64,
    /// Self-normalized `R`-weighted mean of `½∫|ξ_t|² dt`, estimating `E_Q[log R]`.
    pub girsanov_cost: f64,
    /// Delta-method standard error of `girsanov_cost`.
    pub standard_error: f64,
    /// Plain sample mean of `R` (should be close to 1).
    pub mean_weight: f64,
    pub ess: f64,
    pub low_confidence: bool,
    /// Control vector of the first path.
    pub control_v: Vec<f64>,
    /// `(t, mean over paths of |ξ_t|²)` on the grid.
    pub xi_path: Vec<(f64, f64)>,
    pub entropy_bound: f64,
    pub first_path_gaps: Vec<GapSample>,
}

struct PathOutcome {
    log_r: f64,
    cost: f64,
    gap: f64,
    xi_sq: Vec<f64>,
    v: Vec<f64>,
    gaps: Vec<GapSample>,
}

/// Per-grid-time matrices shared by all paths.
struct Grid {
    steps: usize,
    dt: f64,
    horizon: f64,
    /// `B* e^{(T−t_k)A*}` for k = 0..=steps.
    e: Vec<DMatrix<f64>>,
    /// `B* A* e^{(T−t_k)A*}`.
    ae: Vec<DMatrix<f64>>,
    mean_mu: Vec<Vec<f64>>,
    mean_nu: Vec<Vec<f64>>,
    q_inv: DMatrix<f64>,
    exp_ta: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl Grid {
    fn shift(&self, k: usize, v: &DVector<f64>) -> DVector<f64> {
        let t = k as f64 * self.dt;
        &self.e[k] * v * (t * (self.horizon - t))
    }

    fn shift_derivative(&self, k: usize, v: &DVector<f64>) -> DVector<f64> {
        let t = k as f64 * self.dt;
        &self.e[k] * v * (self.horizon - 2.0 * t) - &self.ae[k] * v * (t * (self.horizon - t))
    }
}

/// Simulates `paths` coupled pairs from `μ` (original) and `ν` (controlled).
///
/// Initial pairs are optimally coupled: `X̄₀ = m_ν + T(X₀ − m_μ)` with the
/// Gaussian transport map `T`. Laws entering `Z` are the exact Gaussian laws.
pub fn simulate_coupled(
    system: &LinearSystem,
    mu: &GaussianMeasure,
    nu: &GaussianMeasure,
    opts: &CouplingOptions,
) -> Result<CouplingRun> {
    let (d1, d2) = (system.d1(), system.d2());
    let d = d1 + d2;
    ensure_dim("mu dimension", d, mu.dim())?;
    ensure_dim("nu dimension", d, nu.dim())?;
    if opts.paths == 0 {
        return Err(Error::invalid("paths", "must be at least 1"));
    }
    if !(opts.dt > 0.0) || !(opts.horizon > 0.0) || !opts.horizon.is_finite() {
        return Err(Error::invalid("dt/T", "must be finite and > 0"));
    }
    let ratio = opts.horizon / opts.dt;
    let steps = ratio.round() as usize;
    if steps == 0 || (ratio - steps as f64).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::invalid("dt", "must divide T"));
    }
    // Use the exact grid implied by the step count.
    let dt = opts.horizon / steps as f64;
    let horizon = opts.horizon;
    let (a, b) = (system.a(), system.b());
    let q = gramian(a, b, horizon, DEFAULT_QUADRATURE_PANELS)?;
    let q_inv = q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular { what: "Gramian Q_T".into() })?;
    let (mean_m, _, _) = system.state_matrices();
    let step_exp = expm(&(&mean_m * dt));
    let mean_path = |g: &GaussianMeasure| {
        let mut m = vector_from(g.mean());
        let mut out = Vec::with_capacity(steps + 1);
        out.push(m.as_slice().to_vec());
        for _ in 0..steps {
            m = &step_exp * m;
            out.push(m.as_slice().to_vec());
        }
        out
    };
    let at = a.transpose();
    let bt = b.transpose();
    let e: Vec<DMatrix<f64>> = (0..=steps)
        .map(|k| &bt * expm(&(&at * (horizon - k as f64 * dt))))
        .collect();
    let ae: Vec<DMatrix<f64>> = (0..=steps)
        .map(|k| &bt * &at * expm(&(&at * (horizon - k as f64 * dt))))
        .collect();
    let grid = Grid {
        steps,
        dt,
        horizon,
        e,
        ae,
        mean_mu: mean_path(mu),
        mean_nu: mean_path(nu),
        q_inv,
        exp_ta: expm(&(a * horizon)),
        g: control_input_matrix(a, b, horizon, DEFAULT_QUADRATURE_PANELS),
    };
    let transport = gaussian_transport_map(mu, nu)?;
    let starts = mu.sample(opts.paths, opts.seed)?;
    let noise = NoiseSource::new(opts.seed);

    let outcomes: Vec<PathOutcome> = (0..opts.paths)
        .into_par_iter()
        .map(|p| {
            let z0 = starts.point(p);
            let centred = vector_from(z0) - vector_from(mu.mean());
            let zbar0 = vector_from(nu.mean()) + &transport * centred;
            run_path(system, &grid, opts.shift, z0, zbar0.as_slice(), noise, p as u64, p == 0)
        })
        .collect();

    aggregate(outcomes, &grid, opts.paths)
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    system: &LinearSystem,
    grid: &Grid,
    shift_mode: ShiftIntegration,
    z0: &[f64],
    zbar0: &[f64],
    noise: NoiseSource,
    key: u64,
    trace: bool,
) -> PathOutcome {
    let (d1, d2) = (system.d1(), system.d2());
    let (mut x, mut y) = (z0[..d1].to_vec(), z0[d1..].to_vec());
    let (mut xb, mut yb) = (zbar0[..d1].to_vec(), zbar0[d1..].to_vec());
    let dx0: Vec<f64> = x.iter().zip(&xb).map(|(p, q)| p - q).collect();
    let dy0: Vec<f64> = y.iter().zip(&yb).map(|(p, q)| p - q).collect();
    let v = &grid.q_inv * (&grid.exp_ta * vector_from(&dx0) + &grid.g * vector_from(&dy0));
    let horizon = grid.horizon;
    let dt = grid.dt;
    let sdt = dt.sqrt();

    let mut stream = noise.stream(key, d2);
    let mut dw = vec![0.0; d2];
    let mut z_orig = vec![0.0; d2];
    let mut z_ctrl = vec![0.0; d2];
    let mut stoch = Vec::with_capacity(grid.steps);
    let mut quad = Vec::with_capacity(grid.steps);
    let mut xi_sq = Vec::with_capacity(grid.steps + 1);
    let mut gaps = Vec::new();
    let record_gap = |gaps: &mut Vec<GapSample>, k: usize, x: &[f64], y: &[f64], xb: &[f64], yb: &[f64]| {
        gaps.push(GapSample {
            t: k as f64 * dt,
            x_gap: xb.iter().zip(x).map(|(a, b)| a - b).collect(),
            y_gap: yb.iter().zip(y).map(|(a, b)| a - b).collect(),
        });
    };
    if trace {
        record_gap(&mut gaps, 0, &x, &y, &xb, &yb);
    }

    let mut prev_shift = grid.shift(0, &v);
    for k in 0..=grid.steps {
        system.drift().eval(&x, &y, &grid.mean_mu[k], &mut z_orig);
        system.drift().eval(&xb, &yb, &grid.mean_nu[k], &mut z_ctrl);
        let deriv = grid.shift_derivative(k, &v);
        let inner: DVector<f64> = DVector::from_fn(d2, |i, _| {
            dy0[i] / horizon + deriv[i] + z_orig[i] - z_ctrl[i]
        });
        let xi = &system.sigma_inv * inner;
        let xi_norm2 = xi.norm_squared();
        xi_sq.push(xi_norm2);
        if k == grid.steps {
            break;
        }
        stream.fill(&mut dw);
        stoch.push(xi.iter().zip(&dw).map(|(a, w)| a * w * sdt).sum::<f64>());
        quad.push(xi_norm2 * dt);

        let control: Vec<f64> = match shift_mode {
            ShiftIntegration::Euler => deriv.iter().map(|c| c * dt).collect(),
            ShiftIntegration::Exact => {
                let next = grid.shift(k + 1, &v);
                let inc = (&next - &prev_shift).as_slice().to_vec();
                prev_shift = next;
                inc
            }
        };
        let sig_dw: Vec<f64> = (0..d2)
            .map(|i| (0..d2).map(|j| system.sigma[(i, j)] * dw[j]).sum::<f64>() * sdt)
            .collect();
        let nx: Vec<f64> = (0..d1)
            .map(|i| x[i] + dt * mat_row(system.a(), system.b(), i, &x, &y))
            .collect();
        let nxb: Vec<f64> = (0..d1)
            .map(|i| xb[i] + dt * mat_row(system.a(), system.b(), i, &xb, &yb))
            .collect();
        for i in 0..d2 {
            let common = z_orig[i] * dt + sig_dw[i];
            y[i] += common;
            yb[i] += common + dy0[i] / horizon * dt + control[i];
        }
        x = nx;
        xb = nxb;
        if trace {
            record_gap(&mut gaps, k + 1, &x, &y, &xb, &yb);
        }
    }

    let log_r = -pairwise_sum(&stoch) - 0.5 * pairwise_sum(&quad);
    let cost = 0.5 * pairwise_sum(&quad);
    let bt_dy: Vec<f64> = (0..d1)
        .map(|i| (0..d2).map(|j| system.b()[(i, j)] * (yb[j] - y[j])).sum())
        .collect();
    let gap = x
        .iter()
        .zip(&xb)
        .map(|(p, q)| (p - q).powi(2))
        .chain(bt_dy.iter().map(|v| v * v))
        .sum::<f64>()
        .sqrt();
    PathOutcome {
        log_r,
        cost,
        gap,
        xi_sq,
        v: v.as_slice().to_vec(),
        gaps,
    }
}

fn mat_row(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize, x: &[f64], y: &[f64]) -> f64 {
    let ax: f64 = (0..x.len()).map(|j| a[(i, j)] * x[j]).sum();
    let by: f64 = (0..y.len()).map(|j| b[(i, j)] * y[j]).sum();
    ax + by
}

fn aggregate(outcomes: Vec<PathOutcome>, grid: &Grid, paths: usize) -> Result<CouplingRun> {
    let n = paths as f64;
    let max_log = outcomes
        .iter()
        .map(|o| o.log_r)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_log.is_finite() {
        return Err(Error::NonFinite {
            what: "Girsanov log-weights".into(),
        });
    }
    let w: Vec<f64> = outcomes.iter().map(|o| (o.log_r - max_log).exp()).collect();
    let w_sum = pairwise_sum(&w);
    let w_sq: Vec<f64> = w.iter().map(|x| x * x).collect();
    let ess = w_sum * w_sum / pairwise_sum(&w_sq);
    let weighted: Vec<f64> = outcomes.iter().zip(&w).map(|(o, wi)| wi * o.cost).collect();
    let cost = pairwise_sum(&weighted) / w_sum;
    let var_terms: Vec<f64> = outcomes
        .iter()
        .zip(&w)
        .map(|(o, wi)| (wi / w_sum).powi(2) * (o.cost - cost).powi(2))
        .collect();
    let se = pairwise_sum(&var_terms).sqrt();
    let raw_r: Vec<f64> = outcomes.iter().map(|o| o.log_r.exp()).collect();
    let gaps: Vec<f64> = outcomes.iter().map(|o| o.gap).collect();
    let xi_path = (0..=grid.steps)
        .map(|k| {
            let col: Vec<f64> = outcomes.iter().map(|o| o.xi_sq[k]).collect();
            (k as f64 * grid.dt, pairwise_sum(&col) / n)
        })
        .collect();
    let first = outcomes.into_iter().next().expect("at least one path");
    Ok(CouplingRun {
        terminal_gap: pairwise_sum(&gaps) / n,
        girsanov_cost: cost,
        standard_error: se,
        mean_weight: pairwise_sum(&raw_r) / n,
        ess,
        low_confidence: ess < ESS_WARN_FRACTION * n,
        control_v: first.v,
        xi_path,
        entropy_bound: cost,
        first_path_gaps: first.gaps,
    })
}

/// Numerical check of `Ent(P_T*ν | P_T*μ) ≤ E_Q[log R]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub horizon: f64,
    /// Exact `Ent(P_T*ν | P_T*μ)`.
    pub lhs: f64,
    /// Weighted Monte Carlo Girsanov cost.
    pub rhs_empirical: f64,
    pub standard_error: f64,
    /// `lhs ≤ rhs + 3·SE`.
    pub pass: bool,
    pub w2_sq_initial: f64,
    pub ess: f64,
    pub low_confidence: bool,
    pub terminal_gap: f64,
}

pub fn log_harnack_check(
    system: &LinearSystem,
    mu: &GaussianMeasure,
    nu: &GaussianMeasure,
    opts: &CouplingOptions,
) -> Result<(HarnackReport, CouplingRun)> {
    let run = simulate_coupled(system, mu, nu, opts)?;
    let lhs = gaussian_entropy(&system.law_at(nu, opts.horizon)?, &system.law_at(mu, opts.horizon)?)?;
    let w2 = gaussian_w2(mu, nu)?;
    let report = HarnackReport {
        horizon: opts.horizon,
        lhs,
        rhs_empirical: run.girsanov_cost,
        standard_error: run.standard_error,
        pass: lhs <= run.girsanov_cost + 3.0 * run.standard_error,
        w2_sq_initial: w2 * w2,
        ess: run.ess,
        low_confidence: run.low_confidence,
        terminal_gap: run.terminal_gap,
    };
    Ok((report, run))
}
