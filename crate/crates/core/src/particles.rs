//! Mean-field particle simulation with Euler–Maruyama time stepping.
//!
//! All mean-field terms of a step are evaluated on the pre-step cloud. Noise
//! comes from [`NoiseSource`] streams keyed by `(seed, particle key, step)`,
//! so results do not depend on the rayon thread count.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite};
use crate::gaussian_oracle::GaussianMeasure;
use crate::linalg::{self, pairwise_sum};
use crate::model::{GranularModel, KineticModel, Law, Model};
use crate::noise::{NoiseSource, NormalStream};
use crate::{Error, Result};

/// Equal-weight cloud of `n` points in `R^dim`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct EmpiricalMeasure {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl EmpiricalMeasure {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "points",
                format!("need a positive multiple of dim = {dim} values, got {}", data.len()),
            ));
        }
        ensure_finite("particle positions", &data)?;
        let n = data.len() / dim;
        Ok(Self { data, n, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("points", "rows must have equal length"));
        }
        Self::new(rows.concat(), dim)
    }

    /// Points on the real line.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(xs.to_vec(), 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major flat view of all points.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    /// Coordinates `range` of every point, as a new cloud.
    pub fn project(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.dim {
            return Err(Error::invalid("range", "projection outside the point dimension"));
        }
        let data = self.points().flat_map(|p| p[range.clone()].iter().copied()).collect();
        Self::new(data, range.end - range.start)
    }

    /// Reorders points so that point `i` of the result is point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        ensure_dim("permutation", self.n, perm.len())?;
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("perm", "not a permutation"));
            }
        }
        Ok(Self {
            data: perm.iter().flat_map(|&p| self.point(p).iter().copied()).collect(),
            n: self.n,
            dim: self.dim,
        })
    }

    fn column(&self, j: usize) -> Vec<f64> {
        self.points().map(|p| p[j]).collect()
    }

    pub fn mean_vec(&self) -> Vec<f64> {
        let inv = 1.0 / self.n as f64;
        (0..self.dim).map(|j| pairwise_sum(&self.column(j)) * inv).collect()
    }

    /// Sample covariance with divisor `n − 1` (zero matrix for a single point).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean_vec();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        if self.n < 2 {
            return cov;
        }
        let centered: Vec<Vec<f64>> = (0..self.dim)
            .map(|j| self.column(j).into_iter().map(|v| v - mean[j]).collect())
            .collect();
        let denom = (self.n - 1) as f64;
        for i in 0..self.dim {
            for j in 0..=i {
                let prods: Vec<f64> = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, b)| a * b)
                    .collect();
                let c = pairwise_sum(&prods) / denom;
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        cov
    }

    pub fn moments(&self) -> MomentSummary {
        MomentSummary {
            n: self.n,
            mean: self.mean_vec(),
            cov: self.covariance(),
        }
    }

    /// Gaussian with the sample mean and covariance.
    pub fn gaussian_fit(&self) -> Result<GaussianMeasure> {
        self.moments().gaussian_fit()
    }

    /// CSV with header `x_1,…,x_d` and one row per particle.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|j| format!("x_{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|v| format_float(*v)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for EmpiricalMeasure {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<EmpiricalMeasure> for Vec<Vec<f64>> {
    fn from(m: EmpiricalMeasure) -> Self {
        m.rows()
    }
}

impl Law for EmpiricalMeasure {
    fn dim(&self) -> usize {
        self.dim
    }

    fn mean(&self) -> Vec<f64> {
        self.mean_vec()
    }

    fn atoms(&self) -> Option<&EmpiricalMeasure> {
        Some(self)
    }
}

/// Scientific notation with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Sample size, mean and covariance of a cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: Vec<f64>,
    #[serde(with = "linalg::serde_matrix")]
    pub cov: DMatrix<f64>,
}

impl MomentSummary {
    pub fn gaussian_fit(&self) -> Result<GaussianMeasure> {
        GaussianMeasure::new(self.mean.clone(), self.cov.clone())
    }
}

/// How much of each recorded snapshot is kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    #[default]
    Full,
    Moments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub particles: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub storage: Storage,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, particles: usize, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            particles,
            seed,
            record_every: 1,
            storage: Storage::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("sim config", &[self.dt, self.horizon])?;
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        if self.horizon < self.dt {
            return Err(Error::invalid("horizon", "must be at least dt"));
        }
        if self.particles == 0 {
            return Err(Error::invalid("particles", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        Ok(())
    }

    /// `⌈T/dt⌉`, with a relative slack so that e.g. `1.0 / 1e-3` counts 1000.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    fn records(&self, step: usize) -> bool {
        step.is_multiple_of(self.record_every) || step == self.steps()
    }
}

/// Recorded state at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snapshot {
    Full(EmpiricalMeasure),
    Moments(MomentSummary),
}

impl Snapshot {
    fn capture(state: &EmpiricalMeasure, storage: Storage) -> Self {
        match storage {
            Storage::Full => Snapshot::Full(state.clone()),
            Storage::Moments => Snapshot::Moments(state.moments()),
        }
    }

    pub fn cloud(&self) -> Option<&EmpiricalMeasure> {
        match self {
            Snapshot::Full(m) => Some(m),
            Snapshot::Moments(_) => None,
        }
    }

    pub fn moments(&self) -> MomentSummary {
        match self {
            Snapshot::Full(m) => m.moments(),
            Snapshot::Moments(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }
}

/// Number of normals each particle consumes per step.
pub fn noise_dim(model: &Model) -> usize {
    match model {
        Model::Granular(m) => m.dimension(),
        Model::Kinetic(m) => m.d2(),
    }
}

/// Precomputed per-model step data.
struct Stepper<'a> {
    model: &'a Model,
    /// `√(2a)` for granular models.
    noise_scale: Option<DMatrix<f64>>,
    dim: usize,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a Model) -> Self {
        let noise_scale = match model {
            Model::Granular(g) => Some(sqrt_two_a(g)),
            Model::Kinetic(_) => None,
        };
        Self {
            model,
            noise_scale,
            dim: model.dimension(),
        }
    }

    /// Advances one particle; `noise` has [`noise_dim`] entries.
    fn advance(
        &self,
        x: &[f64],
        mean: &[f64],
        atoms: &EmpiricalMeasure,
        dt: f64,
        noise: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let mut scratch = vec![0.0; self.dim];
        match self.model {
            Model::Granular(g) => {
                g.drift_into(x, mean, Some(atoms), &mut scratch, out)?;
                let s = self.noise_scale.as_ref().expect("granular noise scale");
                let sdt = dt.sqrt();
                for i in 0..self.dim {
                    let diff: f64 = (0..self.dim).map(|j| s[(i, j)] * noise[j]).sum();
                    out[i] = x[i] + out[i] * dt + sdt * diff;
                }
            }
            Model::Kinetic(k) => {
                k.drift_into(x, mean, Some(atoms), &mut scratch, out)?;
                let d1 = k.d1();
                let scale = (2.0 * dt).sqrt();
                for i in 0..self.dim {
                    out[i] = x[i] + out[i] * dt;
                }
                for (o, z) in out[d1..].iter_mut().zip(noise) {
                    *o += scale * z;
                }
            }
        }
        Ok(())
    }

    fn check_supported(&self, n: usize) -> Result<()> {
        if n < 2 && self.model.interaction().is_interacting() {
            return Err(Error::invalid(
                "particles",
                "interacting models need at least 2 particles",
            ));
        }
        Ok(())
    }
}

fn sqrt_two_a(g: &GranularModel) -> DMatrix<f64> {
    let a = g.diffusion();
    let d = a.nrows();
    let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || a[(i, j)] == 0.0));
    if diagonal {
        DMatrix::from_fn(d, d, |i, j| if i == j { (2.0 * a[(i, i)]).sqrt() } else { 0.0 })
    } else {
        linalg::sqrtm_psd(&(a * 2.0))
    }
}

fn first_blow_up(data: &[f64], dim: usize) -> Option<usize> {
    data.chunks_exact(dim).position(|p| p.iter().any(|v| !v.is_finite()))
}

/// One Euler–Maruyama step for all particles. `noise` is `N × d` row-major;
/// for kinetic models only the velocity columns are used.
pub fn em_step(model: &Model, state: &EmpiricalMeasure, dt: f64, noise: &[f64]) -> Result<EmpiricalMeasure> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", "must be finite and > 0"));
    }
    let dim = model.dimension();
    ensure_dim("state dimension", dim, state.dim())?;
    ensure_dim("noise length", state.n() * dim, noise.len())?;
    ensure_finite("noise", noise)?;
    let stepper = Stepper::new(model);
    stepper.check_supported(state.n())?;
    let offset = dim - noise_dim(model);
    let mean = state.mean_vec();
    let mut out = vec![0.0; state.data.len()];
    out.par_chunks_mut(dim)
        .zip(state.data.par_chunks(dim))
        .zip(noise.par_chunks(dim))
        .try_for_each(|((o, x), z)| stepper.advance(x, &mean, state, dt, &z[offset..], o))?;
    if let Some(particle) = first_blow_up(&out, dim) {
        return Err(Error::ParticleBlowUp { particle });
    }
    Ok(EmpiricalMeasure {
        data: out,
        n: state.n,
        dim,
    })
}

/// Stateful simulator of one particle cloud with per-particle noise streams.
struct Runner<'a> {
    stepper: Stepper<'a>,
    state: EmpiricalMeasure,
    streams: Vec<NormalStream>,
    noise: Vec<f64>,
    next: Vec<f64>,
    nd: usize,
}

impl<'a> Runner<'a> {
    fn new(model: &'a Model, init: &EmpiricalMeasure, seed: u64, keys: &[u64]) -> Result<Self> {
        ensure_dim("initial cloud dimension", model.dimension(), init.dim())?;
        ensure_dim("noise keys", init.n(), keys.len())?;
        let stepper = Stepper::new(model);
        stepper.check_supported(init.n())?;
        let nd = noise_dim(model);
        let src = NoiseSource::new(seed);
        Ok(Self {
            stepper,
            state: init.clone(),
            streams: keys.iter().map(|&k| src.stream(k, nd)).collect(),
            noise: vec![0.0; init.n() * nd],
            next: vec![0.0; init.data.len()],
            nd,
        })
    }

    fn step(&mut self, dt: f64) -> Result<()> {
        let nd = self.nd;
        self.noise
            .par_chunks_mut(nd)
            .zip(self.streams.par_iter_mut())
            .for_each(|(z, s)| s.fill(z));
        self.advance_with_current_noise(dt)
    }

    fn advance_with_current_noise(&mut self, dt: f64) -> Result<()> {
        let dim = self.state.dim;
        let mean = self.state.mean_vec();
        let state = &self.state;
        let stepper = &self.stepper;
        self.next
            .par_chunks_mut(dim)
            .zip(state.data.par_chunks(dim))
            .zip(self.noise.par_chunks(self.nd))
            .try_for_each(|((o, x), z)| stepper.advance(x, &mean, state, dt, z, o))?;
        if let Some(particle) = first_blow_up(&self.next, dim) {
            return Err(Error::ParticleBlowUp { particle });
        }
        std::mem::swap(&mut self.state.data, &mut self.next);
        Ok(())
    }
}

/// Simulates the particle system with noise keys `0..N`.
pub fn simulate(model: &Model, init: &EmpiricalMeasure, cfg: &SimConfig) -> Result<Trajectory> {
    let keys: Vec<u64> = (0..init.n() as u64).collect();
    simulate_keyed(model, init, cfg, &keys)
}

/// Simulates with an explicit noise key per particle. Permuting the initial
/// particles together with their keys permutes the trajectory the same way.
pub fn simulate_keyed(
    model: &Model,
    init: &EmpiricalMeasure,
    cfg: &SimConfig,
    keys: &[u64],
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut runner = Runner::new(model, init, cfg.seed, keys)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![Snapshot::capture(init, cfg.storage)],
        seed: cfg.seed,
    };
    for step in 1..=cfg.steps() {
        runner.step(cfg.dt).map_err(|e| e.at_step(step))?;
        if cfg.records(step) {
            traj.times.push(step as f64 * cfg.dt);
            traj.snapshots.push(Snapshot::capture(&runner.state, cfg.storage));
        }
    }
    Ok(traj)
}

/// Runs two copies driven by identical noise, calling `observe(t, first,
/// second)` at t = 0 and at every recorded step.
pub fn run_pair_with(
    model: &Model,
    init1: &EmpiricalMeasure,
    init2: &EmpiricalMeasure,
    cfg: &SimConfig,
    mut observe: impl FnMut(f64, &EmpiricalMeasure, &EmpiricalMeasure) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if init1.n() != init2.n() {
        return Err(Error::UnequalSizes {
            left: init1.n(),
            right: init2.n(),
        });
    }
    ensure_dim("second initial cloud", init1.dim(), init2.dim())?;
    let keys: Vec<u64> = (0..init1.n() as u64).collect();
    let mut a = Runner::new(model, init1, cfg.seed, &keys)?;
    let mut b = Runner::new(model, init2, cfg.seed, &keys)?;
    observe(0.0, &a.state, &b.state)?;
    for step in 1..=cfg.steps() {
        a.step(cfg.dt).map_err(|e| e.at_step(step))?;
        // Same keys and seed: reuse the first copy's normals.
        b.noise.copy_from_slice(&a.noise);
        b.advance_with_current_noise(cfg.dt)
            .map_err(|e| e.at_step(step))?;
        if cfg.records(step) {
            observe(step as f64 * cfg.dt, &a.state, &b.state)?;
        }
    }
    Ok(())
}

/// Synchronously coupled pair of trajectories.
pub fn simulate_pair(
    model: &Model,
    init1: &EmpiricalMeasure,
    init2: &EmpiricalMeasure,
    cfg: &SimConfig,
) -> Result<(Trajectory, Trajectory)> {
    let mut first = Trajectory {
        times: Vec::new(),
        snapshots: Vec::new(),
        seed: cfg.seed,
    };
    let mut second = first.clone();
    run_pair_with(model, init1, init2, cfg, |t, p, q| {
        first.times.push(t);
        second.times.push(t);
        first.snapshots.push(Snapshot::capture(p, cfg.storage));
        second.snapshots.push(Snapshot::capture(q, cfg.storage));
        Ok(())
    })?;
    Ok((first, second))
}

/// Convenience for kinetic models: converts an `(x, y)` cloud split.
pub fn kinetic_state(model: &KineticModel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<EmpiricalMeasure> {
    ensure_dim("velocity rows", xs.len(), ys.len())?;
    let mut data = Vec::with_capacity(xs.len() * model.dimension());
    for (x, y) in xs.iter().zip(ys) {
        ensure_dim("position", model.d1(), x.len())?;
        ensure_dim("velocity", model.d2(), y.len())?;
        data.extend_from_slice(x);
        data.extend_from_slice(y);
    }
    EmpiricalMeasure::new(data, model.dimension())
}
