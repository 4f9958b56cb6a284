//! JSON experiment configs. Every config carries `"schema": 1` and a seed;
//! parse errors name the offending field path.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mvlab::coupling::{LinearSystem, ShiftIntegration};
use mvlab::meanfield_energy::EnergyReport;
use mvlab::rates::RateParams;
use mvlab::{GaussianMeasure, InteractionSpec, KineticModel, Model, PotentialSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// A config file's parsed contents together with the hash of its bytes.
#[derive(Debug)]
pub struct Loaded<T> {
    pub config: T,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses `text` as `T`, reporting the JSON path of the first bad field.
pub fn parse<T: DeserializeOwned + Versioned>(text: &str) -> anyhow::Result<Loaded<T>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid config at `{path}`: {}", e.into_inner())
    })?;
    if config.schema() != SCHEMA_VERSION {
        bail!(
            "invalid config at `schema`: unsupported version {} (expected {SCHEMA_VERSION})",
            config.schema()
        );
    }
    Ok(Loaded {
        config,
        sha256: sha256_hex(text.as_bytes()),
    })
}

pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> anyhow::Result<Loaded<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

pub trait Versioned {
    fn schema(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl Versioned for $t {
            fn schema(&self) -> u32 {
                self.schema
            }
        })*
    };
}

versioned!(SimulateConfig, CoupledConfig, RatesConfig, EnergyConfig, SelftestConfig);

/// Time series a rate is fitted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    W2Emp,
    W2Oracle,
    W2Fit,
    EntKnn,
    EntOracle,
    PsiBarSqMean,
}

impl Series {
    pub fn column(self) -> &'static str {
        match self {
            Series::W2Emp => "w2_emp",
            Series::W2Oracle => "w2_oracle",
            Series::W2Fit => "w2_fit",
            Series::EntKnn => "ent_knn",
            Series::EntOracle => "ent_oracle",
            Series::PsiBarSqMean => "psi_bar_sq_mean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Empirical `W₂` (subsampled) and the Gaussian-fit `W₂` to the stationary law.
    W2,
    EntropyKnn,
    /// Paired `ψ̄_B²` between two synchronously coupled kinetic copies.
    PsiBar,
    /// Mean-field entropy of the Gaussian fit (quadratic granular models).
    Energy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub dt: f64,
    pub horizon: f64,
    pub particles: usize,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

fn default_subsample() -> usize {
    500
}

fn default_knn() -> usize {
    mvlab::metrics::DEFAULT_KNN_K
}

fn default_checkpoints() -> usize {
    5
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema: u32,
    pub seed: u64,
    pub model: Model,
    /// Gaussian initial law; particles are drawn from it.
    pub init: GaussianMeasure,
    /// Initial law of the second, synchronously coupled copy.
    #[serde(default)]
    pub pair_init: Option<GaussianMeasure>,
    pub sim: TimeGrid,
    pub metrics: Vec<Metric>,
    #[serde(default = "yes")]
    pub oracle: bool,
    #[serde(default)]
    pub fit_series: Option<Series>,
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
    /// Relative slack allowed below the theoretical rate.
    #[serde(default)]
    pub rate_tolerance: f64,
    #[serde(default = "default_subsample")]
    pub w2_subsample: usize,
    #[serde(default = "default_knn")]
    pub knn_k: usize,
    #[serde(default = "default_checkpoints")]
    pub moment_checkpoints: usize,
    #[serde(default)]
    pub plots: bool,
}

impl SimulateConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        let d = self.model.dimension();
        if self.init.dim() != d {
            bail!("invalid config at `init`: dimension {} does not match the model's {d}", self.init.dim());
        }
        if let Some(p) = &self.pair_init {
            if p.dim() != d {
                bail!("invalid config at `pair_init`: dimension {} does not match the model's {d}", p.dim());
            }
        }
        if self.metrics.contains(&Metric::PsiBar) {
            if !matches!(self.model, Model::Kinetic(_)) {
                bail!("invalid config at `metrics`: psi_bar needs a kinetic model");
            }
            if self.pair_init.is_none() {
                bail!("invalid config at `metrics`: psi_bar needs `pair_init`");
            }
        }
        if self.metrics.contains(&Metric::Energy) && !matches!(self.model, Model::Granular(_)) {
            bail!("invalid config at `metrics`: energy needs a granular model");
        }
        if self.w2_subsample < 2 {
            bail!("invalid config at `w2_subsample`: must be at least 2");
        }
        if self.knn_k == 0 {
            bail!("invalid config at `knn_k`: must be at least 1");
        }
        if !(self.rate_tolerance >= 0.0 && self.rate_tolerance < 1.0) {
            bail!("invalid config at `rate_tolerance`: must lie in [0, 1)");
        }
        Ok(())
    }
}

/// System for the `coupled` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystemSpec {
    Kinetic(KineticModel),
    Linear(LinearSystem),
}

impl SystemSpec {
    pub fn build(&self) -> mvlab::Result<LinearSystem> {
        match self {
            SystemSpec::Kinetic(k) => LinearSystem::from_kinetic(k),
            SystemSpec::Linear(s) => Ok(s.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledConfig {
    pub schema: u32,
    pub seed: u64,
    pub system: SystemSpec,
    /// Law of the uncontrolled process.
    pub mu: GaussianMeasure,
    /// Law of the controlled process.
    pub nu: GaussianMeasure,
    pub horizons: Vec<f64>,
    /// Time steps per horizon.
    pub steps: usize,
    pub paths: usize,
    #[serde(default)]
    pub shift: ShiftIntegration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    pub params: RateParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl VarianceGrid {
    pub fn points(&self) -> anyhow::Result<Vec<f64>> {
        if !(self.min > 0.0 && self.max > self.min) || self.count < 2 {
            bail!("invalid config at `variance_grid`: need 0 < min < max and count >= 2");
        }
        let h = (self.max - self.min) / (self.count - 1) as f64;
        Ok((0..self.count).map(|i| self.min + h * i as f64).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub schema: u32,
    pub seed: u64,
    pub dimension: usize,
    pub potential: PotentialSpec,
    pub interaction: InteractionSpec,
    #[serde(default)]
    pub measures: Vec<GaussianMeasure>,
    #[serde(default)]
    pub variance_grid: Option<VarianceGrid>,
    /// Evaluates `H_N / N` on this many samples of the minimizer.
    #[serde(default)]
    pub hamiltonian_particles: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftestConfig {
    pub schema: u32,
    pub seed: u64,
    #[serde(default = "default_instances")]
    pub w2_instances: usize,
    #[serde(default = "default_samples")]
    pub entropy_samples: usize,
}

fn default_instances() -> usize {
    200
}

fn default_samples() -> usize {
    10_000
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            seed: 0,
            w2_instances: default_instances(),
            entropy_samples: default_samples(),
        }
    }
}

/// Header embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub schema: u32,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, sha256: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            schema: SCHEMA_VERSION,
            config_sha256: sha256.into(),
            seed,
        }
    }
}

/// A free-energy evaluation for one measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEnergy {
    pub measure: GaussianMeasure,
    pub energy: EnergyReport,
    pub mean_field_entropy: f64,
}

/// Output directory resolution: `--out` wins, else `./out`.
pub fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| PathBuf::from("out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_names_field_path() {
        let text = r#"{"schema": 1, "params": {"beta": "one"}}"#;
        let err = parse::<RatesConfig>(text).unwrap_err().to_string();
        assert!(err.contains("params.beta"), "{err}");
    }

    #[test]
    fn schema_version_enforced() {
        let err = parse::<RatesConfig>(r#"{"schema": 2, "params": {}}"#).unwrap_err().to_string();
        assert!(err.contains("schema"), "{err}");
    }

    #[test]
    fn nested_model_validation_is_located() {
        let text = r#"{"schema": 1, "seed": 1,
            "model": {"kind": "kinetic", "b": [[1.0]], "beta": -1.0},
            "init": {"mean": [0, 0], "cov": [[1, 0], [0, 1]]},
            "sim": {"dt": 0.1, "horizon": 1, "particles": 10},
            "metrics": []}"#;
        let err = parse::<SimulateConfig>(text).unwrap_err().to_string();
        assert!(err.contains("model"), "{err}");
    }

    #[test]
    fn hash_is_of_raw_bytes() {
        let a = parse::<RatesConfig>(r#"{"schema": 1, "params": {}}"#).unwrap();
        let b = parse::<RatesConfig>(r#"{"schema":1,"params":{}}"#).unwrap();
        assert_ne!(a.sha256, b.sha256);
        assert_eq!(a.sha256.len(), 64);
    }
}
