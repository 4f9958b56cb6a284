//! `energy`: free energy, mean-field entropy and the particle Hamiltonian in
//! the quadratic family.

use std::path::Path;

use mvlab::meanfield_energy::{
    free_energy, free_energy_infimum, free_energy_minimizer, hamiltonian_hn, mean_field_entropy, variance_scan,
};
use mvlab::GaussianMeasure;
use serde::{Deserialize, Serialize};

use crate::config::{EnergyConfig, MeasureEnergy, Provenance};
use crate::output::write_json;
use crate::Verdict;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceScan {
    pub argmin: f64,
    pub exact_argmin: f64,
    pub resolution: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyOutput {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub infimum: f64,
    pub minimizer: GaussianMeasure,
    pub minimizer_entropy: f64,
    pub measures: Vec<MeasureEnergy>,
    pub variance_scan: Option<VarianceScan>,
    /// `H_N / N` on samples of the minimizer.
    pub hamiltonian_per_particle: Option<f64>,
    pub pass: bool,
}

pub fn run(cfg: &EnergyConfig, sha: &str, out: &Path) -> anyhow::Result<(EnergyOutput, Verdict)> {
    let (v, w, d) = (&cfg.potential, &cfg.interaction, cfg.dimension);
    let minimizer = free_energy_minimizer(d, v, w)?;
    let minimizer_entropy = mean_field_entropy(&minimizer, v, w)?;
    let measures = cfg
        .measures
        .iter()
        .map(|m| {
            Ok(MeasureEnergy {
                measure: m.clone(),
                energy: free_energy(m, v, w)?,
                mean_field_entropy: mean_field_entropy(m, v, w)?,
            })
        })
        .collect::<mvlab::Result<Vec<_>>>()?;
    let variance_scan = match &cfg.variance_grid {
        Some(g) => {
            let pts = g.points()?;
            let (argmin, _) = variance_scan(d, &pts, v, w)?;
            let exact = minimizer.cov()[(0, 0)];
            let resolution = pts[1] - pts[0];
            Some(VarianceScan {
                argmin,
                exact_argmin: exact,
                resolution,
                pass: (argmin - exact).abs() <= resolution,
            })
        }
        None => None,
    };
    let hamiltonian_per_particle = match cfg.hamiltonian_particles {
        Some(n) => {
            let xs = minimizer.sample(n, cfg.seed)?;
            Some(hamiltonian_hn(&xs, v, w)? / n as f64)
        }
        None => None,
    };
    let pass = minimizer_entropy < 1e-10 && variance_scan.as_ref().is_none_or(|s| s.pass);
    let report = EnergyOutput {
        provenance: Provenance::new("energy", sha, cfg.seed),
        infimum: free_energy_infimum(d, v, w)?,
        minimizer,
        minimizer_entropy,
        measures,
        variance_scan,
        hamiltonian_per_particle,
        pass,
    };
    write_json(out, "energy.json", &report)?;
    Ok((report, if pass { Verdict::Pass } else { Verdict::Fail }))
}
