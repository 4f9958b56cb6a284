//! `rates`: table of explicit constants for the given parameters.

use std::path::Path;

use mvlab::rates::{rate_table, RateConstants, RateParams};
use serde::{Deserialize, Serialize};

use crate::config::{Provenance, RatesConfig};
use crate::output::write_json;
use crate::Verdict;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatesReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub params: RateParams,
    pub constants: RateConstants,
}

pub fn run(cfg: &RatesConfig, sha: &str, out: &Path) -> anyhow::Result<(RatesReport, Verdict)> {
    let constants = rate_table(&cfg.params)?;
    let report = RatesReport {
        provenance: Provenance::new("rates", sha, cfg.seed),
        params: cfg.params.clone(),
        constants,
    };
    write_json(out, "rates.json", &report)?;
    Ok((report, Verdict::Pass))
}
