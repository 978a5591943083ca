use serde::{Deserialize, Serialize};

use crate::bcd::{bcd_map, BcdConfig};
use crate::error::Result;
use crate::global::{solve_global_with, GlobalConfig};
use crate::model::{Measurement, NoiseModel, ProblemDims, Reconstruction};

/// Which MAP solver to run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum MapBackend {
    Bcd(BcdConfig),
    Global(GlobalConfig),
    /// Coordinate descent first, then branch-and-bound warm started from its best mode.
    Hybrid { bcd: BcdConfig, global: GlobalConfig },
}

impl MapBackend {
    pub fn name(&self) -> &'static str {
        match self {
            MapBackend::Bcd(_) => "bcd",
            MapBackend::Global(_) => "global",
            MapBackend::Hybrid { .. } => "hybrid",
        }
    }

    pub fn solve(&self, d: &Measurement, noise: &NoiseModel, dims: ProblemDims) -> Result<Reconstruction> {
        match self {
            MapBackend::Bcd(cfg) => Ok(bcd_map(d, noise, dims, cfg)?.best().reconstruction.clone()),
            MapBackend::Global(cfg) => Ok(solve_global_with(d, noise, dims, cfg, None)?.incumbent),
            MapBackend::Hybrid { bcd, global } => {
                let start = bcd_map(d, noise, dims, bcd)?.best().reconstruction.clone();
                Ok(solve_global_with(d, noise, dims, global, Some(&start))?.incumbent)
            }
        }
    }
}
