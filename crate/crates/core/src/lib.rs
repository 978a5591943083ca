//! Strain identification from a single mixed measurement vector.
//!
//! A sample containing `n` strains is measured at `m` sites with `p` classes
//! per site, giving class frequencies `d ~ M w + noise`, where `M` is a
//! block-binary barcode matrix and `w` the strain proportions. This crate
//! provides
//!
//! * [`bcd`]: multi-start block coordinate descent MAP estimation, with a
//!   discrepancy-principle estimate of the number of strains,
//! * [`global`]: a certified global MAP solver (McCormick reformulation and
//!   best-first branch-and-bound),
//! * [`posterior`]: conditional means and standard deviations by exact
//!   per-site summation over `M` and Monte Carlo integration over `w`,
//! * [`eval`]: synthetic instances, the permutation-invariant reconstruction
//!   error and benchmark harnesses,
//! * [`io`]: file formats, read-count ingestion and the command line driver.

pub mod backend;
pub mod bcd;
pub mod cli;
pub mod error;
pub mod eval;
pub mod global;
pub mod io;
pub mod model;
pub mod parallel;
pub mod posterior;
pub mod qp;

pub use error::{Error, Result};
pub use model::{
    enumerate_block_candidates, forward, is_bi_independent, objective_phi, BlockCandidates,
    FrequencyVector, Measurement, NoiseModel, ProblemDims, Reconstruction, StrainMatrix,
};
