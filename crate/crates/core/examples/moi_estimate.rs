//! Number of strains from the discrepancy principle: the smallest n whose MAP
//! residual drops below the expected noise energy.

use strainsolve::backend::MapBackend;
use strainsolve::bcd::estimate_moi;
use strainsolve::eval::sample_ground_truth;
use strainsolve::global::GlobalConfig;
use strainsolve::{forward, Measurement, NoiseModel, ProblemDims};

fn main() -> strainsolve::Result<()> {
    let backend = MapBackend::Global(GlobalConfig::default());
    for n_true in 1..=3 {
        let dims = ProblemDims::new(10, n_true, 2)?;
        let (m, w) = sample_ground_truth(dims, 40 + n_true as u64)?;
        let d = Measurement::new(dims, forward(&m, &w)?)?;
        let noise = NoiseModel::uniform(dims.q(), 1e-3)?;
        let est = estimate_moi(&d, &noise, 10, 2, 5, &backend)?;
        println!(
            "true n = {n_true}, w = {:.3?} -> estimated n = {} (residuals {})",
            w.values(),
            est.n,
            est.discrepancies.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
        );
    }
    Ok(())
}
