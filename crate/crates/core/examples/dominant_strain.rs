//! One dominant and two minor strains in proportions 5:1:1 at 16 sites. The
//! dominant barcode is recovered, and the posterior is less certain about the
//! minor ones.

use strainsolve::bcd::{bcd_map, BcdConfig};
use strainsolve::eval::{add_noise, recon_error_matching, sample_ground_truth};
use strainsolve::posterior::posterior_stats;
use strainsolve::{forward, FrequencyVector, NoiseModel, ProblemDims, StrainMatrix};

fn main() -> strainsolve::Result<()> {
    let dims = ProblemDims::new(16, 3, 2)?;
    let w = FrequencyVector::new(vec![5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0])?;
    let noise = NoiseModel::uniform(dims.q(), 1e-2)?;
    let (sampled, _) = sample_ground_truth(dims, 17)?;
    let m = StrainMatrix::from_entries(dims, sampled.entries().to_vec())?;
    let d = add_noise(dims, &forward(&m, &w)?, &noise, 18)?;

    let map = bcd_map(&d, &noise, dims, &BcdConfig { n_trials: 50, ..BcdConfig::default() })?;
    let est = &map.best().reconstruction;
    let (e, matching) = recon_error_matching((&m, &w), (&est.matrix, &est.weights))?;
    println!("MAP w = {:.4?}, e = {e:.4}", est.weights.values());
    for j in 0..3 {
        let same = m.column(j) == est.matrix.column(matching[j]);
        println!("strain {}: barcode recovered = {same}", j + 1);
    }

    let stats = posterior_stats(&d, &noise, dims, 100_000, 19)?;
    for j in 0..3 {
        let sd: f64 = (0..dims.q()).map(|i| stats.m_std_at(i, j)).sum::<f64>() / dims.q() as f64;
        println!("posterior column {}: mean sd(M) = {sd:.4}, E[w] = {:.4}", j + 1, stats.w_mean[j]);
    }
    Ok(())
}
