//! Four sites, three strains: the certified MAP estimate, the posterior mean
//! of the proportions, and the entropy of the barcode posterior over the
//! ordered triangle of proportions.

use strainsolve::global::solve_global;
use strainsolve::posterior::{entropy_map, entropy_of_m_given_w, posterior_stats};
use strainsolve::{FrequencyVector, Measurement, NoiseModel, ProblemDims};

fn main() -> strainsolve::Result<()> {
    let dims = ProblemDims::new(4, 3, 2)?;
    let d = Measurement::new(dims, vec![0.1, 0.3, 0.5, 0.6])?;
    let noise = NoiseModel::uniform(4, 1e-2)?;

    let map = solve_global(&d, &noise, dims, 1e-6, 1_000_000, None)?.incumbent;
    println!("MAP w = {:.4?} (certified: {})", map.weights.values(), map.certified);

    let stats = posterior_stats(&d, &noise, dims, 100_000, 3)?;
    println!("E[w]  = {:.4?}", stats.w_mean);

    let w = FrequencyVector::new(vec![0.5, 0.3, 0.2])?;
    let h = entropy_of_m_given_w(&w, &d, &noise)?;
    println!("H(M | w = (0.5, 0.3, 0.2)) = {h:.4} bits, log2(12) = {:.4}", 12f64.log2());

    let cells = entropy_map(&d, &noise, dims, 60)?;
    let low = cells.iter().filter(|c| c.entropy < 0.1).count();
    let top = cells.iter().max_by(|a, b| a.entropy.total_cmp(&b.entropy)).unwrap();
    println!(
        "entropy map: {} grid points, {} nearly deterministic, max {:.3} bits at {:.3?}",
        cells.len(),
        low,
        top.entropy,
        top.w
    );
    Ok(())
}
