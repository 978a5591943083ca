//! Equal allele frequencies at two sites: the MAP estimate is not unique, and
//! the posterior mean splits the barcode entries evenly.

use strainsolve::posterior::posterior_stats;
use strainsolve::{Measurement, NoiseModel, ProblemDims};

fn main() -> strainsolve::Result<()> {
    let dims = ProblemDims::new(3, 2, 2)?;
    let d = Measurement::new(dims, vec![0.5, 0.5, 1.0])?;
    let noise = NoiseModel::uniform(3, 1e-2)?;
    let stats = posterior_stats(&d, &noise, dims, 100_000, 1)?;

    println!("site  E[M_i1]  E[M_i2]   sd(M_i1) sd(M_i2)");
    for i in 0..dims.q() {
        println!(
            "{:>4}  {:.4}   {:.4}    {:.4}   {:.4}",
            i + 1,
            stats.m_mean_at(i, 0),
            stats.m_mean_at(i, 1),
            stats.m_std_at(i, 0),
            stats.m_std_at(i, 1)
        );
    }
    println!("E[w]  = {:.4?}", stats.w_mean);
    println!("sd(w) = {:.4?}", stats.w_std);
    Ok(())
}
