//! Reconstruction error of coordinate descent across the ordered triangle of
//! proportions for a fixed three-strain barcode matrix.

use strainsolve::eval::{error_map_bcd_config, error_vs_w_map, sample_ground_truth};
use strainsolve::ProblemDims;

fn main() -> strainsolve::Result<()> {
    let dims = ProblemDims::new(16, 3, 2)?;
    let (m, _) = sample_ground_truth(dims, 2)?;
    let cfg = strainsolve::bcd::BcdConfig {
        n_trials: 40,
        ..error_map_bcd_config()
    };
    for gamma in [1e-2, 1e-1] {
        let cells = error_vs_w_map(&m, &[gamma], 30, 3, &cfg)?;
        let mean = |pred: &dyn Fn(f64) -> bool| {
            let sel: Vec<f64> = cells.iter().filter(|c| pred(c.w[0])).map(|c| c.error).collect();
            sel.iter().sum::<f64>() / sel.len().max(1) as f64
        };
        println!(
            "gamma = {gamma:.0e}: mean e = {:.4}, near w1 = 1/2: {:.4}, away from it: {:.4}",
            mean(&|_| true),
            mean(&|w1| (w1 - 0.5).abs() < 0.02),
            mean(&|w1| (w1 - 0.5).abs() > 0.05 && (w1 - 0.5).abs() < 0.1)
        );
    }
    Ok(())
}
