//! Three sites, two strains, exact data: coordinate descent and the global
//! solver agree on the unique MAP estimate.

use strainsolve::bcd::{bcd_map, BcdConfig};
use strainsolve::global::solve_global;
use strainsolve::{Measurement, NoiseModel, ProblemDims};

fn main() -> strainsolve::Result<()> {
    let dims = ProblemDims::new(3, 2, 2)?;
    let d = Measurement::new(dims, vec![0.4, 0.6, 1.0])?;
    let noise = NoiseModel::uniform(3, 1e-2)?;

    let modes = bcd_map(&d, &noise, dims, &BcdConfig::default())?;
    let best = &modes.best().reconstruction;
    println!("bcd: {} distinct modes", modes.modes.len());
    for i in 0..dims.q() {
        println!("  {:?}", best.matrix.row(i));
    }
    println!("  w = {:?}, phi = {:.3e}", best.weights.values(), best.objective);

    let report = solve_global(&d, &noise, dims, 1e-6, 100_000, None)?;
    let rec = &report.incumbent;
    println!(
        "global: {} nodes, certified = {}, gap = {:.1e}",
        report.nodes_explored, rec.certified, report.final_gap
    );
    println!("  w = {:?}, same matrix as bcd: {}", rec.weights.values(), rec.matrix == best.matrix);
    Ok(())
}
