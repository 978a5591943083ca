//! A random ten-site, four-strain instance: every coordinate descent mode
//! next to the certified global optimum, with the branch-and-bound trace.

use strainsolve::bcd::{bcd_map, BcdConfig};
use strainsolve::eval::{add_noise, recon_error, sample_ground_truth};
use strainsolve::global::{solve_global_with, GlobalConfig};
use strainsolve::{forward, NoiseModel, ProblemDims};

fn main() -> strainsolve::Result<()> {
    let dims = ProblemDims::new(10, 4, 2)?;
    let (m_true, w_true) = sample_ground_truth(dims, 5)?;
    let noise = NoiseModel::uniform(dims.q(), 1e-2)?;
    let d = add_noise(dims, &forward(&m_true, &w_true)?, &noise, 6)?;

    let modes = bcd_map(&d, &noise, dims, &BcdConfig::default())?;
    println!("true w = {:.3?}", w_true.values());
    for mode in &modes.modes {
        let e = recon_error((&m_true, &w_true), (&mode.reconstruction.matrix, &mode.reconstruction.weights))?;
        println!(
            "bcd trial {:>2}: phi = {:>10.4}, e = {:.4}, {} iterations",
            mode.trial, mode.reconstruction.objective, e, mode.iterations
        );
    }

    let config = GlobalConfig {
        record_trace: true,
        ..GlobalConfig::default()
    };
    let report = solve_global_with(&d, &noise, dims, &config, None)?;
    let rec = &report.incumbent;
    println!(
        "global: phi = {:.4}, e = {:.4}, {} nodes, {:.2}s, certified = {}",
        rec.objective,
        recon_error((&m_true, &w_true), (&rec.matrix, &rec.weights))?,
        report.nodes_explored,
        report.wall_time,
        rec.certified
    );
    let step = (report.trace.len() / 8).max(1);
    for t in report.trace.iter().step_by(step) {
        println!("  nodes {:>6}  lower {:>10.4}  incumbent {:>10.4}", t.nodes, t.lower_bound, t.incumbent);
    }
    Ok(())
}
