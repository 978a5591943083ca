//! A small benchmark: reconstruction error of coordinate descent and the
//! global solver on random instances at two noise levels.

use strainsolve::eval::{run_benchmark, BenchmarkSpec};
use strainsolve::io::write_benchmark_summary;

const SPEC: &str = r#"
cells = [{ m = 10, n = 3, p = 2 }]
gammas = [1e-2, 1e-3]
sample_count = 20
backends = ["bcd", "global"]
rng_seed = 1
baseline_pairs = 2000
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec: BenchmarkSpec = toml::from_str(SPEC)?;
    let result = run_benchmark(&spec)?;
    print!("{}", write_benchmark_summary(&result));
    Ok(())
}
