//! Command line driver.
//!
//! Exit codes: 0 success, 1 other failures, 2 usage errors, 3 malformed input
//! files, 4 when `--require-certified` is given and the solver could not
//! certify optimality.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bcd::{estimate_moi, BcdConfig};
use crate::error::{Error, Result};
use crate::eval::{self, BackendKind, BenchmarkSpec};
use crate::io::{self, OutputFormat, ResultFile, RunConfig};
use crate::model::{forward, NoiseModel, ProblemDims};
use crate::parallel;
use crate::posterior;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NOT_CERTIFIED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "strainsolve", version, about = "Strain barcodes and proportions from mixed allele frequencies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MAP estimate of the barcode matrix and strain proportions.
    Reconstruct(ReconstructArgs),
    /// Posterior means and standard deviations.
    Posterior(PosteriorArgs),
    /// Entropy of the barcode posterior over the ordered triangle (three strains).
    EntropyMap(EntropyMapArgs),
    /// Estimate the number of strains.
    Moi(MoiArgs),
    /// Draw a random instance and noisy data.
    Synth(SynthArgs),
    /// Run a benchmark described by a TOML file.
    Benchmark(BenchmarkArgs),
    /// Convert a read-count table to a frequency vector.
    Ingest(IngestArgs),
    /// Reconstruction error of coordinate descent across proportions (three strains).
    ErrorMap(ErrorMapArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Bcd,
    Global,
    Hybrid,
}

impl From<Method> for BackendKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Bcd => BackendKind::Bcd,
            Method::Global => BackendKind::Global,
            Method::Hybrid => BackendKind::Hybrid,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => OutputFormat::Text,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args, Debug)]
struct Noise {
    /// Noise standard deviation, the same for every entry.
    #[arg(long, required_unless_present = "gamma_file", conflicts_with = "gamma_file")]
    gamma: Option<f64>,
    /// Vector file with one standard deviation per entry.
    #[arg(long)]
    gamma_file: Option<PathBuf>,
}

impl Noise {
    fn values(&self) -> Result<Vec<f64>> {
        match (&self.gamma, &self.gamma_file) {
            (Some(g), _) => Ok(vec![*g]),
            (None, Some(path)) => io::read_vector_file(path),
            (None, None) => Err(Error::InvalidArgument("missing noise level".into())),
        }
    }
}

#[derive(Args, Debug)]
struct Output {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Leave out the creation-time header.
    #[arg(long)]
    no_timestamp: bool,
}

impl Output {
    fn created(&self) -> Option<u64> {
        (!self.no_timestamp).then(io::now_secs)
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => io::write_text(path, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

#[derive(Args, Debug)]
struct Solver {
    #[arg(long, value_enum, default_value = "global")]
    method: Method,
    /// Coordinate descent restarts.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol_w: f64,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// Relative optimality gap of the global solver.
    #[arg(long, default_value_t = 1e-6)]
    mip_gap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Measurement vector file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[command(flatten)]
    noise: Noise,
    #[command(flatten)]
    solver: Solver,
    #[command(flatten)]
    output: Output,
    /// Exit with status 4 unless the solver certifies optimality.
    #[arg(long)]
    require_certified: bool,
}

#[derive(Args, Debug)]
struct PosteriorArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[command(flatten)]
    noise: Noise,
    /// Monte Carlo nodes on the ordered simplex.
    #[arg(long, default_value_t = 10_000)]
    nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct EntropyMapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[command(flatten)]
    noise: Noise,
    /// Grid points per unit along each axis.
    #[arg(long, default_value_t = 60)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args, Debug)]
struct MoiArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[command(flatten)]
    noise: Noise,
    #[arg(long, default_value_t = 6)]
    n_max: usize,
    #[command(flatten)]
    solver: Solver,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes `<prefix>_matrix.csv`, `<prefix>_weights.csv` and `<prefix>_d.csv`.
    #[arg(long)]
    out: String,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// TOML benchmark description.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for `benchmark.csv`, `summary.csv` and `timings.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Tab-separated read-count table.
    #[arg(long)]
    counts: PathBuf,
    #[arg(long, default_value_t = 10)]
    min_depth: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ErrorMapArgs {
    /// Three-column barcode matrix file.
    #[arg(long)]
    truth_matrix: PathBuf,
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',', required = true)]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 60)]
    resolution: usize,
    /// Coordinate descent restarts per grid point.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `error_map.csv`.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Lib(Error),
    NotCertified,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn run_config(input: &Path, n: usize, p: usize, noise: &Noise, solver: Option<&Solver>) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        n,
        p,
        gamma: noise.values()?,
        method: BackendKind::Global,
        bcd: BcdConfig::default(),
        mip_gap: 1e-6,
        posterior_nodes: 10_000,
        rng_seed: 0,
        input: input.to_path_buf(),
        output: None,
    };
    if let Some(s) = solver {
        cfg.method = s.method.into();
        cfg.bcd = BcdConfig {
            n_trials: s.trials,
            tol_w: s.tol_w,
            max_iters: s.max_iters,
            rng_seed: s.seed,
            keep_all_modes: false,
        };
        cfg.mip_gap = s.mip_gap;
        cfg.rng_seed = s.seed;
    }
    Ok(cfg)
}

fn with_timestamp(text: String, no_timestamp: bool) -> String {
    if no_timestamp {
        text
    } else {
        format!("{}\n{text}", io::timestamp_line())
    }
}

fn reconstruct(a: &ReconstructArgs) -> std::result::Result<(), Failure> {
    let cfg = run_config(&a.input, a.n, a.p, &a.noise, Some(&a.solver))?;
    let (d, noise, dims) = cfg.load()?;
    let backend = cfg.backend();
    let rec = backend.solve(&d, &noise, dims)?;
    let certified = rec.certified;
    let file = ResultFile {
        method: backend.name().to_string(),
        reconstruction: rec,
        created: a.output.created(),
    };
    a.output.emit(&io::write_result(&file, a.output.format.into()))?;
    if a.require_certified && !certified {
        return Err(Failure::NotCertified);
    }
    Ok(())
}

fn posterior_cmd(a: &PosteriorArgs) -> Result<()> {
    let mut cfg = run_config(&a.input, a.n, a.p, &a.noise, None)?;
    cfg.posterior_nodes = a.nodes;
    cfg.rng_seed = a.seed;
    let (d, noise, dims) = cfg.load()?;
    let stats = posterior::posterior_stats(&d, &noise, dims, a.nodes, a.seed)?;
    a.output
        .emit(&io::write_posterior(&stats, a.output.format.into(), a.output.created()))
}

fn entropy_map_cmd(a: &EntropyMapArgs) -> Result<()> {
    let cfg = run_config(&a.input, a.n, a.p, &a.noise, None)?;
    let (d, noise, dims) = cfg.load()?;
    let cells = posterior::entropy_map(&d, &noise, dims, a.resolution)?;
    let text = with_timestamp(io::write_entropy_table(&cells), a.no_timestamp);
    match &a.out {
        Some(path) => io::write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn moi_cmd(a: &MoiArgs) -> Result<()> {
    let cfg = run_config(&a.input, 1, a.p, &a.noise, Some(&a.solver))?;
    let (d, noise, dims) = cfg.load()?;
    let est = estimate_moi(&d, &noise, dims.m(), a.p, a.n_max, &cfg.backend())?;
    let text = io::write_moi(&est);
    print!("{text}");
    if let Some(path) = &a.out {
        io::write_text(path, &text)?;
    }
    if !est.reached {
        eprintln!("warning: no n <= {} brought the residual below the noise level", a.n_max);
    }
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let dims = ProblemDims::new(a.m, a.n, a.p)?;
    let noise = NoiseModel::uniform(dims.q(), a.gamma)?;
    let (matrix, weights) = eval::sample_ground_truth(dims, parallel::derive_seed(a.seed, &[0]))?;
    let clean = forward(&matrix, &weights)?;
    let d = eval::add_noise(dims, &clean, &noise, parallel::derive_seed(a.seed, &[1]))?;
    io::write_text(Path::new(&format!("{}_matrix.csv", a.out)), &io::write_strain_matrix(&matrix))?;
    io::write_text(Path::new(&format!("{}_weights.csv", a.out)), &io::write_vector(weights.values()))?;
    io::write_text(Path::new(&format!("{}_d.csv", a.out)), &io::write_vector(d.data()))
}

fn benchmark_cmd(a: &BenchmarkArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec)?;
    let spec: BenchmarkSpec = toml::from_str(&text).map_err(|e| io::toml_err(&text, e))?;
    let result = eval::run_benchmark(&spec)?;
    io::write_text(&a.out.join("benchmark.csv"), &io::write_benchmark_rows(&result))?;
    let summary = io::write_benchmark_summary(&result);
    io::write_text(&a.out.join("summary.csv"), &summary)?;
    io::write_text(&a.out.join("timings.csv"), &io::write_benchmark_timings(&result))?;
    print!("{summary}");
    Ok(())
}

fn ingest_cmd(a: &IngestArgs) -> Result<()> {
    let records = io::parse_counts_file(&a.counts)?;
    let ingested = io::ingest_read_counts(&records, a.min_depth)?;
    for dropped in &ingested.dropped {
        eprintln!("dropped site {} ({}): {}", dropped.site_id, dropped.index + 1, dropped.reason);
    }
    let sites: Vec<&str> = ingested.kept.iter().map(|&i| records[i].site_id.as_str()).collect();
    let text = format!("# sites {}\n{}", sites.join(","), io::write_vector(ingested.measurement.data()));
    io::write_text(&a.out, &text)
}

fn error_map_cmd(a: &ErrorMapArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.truth_matrix)?;
    let matrix = io::parse_strain_matrix(&text, a.p)?;
    let bcd = BcdConfig {
        n_trials: a.trials,
        ..eval::error_map_bcd_config()
    };
    let cells = eval::error_vs_w_map(&matrix, &a.gamma, a.resolution, a.seed, &bcd)?;
    io::write_text(&a.out.join("error_map.csv"), &io::write_error_map(&cells))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Format { .. } => EXIT_FORMAT,
        _ => EXIT_FAILURE,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    parallel::init_from_env();
    let outcome = match &cli.command {
        Command::Reconstruct(a) => reconstruct(a),
        Command::Posterior(a) => posterior_cmd(a).map_err(Failure::from),
        Command::EntropyMap(a) => entropy_map_cmd(a).map_err(Failure::from),
        Command::Moi(a) => moi_cmd(a).map_err(Failure::from),
        Command::Synth(a) => synth_cmd(a).map_err(Failure::from),
        Command::Benchmark(a) => benchmark_cmd(a).map_err(Failure::from),
        Command::Ingest(a) => ingest_cmd(a).map_err(Failure::from),
        Command::ErrorMap(a) => error_map_cmd(a).map_err(Failure::from),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::NotCertified) => {
            eprintln!("error: optimality was not certified");
            EXIT_NOT_CERTIFIED
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(cli_main(["strainsolve", "reconstruct", "--bogus"]), EXIT_USAGE);
        assert_eq!(cli_main(["strainsolve"]), EXIT_USAGE);
        assert_eq!(cli_main(["strainsolve", "--help"]), EXIT_OK);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
