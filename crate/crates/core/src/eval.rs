//! Synthetic instances, the reconstruction error and benchmark harnesses.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::MapBackend;
use crate::bcd::BcdConfig;
use crate::error::{shape_err, Error, Result};
use crate::global::GlobalConfig;
use crate::model::{forward, FrequencyVector, Measurement, NoiseModel, ProblemDims, StrainMatrix};
use crate::parallel::derive_seed;
use crate::posterior::{ordered_simplex_grid, sample_omega_w_uniform};

/// Attempts at drawing a matrix with pairwise distinct columns before giving up.
pub const MAX_REJECTIONS: usize = 10_000;

/// `tau(M) diag(w)`: each block gets its reference row back, so every block
/// column sums to `w_j`. Row-major `(m p) x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedBarcode {
    n: usize,
    augmented: Vec<f64>,
}

impl WeightedBarcode {
    /// `weights` need not be ordered here.
    pub fn new(matrix: &StrainMatrix, weights: &[f64]) -> Result<Self> {
        let dims = matrix.dims();
        let n = dims.n();
        if weights.len() != n {
            return Err(shape_err("weights and matrix disagree in the number of strains"));
        }
        let (m, r) = (dims.m(), dims.block_rows());
        let mut augmented = vec![0.0; m * (r + 1) * n];
        for k in 0..m {
            let classes = matrix.block_classes(k);
            for (j, &c) in classes.iter().enumerate() {
                augmented[(k * (r + 1) + c as usize) * n + j] = weights[j];
            }
        }
        Ok(Self { n, augmented })
    }

    pub fn rows(&self) -> usize {
        self.augmented.len() / self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.augmented[row * self.n + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.augmented
    }

    /// 1-norm distance minimized over column permutations, with the
    /// minimizing assignment (`matching[j]` is the column of `other` paired
    /// with column `j` of `self`).
    pub fn distance(&self, other: &WeightedBarcode) -> Result<(f64, Vec<usize>)> {
        if self.n != other.n || self.augmented.len() != other.augmented.len() {
            return Err(shape_err("weighted barcodes have different shapes"));
        }
        Ok(best_matching(self, other))
    }
}

/// Number of distinct barcode columns, `p^m`, saturating.
fn distinct_columns(dims: &ProblemDims) -> u128 {
    (dims.p() as u128).checked_pow(dims.m() as u32).unwrap_or(u128::MAX)
}

/// Draws `(M, w)` from the uniform prior, with pairwise distinct columns in `M`.
pub fn sample_ground_truth(dims: ProblemDims, rng_seed: u64) -> Result<(StrainMatrix, FrequencyVector)> {
    if distinct_columns(&dims) < dims.n() as u128 {
        return Err(Error::Capacity(format!(
            "only {} distinct barcodes exist for m = {}, p = {}; cannot draw {} strains",
            distinct_columns(&dims),
            dims.m(),
            dims.p(),
            dims.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (m, n, p) = (dims.m(), dims.n(), dims.p());
    for _ in 0..MAX_REJECTIONS {
        let classes: Vec<Vec<u8>> = (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(0..p) as u8).collect())
            .collect();
        let matrix = StrainMatrix::from_classes(dims, &classes)?;
        if !matrix.has_duplicate_columns() {
            let w = sample_omega_w_uniform(n, 1, rng.random())?.remove(0);
            return Ok((matrix, w));
        }
    }
    Err(Error::Capacity(format!(
        "no matrix with distinct columns after {MAX_REJECTIONS} draws"
    )))
}

/// Adds independent `N(0, gamma_i^2)` noise.
pub fn add_noise(dims: ProblemDims, clean: &[f64], noise: &NoiseModel, rng_seed: u64) -> Result<Measurement> {
    if clean.len() != noise.len() {
        return Err(shape_err("clean data and noise model disagree in length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let data = clean
        .iter()
        .zip(noise.stddevs())
        .map(|(&x, &g)| {
            let e: f64 = Normal::new(0.0, g)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(&mut rng);
            Ok(x + e)
        })
        .collect::<Result<Vec<_>>>()?;
    Measurement::new(dims, data)
}

/// Reconstruction error and the column matching that attains it.
///
/// `matching[j]` is the estimate column paired with truth column `j`.
pub fn recon_error_matching(
    truth: (&StrainMatrix, &FrequencyVector),
    estimate: (&StrainMatrix, &FrequencyVector),
) -> Result<(f64, Vec<usize>)> {
    if truth.0.dims() != estimate.0.dims() {
        return Err(shape_err("truth and estimate have different dimensions"));
    }
    let a = WeightedBarcode::new(truth.0, truth.1.values())?;
    let b = WeightedBarcode::new(estimate.0, estimate.1.values())?;
    Ok(best_matching(&a, &b))
}

fn best_matching(a: &WeightedBarcode, b: &WeightedBarcode) -> (f64, Vec<usize>) {
    let n = a.n;
    // The 1-norm splits over columns, so score every column pair once.
    let mut cost = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            cost[j * n + k] = (0..a.rows()).map(|r| (a.get(r, j) - b.get(r, k)).abs()).sum();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    for perm in (0..n).permutations(n) {
        let e: f64 = perm.iter().enumerate().map(|(j, &k)| cost[j * n + k]).sum();
        if e < best.0 {
            best = (e, perm);
        }
    }
    best
}

/// Entrywise 1-norm distance of the weighted barcodes, minimized over column permutations.
pub fn recon_error(
    truth: (&StrainMatrix, &FrequencyVector),
    estimate: (&StrainMatrix, &FrequencyVector),
) -> Result<f64> {
    Ok(recon_error_matching(truth, estimate)?.0)
}

/// Mean distance between independent prior draws.
pub fn random_pair_baseline(dims: ProblemDims, pairs: usize, rng_seed: u64) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    let errors = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let a = sample_ground_truth(dims, derive_seed(rng_seed, &[i as u64, 0]))?;
            let b = sample_ground_truth(dims, derive_seed(rng_seed, &[i as u64, 1]))?;
            recon_error((&a.0, &a.1), (&b.0, &b.1))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.iter().sum::<f64>() / pairs as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimsCell {
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Bcd,
    Global,
    Hybrid,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Bcd => "bcd",
            BackendKind::Global => "global",
            BackendKind::Hybrid => "hybrid",
        }
    }
}

/// Benchmark description, usually read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub cells: Vec<DimsCell>,
    pub gammas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub sample_count: usize,
    #[serde(default = "default_backends")]
    pub backends: Vec<BackendKind>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub bcd: BcdConfig,
    #[serde(default)]
    pub global: GlobalConfig,
    #[serde(default = "default_pairs")]
    pub baseline_pairs: usize,
}

fn default_samples() -> usize {
    200
}

fn default_backends() -> Vec<BackendKind> {
    vec![BackendKind::Bcd, BackendKind::Global]
}

fn default_pairs() -> usize {
    10_000
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 || self.cells.is_empty() || self.gammas.is_empty() || self.backends.is_empty() {
            return Err(Error::InvalidArgument(
                "benchmark needs cells, noise levels, backends and at least one sample".into(),
            ));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::InvalidArgument("noise levels must be positive".into()));
        }
        self.bcd.validate()
    }

    fn backend(&self, kind: BackendKind) -> MapBackend {
        match kind {
            BackendKind::Bcd => MapBackend::Bcd(self.bcd),
            BackendKind::Global => MapBackend::Global(self.global),
            BackendKind::Hybrid => MapBackend::Hybrid {
                bcd: self.bcd,
                global: self.global,
            },
        }
    }
}

/// One solve of one sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub cell: DimsCell,
    pub gamma: f64,
    pub sample: usize,
    pub backend: BackendKind,
    pub error: Option<f64>,
    pub objective: Option<f64>,
    pub certified: bool,
    pub failure: Option<String>,
    /// Seconds; not part of the deterministic output.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: DimsCell,
    pub gamma: f64,
    pub backend: BackendKind,
    pub sorted_errors: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub failures: usize,
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
    pub summaries: Vec<CellSummary>,
}

impl BenchmarkResult {
    pub fn summary(&self, cell: DimsCell, gamma: f64, backend: BackendKind) -> Option<&CellSummary> {
        self.summaries
            .iter()
            .find(|s| s.cell == cell && s.gamma == gamma && s.backend == backend)
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs every backend on every sample of every `(cell, gamma)` combination.
///
/// The ground truth depends on the cell and the sample index only, so noise
/// levels are compared on the same instances. Rows come back in the order
/// cell, noise level, sample, backend regardless of scheduling.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkResult> {
    spec.validate()?;
    let mut tasks = Vec::new();
    for (ci, cell) in spec.cells.iter().enumerate() {
        let dims = ProblemDims::new(cell.m, cell.n, cell.p)?;
        for (gi, &gamma) in spec.gammas.iter().enumerate() {
            for s in 0..spec.sample_count {
                tasks.push((ci, *cell, dims, gi, gamma, s));
            }
        }
    }
    let rows: Vec<Vec<BenchmarkRow>> = tasks
        .par_iter()
        .map(|&(ci, cell, dims, gi, gamma, s)| {
            let truth = sample_ground_truth(dims, derive_seed(spec.rng_seed, &[ci as u64, s as u64, 0]))?;
            let noise = NoiseModel::uniform(dims.q(), gamma)?;
            let clean = forward(&truth.0, &truth.1)?;
            let d = add_noise(
                dims,
                &clean,
                &noise,
                derive_seed(spec.rng_seed, &[ci as u64, s as u64, 1 + gi as u64]),
            )?;
            Ok(spec
                .backends
                .iter()
                .map(|&kind| {
                    let started = std::time::Instant::now();
                    let outcome = spec.backend(kind).solve(&d, &noise, dims).and_then(|rec| {
                        let e = recon_error((&truth.0, &truth.1), (&rec.matrix, &rec.weights))?;
                        Ok((e, rec))
                    });
                    let wall_time = started.elapsed().as_secs_f64();
                    match outcome {
                        Ok((e, rec)) => BenchmarkRow {
                            cell,
                            gamma,
                            sample: s,
                            backend: kind,
                            error: Some(e),
                            objective: Some(rec.objective),
                            certified: rec.certified,
                            failure: None,
                            wall_time,
                        },
                        Err(err) => BenchmarkRow {
                            cell,
                            gamma,
                            sample: s,
                            backend: kind,
                            error: None,
                            objective: None,
                            certified: false,
                            failure: Some(err.to_string()),
                            wall_time,
                        },
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<BenchmarkRow> = rows.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for (ci, cell) in spec.cells.iter().enumerate() {
        let dims = ProblemDims::new(cell.m, cell.n, cell.p)?;
        let baseline = random_pair_baseline(dims, spec.baseline_pairs, derive_seed(spec.rng_seed, &[ci as u64, u64::MAX]))?;
        for &gamma in &spec.gammas {
            for &backend in &spec.backends {
                let mine = rows
                    .iter()
                    .filter(|r| r.cell == *cell && r.gamma == gamma && r.backend == backend);
                let failures = mine.clone().filter(|r| r.error.is_none()).count();
                let mut sorted: Vec<f64> = mine.filter_map(|r| r.error).collect();
                sorted.sort_by(f64::total_cmp);
                let mean = sorted.iter().sum::<f64>() / sorted.len().max(1) as f64;
                summaries.push(CellSummary {
                    cell: *cell,
                    gamma,
                    backend,
                    mean,
                    median: quantile(&sorted, 0.5),
                    q10: quantile(&sorted, 0.1),
                    q90: quantile(&sorted, 0.9),
                    sorted_errors: sorted,
                    failures,
                    baseline,
                });
            }
        }
    }
    Ok(BenchmarkResult { rows, summaries })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorCell {
    pub gamma: f64,
    pub w: [f64; 3],
    pub error: f64,
}

/// Reconstruction error of coordinate descent over the ordered triangle of
/// weights, for a fixed three-strain barcode matrix.
pub fn error_vs_w_map(
    m_fixed: &StrainMatrix,
    gammas: &[f64],
    resolution: usize,
    rng_seed: u64,
    bcd: &BcdConfig,
) -> Result<Vec<ErrorCell>> {
    let dims = m_fixed.dims();
    if dims.n() != 3 {
        return Err(Error::UnsupportedDims(format!(
            "error maps are drawn over the triangle, need n = 3 (got {})",
            dims.n()
        )));
    }
    let grid = ordered_simplex_grid(resolution)?;
    let mut tasks = Vec::new();
    for (gi, &g) in gammas.iter().enumerate() {
        for (wi, w) in grid.iter().enumerate() {
            tasks.push((gi, g, wi, w));
        }
    }
    tasks
        .par_iter()
        .map(|&(gi, gamma, wi, w)| {
            let noise = NoiseModel::uniform(dims.q(), gamma)?;
            let clean = forward(m_fixed, w)?;
            let d = add_noise(dims, &clean, &noise, derive_seed(rng_seed, &[gi as u64, wi as u64]))?;
            let cfg = BcdConfig {
                rng_seed: derive_seed(rng_seed, &[gi as u64, wi as u64, 1]),
                ..*bcd
            };
            let est = MapBackend::Bcd(cfg).solve(&d, &noise, dims)?;
            Ok(ErrorCell {
                gamma,
                w: [w.values()[0], w.values()[1], w.values()[2]],
                error: recon_error((m_fixed, w), (&est.matrix, &est.weights))?,
            })
        })
        .collect()
}

/// Coordinate descent settings used for error maps: 200 trials, otherwise defaults.
pub fn error_map_bcd_config() -> BcdConfig {
    BcdConfig {
        n_trials: 200,
        ..BcdConfig::default()
    }
}
