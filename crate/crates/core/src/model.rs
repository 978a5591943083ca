//! Domain types and the forward model.
//!
//! A measurement at `m` sites with `p` classes per site is a vector of length
//! `q = m (p - 1)`; block `k` holds the frequencies of classes `2..=p` at site
//! `k` (the reference class is implicit). A strain matrix stacks `m` binary
//! blocks of shape `(p - 1) x n` whose column sums are at most one, so every
//! strain carries exactly one class per site.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Tolerance used for the sum-to-one and ordering invariants of frequency vectors.
pub const WEIGHT_TOL: f64 = 1e-9;

/// Largest number of per-site block candidates (`p^n`) the library will enumerate.
pub const MAX_BLOCK_CANDIDATES: usize = 1 << 20;

/// Instance shape: `m` sites, `n` strains, `p` classes per site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawDims", into = "RawDims")]
pub struct ProblemDims {
    m: usize,
    n: usize,
    p: usize,
}

#[derive(Serialize, Deserialize)]
struct RawDims {
    m: usize,
    n: usize,
    p: usize,
}

impl TryFrom<RawDims> for ProblemDims {
    type Error = Error;

    fn try_from(raw: RawDims) -> Result<Self> {
        ProblemDims::new(raw.m, raw.n, raw.p)
    }
}

impl From<ProblemDims> for RawDims {
    fn from(d: ProblemDims) -> Self {
        RawDims {
            m: d.m,
            n: d.n,
            p: d.p,
        }
    }
}

impl ProblemDims {
    pub fn new(m: usize, n: usize, p: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "m and n must be positive (got m={m}, n={n})"
            )));
        }
        if p < 2 {
            return Err(Error::InvalidArgument(format!("p must be at least 2 (got {p})")));
        }
        Ok(Self { m, n, p })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of measurement rows, `m (p - 1)`.
    pub fn q(&self) -> usize {
        self.m * (self.p - 1)
    }

    /// Rows per site block.
    pub fn block_rows(&self) -> usize {
        self.p - 1
    }

    /// Row range of block `k`.
    pub fn block_range(&self, k: usize) -> Range<usize> {
        let r = self.p - 1;
        k * r..(k + 1) * r
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.m, n, self.p)
    }
}

/// Block-binary strain matrix, `q x n`, stored row-major.
///
/// Column `j` is the barcode of strain `j`. Within every block each column has
/// at most one nonzero entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrainMatrix {
    dims: ProblemDims,
    entries: Vec<u8>,
}

impl StrainMatrix {
    pub fn zeros(dims: ProblemDims) -> Self {
        Self {
            dims,
            entries: vec![0; dims.q() * dims.n()],
        }
    }

    /// Builds a matrix from row-major entries, validating binarity and block column sums.
    pub fn from_entries(dims: ProblemDims, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != dims.q() * dims.n() {
            return Err(shape_err(format!(
                "expected {} entries for a {}x{} matrix, got {}",
                dims.q() * dims.n(),
                dims.q(),
                dims.n(),
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "entry {} of strain matrix is not binary",
                pos
            )));
        }
        let mat = Self { dims, entries };
        for k in 0..dims.m() {
            for j in 0..dims.n() {
                let s: u32 = dims.block_range(k).map(|i| mat.get(i, j) as u32).sum();
                if s > 1 {
                    return Err(Error::InvalidArgument(format!(
                        "column {j} of block {k} has {s} nonzero entries"
                    )));
                }
            }
        }
        Ok(mat)
    }

    pub fn from_rows(dims: ProblemDims, rows: &[Vec<u8>]) -> Result<Self> {
        if rows.len() != dims.q() || rows.iter().any(|r| r.len() != dims.n()) {
            return Err(shape_err(format!(
                "expected {} rows of length {}",
                dims.q(),
                dims.n()
            )));
        }
        Self::from_entries(dims, rows.concat())
    }

    /// Assembles a matrix from one candidate index per site.
    pub fn from_candidates(dims: ProblemDims, candidates: &BlockCandidates, choice: &[usize]) -> Self {
        assert_eq!(choice.len(), dims.m());
        assert_eq!(candidates.n(), dims.n());
        assert_eq!(candidates.p(), dims.p());
        let mut mat = Self::zeros(dims);
        for (k, &c) in choice.iter().enumerate() {
            mat.set_block_classes(k, candidates.classes(c));
        }
        mat
    }

    /// Builds a matrix from per-site class labels (`classes[k][j]` in `0..p`, 0 = reference).
    pub fn from_classes(dims: ProblemDims, classes: &[Vec<u8>]) -> Result<Self> {
        if classes.len() != dims.m() || classes.iter().any(|c| c.len() != dims.n()) {
            return Err(shape_err("class table must be m x n"));
        }
        let mut mat = Self::zeros(dims);
        for (k, row) in classes.iter().enumerate() {
            if row.iter().any(|&c| c as usize >= dims.p()) {
                return Err(Error::InvalidArgument(format!("class label out of range at site {k}")));
            }
            mat.set_block_classes(k, row);
        }
        Ok(mat)
    }

    fn set_block_classes(&mut self, k: usize, classes: &[u8]) {
        let n = self.dims.n();
        let base = self.dims.block_range(k).start;
        for i in self.dims.block_range(k) {
            self.entries[i * n..(i + 1) * n].fill(0);
        }
        for (j, &c) in classes.iter().enumerate() {
            if c > 0 {
                self.entries[(base + c as usize - 1) * n + j] = 1;
            }
        }
    }

    pub fn dims(&self) -> ProblemDims {
        self.dims
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.dims.n() + j]
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let n = self.dims.n();
        &self.entries[i * n..(i + 1) * n]
    }

    pub fn column(&self, j: usize) -> Vec<u8> {
        (0..self.dims.q()).map(|i| self.get(i, j)).collect()
    }

    /// Row-major entries of block `k`, shape `(p - 1) x n`.
    pub fn block(&self, k: usize) -> &[u8] {
        let n = self.dims.n();
        let r = self.dims.block_range(k);
        &self.entries[r.start * n..r.end * n]
    }

    /// Class label of every strain at site `k` (0 = reference class).
    pub fn block_classes(&self, k: usize) -> Vec<u8> {
        let n = self.dims.n();
        let mut out = vec![0u8; n];
        for (c, i) in self.dims.block_range(k).enumerate() {
            for (j, slot) in out.iter_mut().enumerate() {
                if self.entries[i * n + j] == 1 {
                    *slot = c as u8 + 1;
                }
            }
        }
        out
    }

    /// Index of block `k` in the canonical candidate order.
    pub fn candidate_index(&self, k: usize) -> usize {
        BlockCandidates::index_of_classes(self.dims.p(), &self.block_classes(k))
    }

    /// Dense product `M w` for an arbitrary real vector `w`.
    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        let n = self.dims.n();
        if w.len() != n {
            return Err(shape_err(format!(
                "weight vector has length {}, matrix has {} columns",
                w.len(),
                n
            )));
        }
        Ok(self
            .entries
            .chunks_exact(n)
            .map(|row| row.iter().zip(w).filter(|(&m, _)| m == 1).map(|(_, &x)| x).sum())
            .collect())
    }

    /// Returns the matrix whose column `j` is column `perm[j]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let n = self.dims.n();
        assert_eq!(perm.len(), n);
        let mut entries = vec![0u8; self.entries.len()];
        for (src_row, dst_row) in self.entries.chunks_exact(n).zip(entries.chunks_exact_mut(n)) {
            for (j, &pj) in perm.iter().enumerate() {
                dst_row[j] = src_row[pj];
            }
        }
        Self {
            dims: self.dims,
            entries,
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.dims.q(),
            self.dims.n(),
            self.entries.iter().map(|&v| v as f64),
        )
    }

    /// Numerical column rank.
    pub fn rank(&self) -> usize {
        self.to_dmatrix().rank(1e-9)
    }

    pub fn has_duplicate_columns(&self) -> bool {
        let cols: Vec<Vec<u8>> = (0..self.dims.n()).map(|j| self.column(j)).collect();
        (0..cols.len()).any(|a| (a + 1..cols.len()).any(|b| cols[a] == cols[b]))
    }
}

/// Strain frequencies on the ordered simplex: non-negative, summing to one, non-increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyVector(Vec<f64>);

impl TryFrom<Vec<f64>> for FrequencyVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FrequencyVector::new(v)
    }
}

impl From<FrequencyVector> for Vec<f64> {
    fn from(w: FrequencyVector) -> Self {
        w.0
    }
}

impl FrequencyVector {
    /// Validates ordering and the sum-to-one constraint, then normalizes by the sum.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("frequency vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < -WEIGHT_TOL || *v > 1.0 + WEIGHT_TOL) {
            return Err(Error::InvalidArgument(format!(
                "frequency entries must lie in [0, 1]: {values:?}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidArgument(format!(
                "frequencies sum to {sum}, expected 1"
            )));
        }
        if values.windows(2).any(|p| p[1] > p[0] + WEIGHT_TOL) {
            return Err(Error::InvalidArgument(format!(
                "frequencies must be non-increasing: {values:?}"
            )));
        }
        Ok(Self::normalized(values))
    }

    /// Sorts descending before validating.
    pub fn sorted_from(mut values: Vec<f64>) -> Result<Self> {
        values.sort_by(|a, b| b.total_cmp(a));
        Self::new(values)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    fn normalized(mut values: Vec<f64>) -> Self {
        for v in values.iter_mut() {
            *v = v.max(0.0);
        }
        // Leave vectors that already sum to one up to rounding untouched, so
        // that rebuilding from stored values is exact.
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-14 {
            for v in values.iter_mut() {
                *v /= sum;
            }
        }
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Measured class frequencies, one block of `p - 1` values per site.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    dims: ProblemDims,
    data: Vec<f64>,
    out_of_range: bool,
}

impl Measurement {
    /// Values outside `[0, 1]` (or blocks summing above one) are accepted and flagged.
    pub fn new(dims: ProblemDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.q() {
            return Err(shape_err(format!(
                "measurement has length {}, expected q = {}",
                data.len(),
                dims.q()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("measurement entry {i} is not finite")));
        }
        let out_of_range = data.iter().any(|&v| !(0.0..=1.0).contains(&v))
            || (0..dims.m()).any(|k| data[dims.block_range(k)].iter().sum::<f64>() > 1.0);
        Ok(Self {
            dims,
            data,
            out_of_range,
        })
    }

    pub fn dims(&self) -> ProblemDims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.data[self.dims.block_range(k)]
    }

    /// True when some value lies outside `[0, 1]` or some block sums above one.
    pub fn out_of_range(&self) -> bool {
        self.out_of_range
    }

    /// Same data reinterpreted for a different number of strains.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.dims.with_n(n)?, self.data.clone())
    }
}

/// Diagonal Gaussian noise, `Gamma = diag(gamma_1^2, ..., gamma_q^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    stddevs: Vec<f64>,
    inv_var: Vec<f64>,
}

impl NoiseModel {
    pub fn new(stddevs: Vec<f64>) -> Result<Self> {
        if stddevs.is_empty() {
            return Err(Error::InvalidArgument("noise model is empty".into()));
        }
        if stddevs.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::InvalidArgument(
                "noise standard deviations must be positive and finite".into(),
            ));
        }
        let inv_var = stddevs.iter().map(|g| 1.0 / (g * g)).collect();
        Ok(Self { stddevs, inv_var })
    }

    pub fn uniform(q: usize, gamma: f64) -> Result<Self> {
        Self::new(vec![gamma; q])
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    /// `1 / gamma_i^2` for every row.
    pub fn inverse_variances(&self) -> &[f64] {
        &self.inv_var
    }

    pub fn len(&self) -> usize {
        self.stddevs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stddevs.is_empty()
    }

    /// Standard deviations of block `k`.
    pub fn block(&self, dims: &ProblemDims, k: usize) -> &[f64] {
        &self.stddevs[dims.block_range(k)]
    }

    pub fn block_inverse_variances(&self, dims: &ProblemDims, k: usize) -> &[f64] {
        &self.inv_var[dims.block_range(k)]
    }

    /// Expected noise energy `sum_i gamma_i^2`.
    pub fn total_variance(&self) -> f64 {
        self.stddevs.iter().map(|g| g * g).sum()
    }
}

/// A MAP estimate together with its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub matrix: StrainMatrix,
    pub weights: FrequencyVector,
    pub objective: f64,
    /// Set only by the global solver once the optimality gap closed.
    pub certified: bool,
    /// Relative optimality gap; `None` for local solutions.
    pub gap: Option<f64>,
}

impl Reconstruction {
    /// Evaluates the objective for `(matrix, weights)`; the result is uncertified.
    pub fn evaluate(
        matrix: StrainMatrix,
        weights: FrequencyVector,
        d: &Measurement,
        noise: &NoiseModel,
    ) -> Result<Self> {
        let objective = objective_phi(&matrix, &weights, d, noise)?;
        Ok(Self {
            matrix,
            weights,
            objective,
            certified: false,
            gap: None,
        })
    }
}

/// Noise-free forward model `M w`.
pub fn forward(matrix: &StrainMatrix, weights: &FrequencyVector) -> Result<Vec<f64>> {
    matrix.apply(weights.values())
}

/// Negative log-posterior up to constants: `sum_i (M w - d)_i^2 / gamma_i^2`.
pub fn objective_phi(
    matrix: &StrainMatrix,
    weights: &FrequencyVector,
    d: &Measurement,
    noise: &NoiseModel,
) -> Result<f64> {
    let q = matrix.dims().q();
    if d.data().len() != q || noise.len() != q {
        return Err(shape_err(format!(
            "matrix has {q} rows, data {} and noise {}",
            d.data().len(),
            noise.len()
        )));
    }
    let mw = matrix.apply(weights.values())?;
    Ok(weighted_sq_residual(&mw, d.data(), noise.inverse_variances()))
}

pub(crate) fn weighted_sq_residual(pred: &[f64], data: &[f64], inv_var: &[f64]) -> f64 {
    pred.iter()
        .zip(data)
        .zip(inv_var)
        .map(|((a, b), iv)| (a - b) * (a - b) * iv)
        .sum()
}

/// All `p^n` feasible blocks of a single site, in canonical order.
///
/// Candidate `j` is decoded in base `p`; digit `t` (least significant first)
/// is the class of strain `t`. Class 0 is the reference (all-zero column),
/// class `c >= 1` puts the single one in row `c - 1` of the block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCandidates {
    n: usize,
    p: usize,
    classes: Vec<u8>,
}

/// Enumerates the block feasible set of one site in canonical order.
pub fn enumerate_block_candidates(n: usize, p: usize) -> Result<BlockCandidates> {
    if n == 0 || p < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 1 and p >= 2 (got n={n}, p={p})")));
    }
    let count = (p as u128)
        .checked_pow(n as u32)
        .filter(|&c| c <= MAX_BLOCK_CANDIDATES as u128)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "p^n = {p}^{n} exceeds the enumeration limit of {MAX_BLOCK_CANDIDATES}"
            ))
        })? as usize;
    let mut classes = Vec::with_capacity(count * n);
    for mut idx in 0..count {
        for _ in 0..n {
            classes.push((idx % p) as u8);
            idx /= p;
        }
    }
    Ok(BlockCandidates { n, p, classes })
}

impl BlockCandidates {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn count(&self) -> usize {
        self.classes.len() / self.n
    }

    /// Class label per strain for candidate `j`.
    pub fn classes(&self, j: usize) -> &[u8] {
        &self.classes[j * self.n..(j + 1) * self.n]
    }

    /// Dense `(p - 1) x n` block of candidate `j`, row-major.
    pub fn block(&self, j: usize) -> Vec<u8> {
        let mut out = vec![0u8; (self.p - 1) * self.n];
        for (t, &c) in self.classes(j).iter().enumerate() {
            if c > 0 {
                out[(c as usize - 1) * self.n + t] = 1;
            }
        }
        out
    }

    pub fn index_of_classes(p: usize, classes: &[u8]) -> usize {
        classes.iter().rev().fold(0, |acc, &c| acc * p + c as usize)
    }

    /// Fills `out` with `M^(j) w` for every candidate, `count x (p - 1)` row-major.
    pub fn block_values(&self, w: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(w.len(), self.n);
        let r = self.p - 1;
        out.clear();
        out.resize(self.count() * r, 0.0);
        for (j, vals) in out.chunks_exact_mut(r).enumerate() {
            for (t, &c) in self.classes(j).iter().enumerate() {
                if c > 0 {
                    vals[c as usize - 1] += w[t];
                }
            }
        }
    }
}

/// True when no nonzero `c` in `{-1, 0, 1}^n` has `|c . w| <= tol`.
pub fn is_bi_independent(weights: &FrequencyVector, tol: f64) -> bool {
    bi_independence_margin(weights.values()) > tol
}

/// Smallest `|c . w|` over nonzero sign vectors `c in {-1, 0, 1}^n`.
pub fn bi_independence_margin(w: &[f64]) -> f64 {
    let n = w.len();
    let total = 3usize.pow(n as u32);
    let mut best = f64::INFINITY;
    for mut code in 1..total {
        let mut s = 0.0;
        for &x in w {
            match code % 3 {
                1 => s += x,
                2 => s -= x,
                _ => {}
            }
            code /= 3;
        }
        best = best.min(s.abs());
    }
    best
}
