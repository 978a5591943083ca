//! Posterior integration with the strain matrix summed out exactly.
//!
//! For fixed `w` the posterior over `M` factorizes over sites, so for a
//! function that splits as `f(M, w) = sum_k f_k(M_k, w)` the sum over all
//! `p^(mn)` matrices collapses to per-site sums over `p^n` blocks. The
//! remaining integral over the ordered simplex uses a quadrature rule,
//! Monte Carlo by default. Everything is carried in log scale with a shift by
//! the per-site maximum so that very small noise levels do not underflow.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{
    enumerate_block_candidates, BlockCandidates, FrequencyVector, Measurement, NoiseModel,
    ProblemDims,
};

/// Nodes per reduction chunk. Fixed so that results do not depend on the worker count.
const CHUNK: usize = 512;

/// Draws `count` points uniformly from the ordered simplex.
///
/// Normalized exponential spacings are uniform on the simplex; sorting folds
/// the `n!` congruent chambers onto the ordered one.
pub fn sample_omega_w_uniform(n: usize, count: usize, rng_seed: u64) -> Result<Vec<FrequencyVector>> {
    if n == 0 || count == 0 {
        return Err(Error::InvalidArgument("need n >= 1 and count >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0.0f64; n];
    for _ in 0..count {
        for x in buf.iter_mut() {
            *x = Exp1.sample(&mut rng);
        }
        let s: f64 = buf.iter().sum();
        let mut v: Vec<f64> = buf.iter().map(|x| x / s).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        out.push(FrequencyVector::new(v)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    MonteCarloUniform,
    UserSupplied,
}

/// Quadrature nodes on the ordered simplex with positive weights.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    nodes: Vec<FrequencyVector>,
    weights: Vec<f64>,
    kind: RuleKind,
}

impl QuadratureRule {
    pub fn new(nodes: Vec<FrequencyVector>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(shape_err("quadrature rule needs as many weights as nodes, at least one"));
        }
        let n = nodes[0].len();
        if nodes.iter().any(|w| w.len() != n) {
            return Err(shape_err("quadrature nodes differ in length"));
        }
        if weights.iter().any(|z| !(*z > 0.0) || !z.is_finite()) {
            return Err(Error::InvalidArgument("quadrature weights must be positive".into()));
        }
        Ok(Self {
            nodes,
            weights,
            kind: RuleKind::UserSupplied,
        })
    }

    /// Equal-weight Monte Carlo rule with `count` uniform nodes.
    pub fn monte_carlo(n: usize, count: usize, rng_seed: u64) -> Result<Self> {
        let nodes = sample_omega_w_uniform(n, count, rng_seed)?;
        let z = 1.0 / count as f64;
        Ok(Self {
            weights: vec![z; count],
            nodes,
            kind: RuleKind::MonteCarloUniform,
        })
    }

    pub fn nodes(&self) -> &[FrequencyVector] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// A function of `(M, w)` that is a sum of per-site terms `f_k(M_k, w)`.
///
/// `accumulate` adds `weight * f_k(B_j, w)` into `out`, where `B_j` is block
/// candidate `j` (canonical order) placed at site `k`.
pub trait SeparableFunction: Sync {
    fn dim(&self, dims: &ProblemDims) -> usize;

    fn accumulate(
        &self,
        dims: &ProblemDims,
        site: usize,
        classes: &[u8],
        w: &[f64],
        weight: f64,
        out: &mut [f64],
    );
}

/// `f = 1`, split evenly over sites.
pub struct Constant;

impl SeparableFunction for Constant {
    fn dim(&self, _: &ProblemDims) -> usize {
        1
    }

    fn accumulate(&self, dims: &ProblemDims, _: usize, _: &[u8], _: &[f64], weight: f64, out: &mut [f64]) {
        out[0] += weight / dims.m() as f64;
    }
}

/// `f = M`, row-major `q x n`.
pub struct MatrixEntries;

impl SeparableFunction for MatrixEntries {
    fn dim(&self, dims: &ProblemDims) -> usize {
        dims.q() * dims.n()
    }

    fn accumulate(&self, dims: &ProblemDims, site: usize, classes: &[u8], _: &[f64], weight: f64, out: &mut [f64]) {
        let n = dims.n();
        let base = site * dims.block_rows();
        for (t, &c) in classes.iter().enumerate() {
            if c > 0 {
                out[(base + c as usize - 1) * n + t] += weight;
            }
        }
    }
}

/// `f = w^power` entrywise, split evenly over sites.
pub struct WeightMoment(pub i32);

impl SeparableFunction for WeightMoment {
    fn dim(&self, dims: &ProblemDims) -> usize {
        dims.n()
    }

    fn accumulate(&self, dims: &ProblemDims, _: usize, _: &[u8], w: &[f64], weight: f64, out: &mut [f64]) {
        let s = weight / dims.m() as f64;
        for (o, x) in out.iter_mut().zip(w) {
            *o += s * x.powi(self.0);
        }
    }
}

/// Several functions evaluated side by side; outputs are concatenated.
pub struct Stacked<'a>(pub Vec<&'a dyn SeparableFunction>);

impl SeparableFunction for Stacked<'_> {
    fn dim(&self, dims: &ProblemDims) -> usize {
        self.0.iter().map(|f| f.dim(dims)).sum()
    }

    fn accumulate(&self, dims: &ProblemDims, site: usize, classes: &[u8], w: &[f64], weight: f64, out: &mut [f64]) {
        let mut off = 0;
        for f in &self.0 {
            let k = f.dim(dims);
            f.accumulate(dims, site, classes, w, weight, &mut out[off..off + k]);
            off += k;
        }
    }
}

/// Per-node scratch space, reused across nodes of one worker.
pub struct IntegrationWorkspace {
    candidates: BlockCandidates,
    values: Vec<f64>,
    /// `L_{k,j}` for the current site.
    log_lik: Vec<f64>,
    /// Per-site normalized block probabilities of the current site.
    probs: Vec<f64>,
    /// `J_s(f)` for the current node.
    node_sum: Vec<f64>,
}

impl IntegrationWorkspace {
    pub fn new(dims: &ProblemDims, f_dim: usize) -> Result<Self> {
        let candidates = enumerate_block_candidates(dims.n(), dims.p())?;
        let count = candidates.count();
        Ok(Self {
            candidates,
            values: Vec::new(),
            log_lik: vec![0.0; count],
            probs: vec![0.0; count],
            node_sum: vec![0.0; f_dim],
        })
    }

    fn site_log_likelihood(&mut self, dims: &ProblemDims, d: &Measurement, noise: &NoiseModel, k: usize) {
        let r = dims.block_rows();
        let dk = d.block(k);
        let iv = noise.block_inverse_variances(dims, k);
        for (l, vals) in self.log_lik.iter_mut().zip(self.values.chunks_exact(r)) {
            let mut s = 0.0;
            for c in 0..r {
                let e = vals[c] - dk[c];
                s += e * e * iv[c];
            }
            *l = -0.5 * s;
        }
    }

    /// Stores normalized probabilities of the current site; returns `U_k + ln P_k`.
    fn site_probabilities(&mut self) -> f64 {
        let u = self.log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = 0.0;
        for (pr, l) in self.probs.iter_mut().zip(&self.log_lik) {
            *pr = (l - u).exp();
            p += *pr;
        }
        for pr in self.probs.iter_mut() {
            *pr /= p;
        }
        u + p.ln()
    }

    /// Fills `node_sum` with `J_s(f) = sum_k G_k / P_k` and returns `lambda_s`.
    fn evaluate_node<F: SeparableFunction + ?Sized>(
        &mut self,
        dims: &ProblemDims,
        d: &Measurement,
        noise: &NoiseModel,
        f: &F,
        w: &[f64],
    ) -> f64 {
        self.candidates.block_values(w, &mut self.values);
        self.node_sum.iter_mut().for_each(|x| *x = 0.0);
        let mut lambda = 0.0;
        for k in 0..dims.m() {
            self.site_log_likelihood(dims, d, noise, k);
            lambda += self.site_probabilities();
            for j in 0..self.probs.len() {
                let pr = self.probs[j];
                if pr == 0.0 {
                    continue;
                }
                f.accumulate(dims, k, self.candidates.classes(j), w, pr, &mut self.node_sum);
            }
        }
        lambda
    }
}

/// Weighted sum in log scale: `exp(shift) * (total, sum)`.
#[derive(Clone, Debug)]
struct Partial {
    shift: f64,
    mass: f64,
    sum: Vec<f64>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        if other.shift > self.shift {
            return other.merge(self);
        }
        let scale = (other.shift - self.shift).exp();
        self.mass += scale * other.mass;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += scale * b;
        }
        self
    }
}

fn pairwise_merge(mut parts: Vec<Partial>) -> Partial {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().expect("at least one chunk")
}

fn check_inputs(dims: &ProblemDims, d: &Measurement, noise: &NoiseModel, n: usize) -> Result<()> {
    if d.data().iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("measurement contains NaN".into()));
    }
    if d.data().len() != dims.q() || noise.len() != dims.q() || n != dims.n() {
        return Err(shape_err("measurement, noise and quadrature nodes disagree in size"));
    }
    Ok(())
}

/// Posterior conditional mean `I(f) / I(1)`.
pub fn conditional_mean<F: SeparableFunction + ?Sized>(
    f: &F,
    d: &Measurement,
    noise: &NoiseModel,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    let dims = d.dims().with_n(rule.nodes()[0].len())?;
    check_inputs(&dims, d, noise, rule.nodes()[0].len())?;
    let dim = f.dim(&dims);
    let chunks: Vec<Partial> = rule
        .nodes()
        .par_chunks(CHUNK)
        .zip(rule.weights().par_chunks(CHUNK))
        .map(|(nodes, weights)| -> Result<Partial> {
            let mut ws = IntegrationWorkspace::new(&dims, dim)?;
            let mut lambdas = Vec::with_capacity(nodes.len());
            let mut sums = Vec::with_capacity(nodes.len() * dim);
            for (node, z) in nodes.iter().zip(weights) {
                lambdas.push(ws.evaluate_node(&dims, d, noise, f, node.values()) + z.ln());
                sums.extend_from_slice(&ws.node_sum);
            }
            let shift = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut part = Partial {
                shift,
                mass: 0.0,
                sum: vec![0.0; dim],
            };
            for (l, s) in lambdas.iter().zip(sums.chunks_exact(dim.max(1))) {
                let e = (l - shift).exp();
                part.mass += e;
                for (a, b) in part.sum.iter_mut().zip(s) {
                    *a += e * b;
                }
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;
    let total = pairwise_merge(chunks);
    if !(total.mass > 0.0) || !total.mass.is_finite() {
        return Err(Error::Numerical("posterior normalization vanished".into()));
    }
    Ok(total.sum.iter().map(|s| s / total.mass).collect())
}

/// Conditional moments of `M` and `w`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorStats {
    pub dims: ProblemDims,
    /// Row-major `q x n`.
    pub m_mean: Vec<f64>,
    pub m_std: Vec<f64>,
    pub w_mean: Vec<f64>,
    pub w_std: Vec<f64>,
    pub node_count: usize,
    pub rng_seed: u64,
}

impl PosteriorStats {
    pub fn m_mean_at(&self, i: usize, j: usize) -> f64 {
        self.m_mean[i * self.dims.n() + j]
    }

    pub fn m_std_at(&self, i: usize, j: usize) -> f64 {
        self.m_std[i * self.dims.n() + j]
    }
}

/// Posterior means and standard deviations on one shared Monte Carlo rule.
pub fn posterior_stats(
    d: &Measurement,
    noise: &NoiseModel,
    dims: ProblemDims,
    node_count: usize,
    rng_seed: u64,
) -> Result<PosteriorStats> {
    let rule = QuadratureRule::monte_carlo(dims.n(), node_count, rng_seed)?;
    let d = d.with_n(dims.n())?;
    let f = Stacked(vec![&MatrixEntries, &WeightMoment(1), &WeightMoment(2)]);
    let out = conditional_mean(&f, &d, noise, &rule)?;
    let qn = dims.q() * dims.n();
    let n = dims.n();
    let m_mean: Vec<f64> = out[..qn].iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let m_std = m_mean.iter().map(|x| (x * (1.0 - x)).max(0.0).sqrt()).collect();
    let w_mean = out[qn..qn + n].to_vec();
    let w_std = w_mean
        .iter()
        .zip(&out[qn + n..])
        .map(|(m, s2)| (s2 - m * m).max(0.0).sqrt())
        .collect();
    Ok(PosteriorStats {
        dims,
        m_mean,
        m_std,
        w_mean,
        w_std,
        node_count,
        rng_seed,
    })
}

/// Per-site Shannon entropies (bits) of `pi(M_k | w, d)`.
pub fn site_entropies(w: &FrequencyVector, d: &Measurement, noise: &NoiseModel) -> Result<Vec<f64>> {
    let dims = d.dims().with_n(w.len())?;
    check_inputs(&dims, d, noise, w.len())?;
    let mut ws = IntegrationWorkspace::new(&dims, 0)?;
    ws.candidates.block_values(w.values(), &mut ws.values);
    let mut out = Vec::with_capacity(dims.m());
    for k in 0..dims.m() {
        ws.site_log_likelihood(&dims, d, noise, k);
        ws.site_probabilities();
        let h: f64 = ws
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| -p * p.log2())
            .sum();
        out.push(h.max(0.0));
    }
    Ok(out)
}

/// Shannon entropy in bits of `pi(M | w, d)`, the sum of the per-site entropies.
pub fn entropy_of_m_given_w(w: &FrequencyVector, d: &Measurement, noise: &NoiseModel) -> Result<f64> {
    Ok(site_entropies(w, d, noise)?.iter().sum())
}

/// Ordered lattice points `(a, b, c) / resolution` with `a >= b >= c >= 0`.
pub fn ordered_simplex_grid(resolution: usize) -> Result<Vec<FrequencyVector>> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("grid resolution must be positive".into()));
    }
    let r = resolution as f64;
    let mut out = Vec::new();
    for c in 0..=resolution / 3 {
        for b in c..=(resolution - c) / 2 {
            let a = resolution - b - c;
            out.push(FrequencyVector::new(vec![a as f64 / r, b as f64 / r, c as f64 / r])?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyCell {
    pub w: [f64; 3],
    pub entropy: f64,
}

/// Entropy of `pi(M | w, d)` over the ordered triangle, three strains only.
pub fn entropy_map(
    d: &Measurement,
    noise: &NoiseModel,
    dims: ProblemDims,
    resolution: usize,
) -> Result<Vec<EntropyCell>> {
    if dims.n() != 3 {
        return Err(Error::UnsupportedDims(format!(
            "entropy maps are drawn over the triangle, need n = 3 (got {})",
            dims.n()
        )));
    }
    let d = d.with_n(3)?;
    ordered_simplex_grid(resolution)?
        .par_iter()
        .map(|w| {
            Ok(EntropyCell {
                w: [w.values()[0], w.values()[1], w.values()[2]],
                entropy: entropy_of_m_given_w(w, &d, noise)?,
            })
        })
        .collect()
}
