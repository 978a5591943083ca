//! Independent oracles and instance generators shared by the integration suites.
#![allow(dead_code)]

pub mod invariants;

use nalgebra::{DMatrix, DVector};
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

use strainsolve::eval::{add_noise, sample_ground_truth};
use strainsolve::posterior::QuadratureRule;
use strainsolve::{forward, FrequencyVector, Measurement, NoiseModel, ProblemDims, StrainMatrix};

/// Runs a property on a deterministic runner; `Err` carries the minimal failing input.
pub fn check<S, F>(cases: u32, strategy: S, test: F) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
    F: Fn(S::Value) -> Result<(), TestCaseError>,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config.clone(), TestRng::deterministic_rng(config.rng_algorithm));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Every binary `q x n` matrix, as row-major entries (valid strain matrices when `p = 2`).
pub fn all_binary_matrices(q: usize, n: usize) -> impl Iterator<Item = Vec<u8>> {
    let bits = q * n;
    (0u64..1 << bits).map(move |code| (0..bits).map(|b| ((code >> b) & 1) as u8).collect())
}

/// `min_{x >= 0, sum x = 1} sum_i iv_i (A x - d)_i^2` by enumerating supports.
///
/// On a support `S = {s_0, s_1, ...}` the equality is eliminated with
/// `x_{s_0} = 1 - sum_{t >= 1} y_t`, leaving an ordinary least-squares problem
/// in `y`. Supports whose reduced problem is rank deficient, or whose solution
/// leaves the simplex, are skipped; a vertex of the minimizer set always has a
/// support with a unique solution, so the minimum is still found.
pub fn simplex_least_squares(a: &DMatrix<f64>, d: &[f64], iv: &[f64]) -> f64 {
    let (q, n) = a.shape();
    let sw = DMatrix::from_fn(q, n, |i, j| a[(i, j)] * iv[i].sqrt());
    let sd = DVector::from_iterator(q, d.iter().zip(iv).map(|(x, v)| x * v.sqrt()));
    let mut best = f64::INFINITY;
    for support in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| support >> j & 1 == 1).collect();
        let k = cols.len();
        let base = sw.column(cols[0]).into_owned();
        let mut x = vec![0.0; n];
        if k == 1 {
            x[cols[0]] = 1.0;
        } else {
            let b = DMatrix::from_fn(q, k - 1, |i, t| sw[(i, cols[t + 1])] - base[i]);
            let svd = b.svd(true, true);
            let smax = svd.singular_values.max();
            if svd.singular_values.min() <= 1e-10 * smax.max(1e-300) {
                continue;
            }
            let Ok(y) = svd.solve(&(&sd - &base), 0.0) else { continue };
            if y.iter().any(|v| *v < -1e-13) || y.sum() > 1.0 + 1e-13 {
                continue;
            }
            for t in 0..k - 1 {
                x[cols[t + 1]] = y[t].max(0.0);
            }
            x[cols[0]] = (1.0 - y.iter().map(|v| v.max(0.0)).sum::<f64>()).max(0.0);
        }
        let r = &sw * DVector::from_vec(x) - &sd;
        best = best.min(r.norm_squared());
    }
    best
}

/// Exhaustive MAP objective for `p = 2`: every binary matrix, each with its simplex least squares.
pub fn brute_force_map(d: &[f64], gamma: &[f64], n: usize) -> f64 {
    let q = d.len();
    let iv: Vec<f64> = gamma.iter().map(|g| 1.0 / (g * g)).collect();
    all_binary_matrices(q, n)
        .map(|e| {
            let a = DMatrix::from_fn(q, n, |i, j| e[i * n + j] as f64);
            simplex_least_squares(&a, d, &iv)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Posterior means of `M` (row-major) and `w` by the direct double sum over
/// quadrature nodes and all binary matrices (`p = 2`).
pub fn brute_force_means(d: &[f64], gamma: &[f64], n: usize, rule: &QuadratureRule) -> (Vec<f64>, Vec<f64>) {
    let q = d.len();
    let matrices: Vec<Vec<u8>> = all_binary_matrices(q, n).collect();
    let mut terms = Vec::new();
    for (w, omega) in rule.nodes().iter().zip(rule.weights()) {
        for m in &matrices {
            let ll: f64 = (0..q)
                .map(|i| {
                    let pred: f64 = (0..n).map(|j| m[i * n + j] as f64 * w.values()[j]).sum();
                    -0.5 * (pred - d[i]).powi(2) / (gamma[i] * gamma[i])
                })
                .sum();
            terms.push((ll + omega.ln(), m, w));
        }
    }
    let shift = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let mut mass = 0.0;
    let mut m_sum = vec![0.0; q * n];
    let mut w_sum = vec![0.0; n];
    for (lw, m, w) in terms {
        let z = (lw - shift).exp();
        mass += z;
        for (s, &e) in m_sum.iter_mut().zip(m.iter()) {
            *s += z * e as f64;
        }
        for (s, x) in w_sum.iter_mut().zip(w.values()) {
            *s += z * x;
        }
    }
    (
        m_sum.iter().map(|s| s / mass).collect(),
        w_sum.iter().map(|s| s / mass).collect(),
    )
}

/// Entropy in bits of the full joint `pi(M | w, d)` over all binary matrices.
pub fn brute_force_entropy(w: &[f64], d: &[f64], gamma: &[f64]) -> f64 {
    let (q, n) = (d.len(), w.len());
    let lls: Vec<f64> = all_binary_matrices(q, n)
        .map(|m| {
            (0..q)
                .map(|i| {
                    let pred: f64 = (0..n).map(|j| m[i * n + j] as f64 * w[j]).sum();
                    -0.5 * (pred - d[i]).powi(2) / (gamma[i] * gamma[i])
                })
                .sum()
        })
        .collect();
    let shift = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = lls.iter().map(|l| (l - shift).exp()).sum();
    lls.iter()
        .map(|l| (l - shift).exp() / z)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum()
}

/// A noisy synthetic instance from the prior.
pub struct Instance {
    pub dims: ProblemDims,
    pub truth: (StrainMatrix, FrequencyVector),
    pub d: Measurement,
    pub noise: NoiseModel,
    pub gamma: f64,
}

pub fn noisy_instance(m: usize, n: usize, p: usize, gamma: f64, seed: u64) -> Instance {
    let dims = ProblemDims::new(m, n, p).unwrap();
    let truth = sample_ground_truth(dims, seed).unwrap();
    let noise = NoiseModel::uniform(dims.q(), gamma).unwrap();
    let d = add_noise(dims, &forward(&truth.0, &truth.1).unwrap(), &noise, seed ^ 0x5eed).unwrap();
    Instance {
        dims,
        truth,
        d,
        noise,
        gamma,
    }
}

/// `|a - b| <= tol * max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
