//! Module invariants as property checks. Each function runs `cases` random
//! cases and returns the shrunk counterexample on failure.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use strainsolve::backend::MapBackend;
use strainsolve::bcd::{bcd_map, estimate_moi, solve_m_given_w, BcdConfig};
use strainsolve::eval::{BackendKind, BenchmarkResult, BenchmarkRow, DimsCell, ErrorCell, WeightedBarcode};
use strainsolve::global::{build_mccormick, solve_global_with, GlobalConfig};
use strainsolve::io::{self, OutputFormat, ResultFile, SiteRecord};
use strainsolve::posterior::{
    conditional_mean, entropy_of_m_given_w, sample_omega_w_uniform, site_entropies, Constant, EntropyCell,
    MatrixEntries, PosteriorStats, QuadratureRule, Stacked, WeightMoment,
};
use strainsolve::qp::{solve_simplex_qp, solve_w_given_m, SimplexQp};
use strainsolve::{
    enumerate_block_candidates, objective_phi, FrequencyVector, Measurement, NoiseModel, ProblemDims, Reconstruction,
    StrainMatrix,
};

use super::{all_binary_matrices, brute_force_entropy, brute_force_map, brute_force_means, check, close};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(dims: ProblemDims, r: &mut ChaCha8Rng) -> StrainMatrix {
    let classes: Vec<Vec<u8>> = (0..dims.m())
        .map(|_| (0..dims.n()).map(|_| r.random_range(0..dims.p()) as u8).collect())
        .collect();
    StrainMatrix::from_classes(dims, &classes).unwrap()
}

fn random_weights(n: usize, r: &mut ChaCha8Rng) -> FrequencyVector {
    sample_omega_w_uniform(n, 1, r.random()).unwrap().remove(0)
}

fn random_data(q: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..q).map(|_| r.random::<f64>()).collect()
}

fn gamma_of(code: u8) -> f64 {
    [1e-1, 1e-2, 1e-3, 3e-2][code as usize % 4]
}

/// Random instance: dims, data and uniform noise.
fn instance(m: usize, n: usize, p: usize, gamma: f64, seed: u64) -> (ProblemDims, Measurement, NoiseModel) {
    let dims = ProblemDims::new(m, n, p).unwrap();
    let mut r = rng(seed);
    let d = Measurement::new(dims, random_data(dims.q(), &mut r)).unwrap();
    (dims, d, NoiseModel::uniform(dims.q(), gamma).unwrap())
}

// ------------------------------------------------------------------ model

pub fn forward_is_bilinear(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=5, 1usize..=4, 2usize..=4, any::<u64>(), -3.0..3.0f64, -3.0..3.0f64),
        |(m, n, p, seed, a, b)| {
            let dims = ProblemDims::new(m, n, p).unwrap();
            let mut r = rng(seed);
            let mat = random_matrix(dims, &mut r);
            let w1: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let w2: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
            let lhs = mat.apply(&mix).unwrap();
            let f1 = mat.apply(&w1).unwrap();
            let f2 = mat.apply(&w2).unwrap();
            for i in 0..dims.q() {
                let rhs = a * f1[i] + b * f2[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs() + (a * f1[i]).abs() + (b * f2[i]).abs()));
            }
            Ok(())
        },
    )
}

pub fn exact_data_has_zero_objective(cases: u32) -> Result<(), String> {
    check(cases, (1usize..=6, 1usize..=4, 2usize..=4, any::<u64>()), |(m, n, p, seed)| {
        let dims = ProblemDims::new(m, n, p).unwrap();
        let mut r = rng(seed);
        let mat = random_matrix(dims, &mut r);
        // Dyadic weights: every partial sum is exact.
        let mut parts = vec![0u32; n];
        for _ in 0..64 {
            parts[r.random_range(0..n)] += 1;
        }
        parts.sort_unstable_by(|a, b| b.cmp(a));
        let w = FrequencyVector::new(parts.iter().map(|&k| k as f64 / 64.0).collect()).unwrap();
        let d = Measurement::new(dims, mat.apply(w.values()).unwrap()).unwrap();
        let noise = NoiseModel::uniform(dims.q(), 1e-3).unwrap();
        prop_assert_eq!(objective_phi(&mat, &w, &d, &noise).unwrap(), 0.0);
        Ok(())
    })
}

pub fn block_candidates_are_canonical(cases: u32) -> Result<(), String> {
    check(cases, (1usize..=6, 2usize..=5), |(n, p)| {
        prop_assume!((p as u64).pow(n as u32) <= 1 << 14);
        let c = enumerate_block_candidates(n, p).unwrap();
        let again = enumerate_block_candidates(n, p).unwrap();
        prop_assert_eq!(&c, &again);
        let count = p.pow(n as u32);
        prop_assert_eq!(c.count(), count);
        let mut seen = std::collections::HashSet::new();
        for j in 0..count {
            let block = c.block(j);
            prop_assert!(seen.insert(block.clone()), "duplicate candidate {}", j);
            for t in 0..n {
                let col: u8 = (0..p - 1).map(|row| block[row * n + t]).sum();
                prop_assert!(col <= 1);
            }
            // Base-p digits, strain 1 least significant.
            let mut idx = j;
            for t in 0..n {
                prop_assert_eq!(c.classes(j)[t] as usize, idx % p);
                idx /= p;
            }
        }
        if p == 2 {
            let all: std::collections::HashSet<Vec<u8>> = all_binary_matrices(1, n).collect();
            prop_assert_eq!(seen, all);
        }
        Ok(())
    })
}

// --------------------------------------------------------------------- qp

fn random_simplex_qp(n: usize, rank: usize, seed: u64) -> SimplexQp {
    let mut r = rng(seed);
    let b = DMatrix::from_fn(rank, n, |_, _| r.random_range(-1.0..1.0));
    let h = b.transpose() * b;
    let h = (&h + h.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
    SimplexQp::new(h, g, vec![0.0; n], vec![1.0; n], vec![1.0; n], 1.0).unwrap()
}

pub fn qp_descends_and_stays_feasible(cases: u32) -> Result<(), String> {
    check(cases, (1usize..=8, 0usize..=8, any::<u64>()), |(n, rank, seed)| {
        let qp = random_simplex_qp(n, rank, seed);
        let start = vec![1.0 / n as f64; n];
        let (x, report) = solve_simplex_qp(&qp, &start, 500, 1e-12).unwrap();
        for pair in report.objective_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0), "{:?}", report.objective_trace);
        }
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(x.iter().all(|v| *v >= -1e-9 && *v <= 1.0 + 1e-9));
        Ok(())
    })
}

pub fn two_strain_weights_beat_grid(cases: u32) -> Result<(), String> {
    check(cases, (1usize..=5, any::<u64>(), 0.1..1.0f64), |(m, seed, gamma)| {
        let (dims, d, noise) = instance(m, 2, 2, gamma, seed);
        let mat = random_matrix(dims, &mut rng(seed ^ 1));
        let up = solve_w_given_m(&mat, &d, &noise, &FrequencyVector::uniform(2)).unwrap();
        let mut grid = f64::INFINITY;
        for k in 0..=10_000 {
            let a = k as f64 * 1e-4;
            let pred = mat.apply(&[a, 1.0 - a]).unwrap();
            let phi: f64 = pred.iter().zip(d.data()).map(|(x, y)| (x - y) * (x - y) / (gamma * gamma)).sum();
            grid = grid.min(phi);
        }
        prop_assert!(up.objective <= grid + 1e-12 * grid.max(1.0));
        prop_assert!(grid - up.objective <= 1e-6 * grid.max(1.0), "grid {} solver {}", grid, up.objective);
        Ok(())
    })
}

// -------------------------------------------------------------------- bcd

pub fn bcd_trials_descend(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=6, 1usize..=3, 2usize..=3, any::<u64>(), any::<u8>()),
        |(m, n, p, seed, g)| {
            let (dims, d, noise) = instance(m, n, p, gamma_of(g), seed);
            let cfg = BcdConfig {
                n_trials: 5,
                rng_seed: seed,
                keep_all_modes: true,
                ..BcdConfig::default()
            };
            let modes = bcd_map(&d, &noise, dims, &cfg).unwrap();
            let slack = |x: f64| 1e-10 * x.abs().max(1.0);
            for trial in modes.trials.as_ref().unwrap() {
                for (i, s) in trial.descent.iter().enumerate() {
                    if i > 0 {
                        prop_assert!(s[1] <= s[0] + slack(s[0]), "{:?}", trial.descent);
                        prop_assert_eq!(s[0], trial.descent[i - 1][2]);
                    }
                    prop_assert!(s[2] <= s[1] + slack(s[1]), "{:?}", trial.descent);
                }
            }
            Ok(())
        },
    )
}

pub fn site_update_matches_brute_force(cases: u32) -> Result<(), String> {
    check(cases, (1usize..=4, 1usize..=3, any::<u64>(), any::<u8>()), |(m, n, seed, g)| {
        let (dims, d, noise) = instance(m, n, 2, gamma_of(g), seed);
        let w = random_weights(n, &mut rng(seed ^ 2));
        let up = solve_m_given_w(&w, &d, &noise).unwrap();
        let got = objective_phi(&up.matrix, &w, &d, &noise).unwrap();
        let best = all_binary_matrices(dims.q(), n)
            .map(|e| objective_phi(&StrainMatrix::from_entries(dims, e).unwrap(), &w, &d, &noise).unwrap())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(close(got, best, 1e-12), "site update {} brute force {}", got, best);
        Ok(())
    })
}

pub fn bcd_is_deterministic(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=6, 1usize..=3, 2usize..=3, any::<u64>(), any::<u8>()),
        |(m, n, p, seed, g)| {
            let (dims, d, noise) = instance(m, n, p, gamma_of(g), seed);
            let cfg = BcdConfig {
                n_trials: 8,
                rng_seed: seed,
                ..BcdConfig::default()
            };
            let a = bcd_map(&d, &noise, dims, &cfg).unwrap();
            let b = bcd_map(&d, &noise, dims, &cfg).unwrap();
            prop_assert_eq!(a.best_index, b.best_index);
            prop_assert_eq!(a.modes.len(), b.modes.len());
            for (x, y) in a.modes.iter().zip(&b.modes) {
                prop_assert_eq!(&x.reconstruction.matrix, &y.reconstruction.matrix);
                prop_assert_eq!(x.reconstruction.objective.to_bits(), y.reconstruction.objective.to_bits());
                let xb: Vec<u64> = x.reconstruction.weights.values().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.reconstruction.weights.values().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
                prop_assert_eq!(x.trial, y.trial);
            }
            Ok(())
        },
    )
}

pub fn global_discrepancy_is_monotone(cases: u32) -> Result<(), String> {
    check(cases, (2usize..=5, any::<u64>()), |(m, seed)| {
        let dims = ProblemDims::new(m, 1, 2).unwrap();
        let d = Measurement::new(dims, random_data(m, &mut rng(seed))).unwrap();
        // Tiny noise so that the search never stops early; uniform noise
        // does not move the minimizer.
        let noise = NoiseModel::uniform(m, 1e-9).unwrap();
        let backend = MapBackend::Global(GlobalConfig::default());
        let est = estimate_moi(&d, &noise, m, 2, 3, &backend).unwrap();
        for pair in est.discrepancies.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-9 * pair[0].max(1e-12), "{:?}", est.discrepancies);
        }
        Ok(())
    })
}

// ----------------------------------------------------------------- global

pub fn bound_sandwich_and_monotone_trace(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=4, 1usize..=3, 2usize..=3, any::<u64>(), any::<u8>()),
        |(m, n, p, seed, g)| {
            let (dims, d, noise) = instance(m, n, p, gamma_of(g), seed);
            let cfg = GlobalConfig {
                record_trace: true,
                ..GlobalConfig::default()
            };
            let report = solve_global_with(&d, &noise, dims, &cfg, None).unwrap();
            let opt = report.incumbent.objective;
            prop_assert!(report.incumbent.certified);
            let tol = 1e-9 * opt.max(1.0);
            prop_assert!(report.lower_bound <= opt + tol);
            for t in &report.trace {
                prop_assert!(t.lower_bound <= opt + tol && opt <= t.incumbent + tol, "{:?}", t);
            }
            for pair in report.trace.windows(2) {
                prop_assert!(pair[1].lower_bound >= pair[0].lower_bound - tol);
                prop_assert!(pair[1].incumbent <= pair[0].incumbent + tol);
            }
            Ok(())
        },
    )
}

pub fn mccormick_exact_on_binary_points(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=6, 1usize..=4, 2usize..=4, any::<u64>(), any::<u8>()),
        |(m, n, p, seed, g)| {
            let (dims, d, noise) = instance(m, n, p, gamma_of(g), seed);
            let mut r = rng(seed ^ 3);
            let mat = random_matrix(dims, &mut r);
            let w = random_weights(n, &mut r);
            let model = build_mccormick(&d, &noise, dims).unwrap();
            let mf: Vec<f64> = mat.entries().iter().map(|&v| v as f64).collect();
            let z: Vec<f64> = mf.iter().enumerate().map(|(k, v)| v * w.values()[k % n]).collect();
            prop_assert!(model.violation(w.values(), &mf, &z) <= 1e-15);
            let phi = objective_phi(&mat, &w, &d, &noise).unwrap();
            prop_assert!((model.objective_z(&z) - phi).abs() <= 1e-12 * phi.max(1.0));
            Ok(())
        },
    )
}

/// Shapes with `m n <= 12`, `n <= 4`.
fn small_shape() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![
        (1usize..=12).prop_map(|m| (m, 1)),
        (1usize..=6).prop_map(|m| (m, 2)),
        (1usize..=4).prop_map(|m| (m, 3)),
        (1usize..=3).prop_map(|m| (m, 4)),
    ]
}

pub fn global_matches_enumeration(cases: u32) -> Result<(), String> {
    check(cases, (small_shape(), any::<u64>(), any::<u8>()), |((m, n), seed, g)| {
        let gamma = gamma_of(g);
        let (dims, d, noise) = instance(m, n, 2, gamma, seed);
        let cfg = GlobalConfig {
            mip_gap: 1e-10,
            ..GlobalConfig::default()
        };
        let rec = solve_global_with(&d, &noise, dims, &cfg, None).unwrap().incumbent;
        prop_assert!(rec.certified);
        let oracle = brute_force_map(d.data(), &vec![gamma; dims.q()], n);
        prop_assert!((rec.objective - oracle).abs() <= 1e-8, "global {} enumeration {}", rec.objective, oracle);
        Ok(())
    })
}

pub fn global_not_worse_than_bcd(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=5, 1usize..=3, 2usize..=3, any::<u64>(), any::<u8>()),
        |(m, n, p, seed, g)| {
            let (dims, d, noise) = instance(m, n, p, gamma_of(g), seed);
            let global = solve_global_with(&d, &noise, dims, &GlobalConfig::default(), None)
                .unwrap()
                .incumbent;
            let cfg = BcdConfig {
                rng_seed: seed,
                ..BcdConfig::default()
            };
            let local = bcd_map(&d, &noise, dims, &cfg).unwrap().best().reconstruction.objective;
            prop_assert!(global.objective <= local + 1e-9 * local.max(1.0), "global {} bcd {}", global.objective, local);
            Ok(())
        },
    )
}

// -------------------------------------------------------------- posterior

fn random_rule(n: usize, nodes: usize, seed: u64) -> QuadratureRule {
    let mut r = rng(seed);
    let pts = sample_omega_w_uniform(n, nodes, seed).unwrap();
    let wts = (0..nodes).map(|_| r.random_range(0.01..1.0)).collect();
    QuadratureRule::new(pts, wts).unwrap()
}

pub fn posterior_normalized_and_in_range(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=8, 1usize..=3, 2usize..=3, 1usize..=40, any::<u64>(), 0u8..=5),
        |(m, n, p, nodes, seed, g)| {
            let gamma = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6][g as usize];
            let (dims, d, noise) = instance(m, n, p, gamma, seed);
            let rule = random_rule(n, nodes, seed ^ 4);
            let one = conditional_mean(&Constant, &d, &noise, &rule).unwrap();
            prop_assert!((one[0] - 1.0).abs() <= 1e-12, "{}", one[0]);
            let f = Stacked(vec![&MatrixEntries, &WeightMoment(1)]);
            let out = conditional_mean(&f, &d, &noise, &rule).unwrap();
            let qn = dims.q() * n;
            prop_assert!(out[..qn].iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
            let w_mean = &out[qn..];
            prop_assert!((w_mean.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (j, v) in w_mean.iter().enumerate() {
                let lo = rule.nodes().iter().map(|w| w.values()[j]).fold(f64::INFINITY, f64::min);
                let hi = rule.nodes().iter().map(|w| w.values()[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
            Ok(())
        },
    )
}

pub fn posterior_matches_double_sum(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=4, 1usize..=2, 1usize..=12, any::<u64>(), any::<u8>()),
        |(m, n, nodes, seed, g)| {
            let gamma = gamma_of(g).max(1e-2);
            let (dims, d, noise) = instance(m, n, 2, gamma, seed);
            let rule = random_rule(n, nodes, seed ^ 5);
            let f = Stacked(vec![&MatrixEntries, &WeightMoment(1)]);
            let out = conditional_mean(&f, &d, &noise, &rule).unwrap();
            let (m_ref, w_ref) = brute_force_means(d.data(), &vec![gamma; dims.q()], n, &rule);
            let qn = dims.q() * n;
            for (a, b) in out[..qn].iter().zip(&m_ref).chain(out[qn..].iter().zip(&w_ref)) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300) || (a - b).abs() <= 1e-15, "{} vs {}", a, b);
            }
            Ok(())
        },
    )
}

pub fn posterior_stable_for_tiny_noise(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 0u8..=2), |(seed, g)| {
        let gamma = [1e-4, 1e-5, 1e-6][g as usize];
        let (dims, d, noise) = instance(50, 2, 2, gamma, seed);
        let rule = random_rule(2, 64, seed ^ 6);
        let out = conditional_mean(&Stacked(vec![&Constant, &MatrixEntries]), &d, &noise, &rule).unwrap();
        prop_assert!((out[0] - 1.0).abs() <= 1e-12);
        prop_assert!(out.iter().all(|v| v.is_finite()));
        prop_assert_eq!(out.len(), 1 + dims.q() * 2);
        Ok(())
    })
}

pub fn entropy_is_additive(cases: u32) -> Result<(), String> {
    check(cases, (1usize..=3, 1usize..=3, any::<u64>(), any::<u8>()), |(m, n, seed, g)| {
        let gamma = gamma_of(g).max(1e-2);
        let (_, d, noise) = instance(m, n, 2, gamma, seed);
        let w = random_weights(n, &mut rng(seed ^ 7));
        let total = entropy_of_m_given_w(&w, &d, &noise).unwrap();
        let sites: f64 = site_entropies(&w, &d, &noise).unwrap().iter().sum();
        let joint = brute_force_entropy(w.values(), d.data(), &vec![gamma; m]);
        prop_assert!((total - sites).abs() <= 1e-12);
        prop_assert!((total - joint).abs() <= 1e-9, "factorized {} joint {}", total, joint);
        Ok(())
    })
}

// ------------------------------------------------------------------- eval

fn barcode(dims: ProblemDims, seed: u64) -> (StrainMatrix, Vec<f64>) {
    let mut r = rng(seed);
    let mat = random_matrix(dims, &mut r);
    (mat, random_weights(dims.n(), &mut r).values().to_vec())
}

pub fn recon_error_is_pseudometric(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1usize..=4, 1usize..=3, 2usize..=3, any::<u64>(), any::<u64>(), any::<u64>()),
        |(m, n, p, s1, s2, s3)| {
            let dims = ProblemDims::new(m, n, p).unwrap();
            let (a, b, c) = (barcode(dims, s1), barcode(dims, s2), barcode(dims, s3));
            let wb = |x: &(StrainMatrix, Vec<f64>)| WeightedBarcode::new(&x.0, &x.1).unwrap();
            let (ea, eb, ec) = (wb(&a), wb(&b), wb(&c));
            let dist = |x: &WeightedBarcode, y: &WeightedBarcode| x.distance(y).unwrap().0;
            prop_assert!(dist(&ea, &ea).abs() <= 1e-15);
            prop_assert!((dist(&ea, &eb) - dist(&eb, &ea)).abs() <= 1e-12);
            prop_assert!(dist(&ea, &ec) <= dist(&ea, &eb) + dist(&eb, &ec) + 1e-12);
            prop_assert!(dist(&ea, &eb) >= 0.0 && dist(&ea, &eb) <= 2.0 * m as f64 + 1e-12);

            // Simultaneous column permutation of matrix and weights.
            let mut perm: Vec<usize> = (0..n).collect();
            let mut r = rng(s3);
            for i in (1..n).rev() {
                perm.swap(i, r.random_range(0..=i));
            }
            let wp: Vec<f64> = perm.iter().map(|&j| b.1[j]).collect();
            let bp = WeightedBarcode::new(&b.0.permute_columns(&perm), &wp).unwrap();
            prop_assert!(dist(&bp, &eb).abs() <= 1e-15);
            prop_assert!((dist(&ea, &bp) - dist(&ea, &eb)).abs() <= 1e-12);
            Ok(())
        },
    )
}

// --------------------------------------------------------------------- io

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO,
        0.0..1.0f64,
    ]
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn formats_round_trip(cases: u32) -> Result<(), String> {
    check(
        cases,
        (
            proptest::collection::vec(finite(), 1..20),
            1usize..=4,
            1usize..=3,
            2usize..=3,
            any::<u64>(),
            any::<bool>(),
        ),
        |(values, m, n, p, seed, json)| {
            let format = if json { OutputFormat::Json } else { OutputFormat::Text };
            prop_assert_eq!(bits(&io::parse_vector(&io::write_vector(&values)).unwrap()), bits(&values));
            let cols = 1 + (seed % 3) as usize;
            let rows = values.len() / cols;
            let body = &values[..rows * cols];
            let (r2, c2, back) = io::parse_matrix(&io::write_matrix(rows, cols, body)).unwrap();
            prop_assert_eq!((r2, c2), (rows, cols));
            prop_assert_eq!(bits(&back), bits(body));

            let dims = ProblemDims::new(m, n, p).unwrap();
            let mut r = rng(seed);
            let pick = |r: &mut ChaCha8Rng| values[r.random_range(0..values.len())].abs();
            let rec = Reconstruction {
                matrix: random_matrix(dims, &mut r),
                weights: random_weights(n, &mut r),
                objective: pick(&mut r),
                certified: r.random(),
                gap: r.random::<bool>().then(|| pick(&mut r)),
            };
            let file = ResultFile {
                method: "hybrid".into(),
                reconstruction: rec,
                created: r.random::<bool>().then(|| r.random::<u32>() as u64),
            };
            let back = io::parse_result(&io::write_result(&file, format)).unwrap();
            prop_assert_eq!(back.reconstruction.objective.to_bits(), file.reconstruction.objective.to_bits());
            prop_assert_eq!(bits(back.reconstruction.weights.values()), bits(file.reconstruction.weights.values()));
            prop_assert_eq!(&back, &file);

            let qn = dims.q() * n;
            let stats = PosteriorStats {
                dims,
                m_mean: (0..qn).map(|_| pick(&mut r)).collect(),
                m_std: (0..qn).map(|_| pick(&mut r)).collect(),
                w_mean: (0..n).map(|_| pick(&mut r)).collect(),
                w_std: (0..n).map(|_| pick(&mut r)).collect(),
                node_count: r.random_range(1..100_000),
                rng_seed: r.random(),
            };
            let back = io::parse_posterior(&io::write_posterior(&stats, format, None)).unwrap();
            prop_assert_eq!(bits(&back.m_mean), bits(&stats.m_mean));
            prop_assert_eq!(bits(&back.m_std), bits(&stats.m_std));
            prop_assert_eq!(bits(&back.w_mean), bits(&stats.w_mean));
            prop_assert_eq!(bits(&back.w_std), bits(&stats.w_std));
            prop_assert_eq!((back.dims, back.node_count, back.rng_seed), (stats.dims, stats.node_count, stats.rng_seed));

            let cells: Vec<EntropyCell> = values
                .chunks(4)
                .filter(|c| c.len() == 4)
                .map(|c| EntropyCell { w: [c[0], c[1], c[2]], entropy: c[3] })
                .collect();
            prop_assert_eq!(io::parse_entropy_table(&io::write_entropy_table(&cells)).unwrap(), cells);
            let errs: Vec<ErrorCell> = values
                .chunks(5)
                .filter(|c| c.len() == 5)
                .map(|c| ErrorCell { gamma: c[0], w: [c[1], c[2], c[3]], error: c[4] })
                .collect();
            prop_assert_eq!(io::parse_error_map(&io::write_error_map(&errs)).unwrap(), errs);

            let rows: Vec<BenchmarkRow> = values
                .iter()
                .enumerate()
                .map(|(s, v)| BenchmarkRow {
                    cell: DimsCell { m, n, p },
                    gamma: *v,
                    sample: s,
                    backend: [BackendKind::Bcd, BackendKind::Global, BackendKind::Hybrid][s % 3],
                    error: (s % 4 != 0).then_some(*v),
                    objective: (s % 4 != 0).then_some(v * 2.0),
                    certified: s % 2 == 0,
                    failure: (s % 4 == 0).then(|| "capacity exceeded: p^n".to_string()),
                    wall_time: 0.0,
                })
                .collect();
            let result = BenchmarkResult { rows: rows.clone(), summaries: Vec::new() };
            prop_assert_eq!(io::parse_benchmark_rows(&io::write_benchmark_rows(&result)).unwrap(), rows);
            Ok(())
        },
    )
}

pub fn ingestion_preserves_order(cases: u32) -> Result<(), String> {
    check(
        cases,
        (proptest::collection::vec((0u64..60, proptest::collection::vec(0u64..60, 2)), 1..30), 0u64..50, 1usize..=2),
        |(raw, min_depth, alts)| {
            let records: Vec<SiteRecord> = raw
                .iter()
                .enumerate()
                .map(|(i, (r, a))| SiteRecord {
                    site_id: format!("s{i}"),
                    ref_count: *r,
                    alt_counts: a[..alts].to_vec(),
                })
                .collect();
            let expected: Vec<usize> = (0..records.len())
                .filter(|&i| records[i].depth() > 0 && records[i].depth() >= min_depth)
                .collect();
            match io::ingest_read_counts(&records, min_depth) {
                Ok(out) => {
                    prop_assert_eq!(&out.kept, &expected);
                    prop_assert_eq!(out.kept.len() + out.dropped.len(), records.len());
                    for (pos, &i) in out.kept.iter().enumerate() {
                        let depth = records[i].depth() as f64;
                        for c in 0..alts {
                            prop_assert_eq!(out.measurement.data()[pos * alts + c], records[i].alt_counts[c] as f64 / depth);
                        }
                    }
                }
                Err(_) => prop_assert!(expected.is_empty()),
            }
            Ok(())
        },
    )
}

/// Every invariant suite, in a fixed order.
pub fn all() -> Vec<(&'static str, fn(u32) -> Result<(), String>)> {
    vec![
        ("forward is bilinear", forward_is_bilinear),
        ("exact data has zero objective", exact_data_has_zero_objective),
        ("block candidates are canonical", block_candidates_are_canonical),
        ("qp descends and stays feasible", qp_descends_and_stays_feasible),
        ("two-strain weights beat a grid scan", two_strain_weights_beat_grid),
        ("bcd trials descend", bcd_trials_descend),
        ("site update matches brute force", site_update_matches_brute_force),
        ("bcd is deterministic", bcd_is_deterministic),
        ("global discrepancy is monotone in n", global_discrepancy_is_monotone),
        ("bound sandwich and monotone trace", bound_sandwich_and_monotone_trace),
        ("mccormick exact on binary points", mccormick_exact_on_binary_points),
        ("global matches enumeration", global_matches_enumeration),
        ("global not worse than bcd", global_not_worse_than_bcd),
        ("posterior normalized and in range", posterior_normalized_and_in_range),
        ("posterior matches double sum", posterior_matches_double_sum),
        ("posterior stable for tiny noise", posterior_stable_for_tiny_noise),
        ("entropy is additive", entropy_is_additive),
        ("recon error is a pseudometric", recon_error_is_pseudometric),
        ("formats round trip", formats_round_trip),
        ("ingestion preserves order", ingestion_preserves_order),
    ]
}
