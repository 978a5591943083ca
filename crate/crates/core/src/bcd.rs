//! Multi-start block coordinate descent for MAP estimation.
//!
//! Each trial draws a start `w0` uniformly from the ordered simplex and
//! alternates two exact subproblem solves: the strain matrix given `w`
//! (independent per site, by enumeration of the `p^n` feasible blocks) and the
//! frequencies given `M` (a convex QP). The objective never increases along a
//! trial, so a trial stops once `M` repeats and `w` moves less than `tol_w`,
//! or after `max_iters` iterations.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::MapBackend;
use crate::error::{shape_err, Error, Result};
use crate::model::{
    enumerate_block_candidates, objective_phi, BlockCandidates, FrequencyVector, Measurement,
    NoiseModel, ProblemDims, Reconstruction, StrainMatrix,
};
use crate::parallel::derive_seed;
use crate::posterior::sample_omega_w_uniform;
use crate::qp::solve_w_given_m;

/// Two candidate blocks whose residuals differ by at most this much are tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcdConfig {
    pub n_trials: usize,
    pub tol_w: f64,
    pub max_iters: usize,
    pub rng_seed: u64,
    pub keep_all_modes: bool,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            n_trials: 20,
            tol_w: 1e-3,
            max_iters: 10,
            rng_seed: 0,
            keep_all_modes: false,
        }
    }
}

impl BcdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 || self.max_iters == 0 || !(self.tol_w > 0.0) {
            return Err(Error::InvalidArgument(
                "n_trials and max_iters must be positive and tol_w > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Objective values around one iteration: `phi(M^{i-1}, w^{i-1})`,
/// `phi(M^i, w^{i-1})`, `phi(M^i, w^i)`. The first entry is `NaN` on the
/// first iteration, where `M^0` is a placeholder.
pub type DescentStep = [f64; 3];

/// Terminal state of one trial.
#[derive(Clone, Debug)]
pub struct Mode {
    pub reconstruction: Reconstruction,
    pub trial: usize,
    pub iterations: usize,
    /// False when the trial hit `max_iters` before the stopping rule fired.
    pub converged: bool,
    pub descent: Vec<DescentStep>,
}

/// Local modes found by the trials, deduplicated by `(M, w rounded to 1e-6)`.
#[derive(Clone, Debug)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
    pub best_index: usize,
    /// Every trial in trial order, kept when `keep_all_modes` is set.
    pub trials: Option<Vec<Mode>>,
}

impl ModeSet {
    pub fn best(&self) -> &Mode {
        &self.modes[self.best_index]
    }
}

/// Result of the per-site matrix update.
#[derive(Clone, Debug)]
pub struct MatrixUpdate {
    pub matrix: StrainMatrix,
    /// `ties[k]` is set when two or more blocks minimize the residual at site `k`.
    pub ties: Vec<bool>,
}

/// Per-site enumeration of block candidates for a fixed `w`.
pub(crate) struct SiteSolver {
    dims: ProblemDims,
    candidates: BlockCandidates,
    values: Vec<f64>,
}

impl SiteSolver {
    pub(crate) fn new(dims: ProblemDims) -> Result<Self> {
        Ok(Self {
            dims,
            candidates: enumerate_block_candidates(dims.n(), dims.p())?,
            values: Vec::new(),
        })
    }

    pub(crate) fn candidates(&self) -> &BlockCandidates {
        &self.candidates
    }

    /// Best candidate per site, restricted to `allowed(site, candidate)`.
    ///
    /// Ties within [`TIE_TOL`] go to the smallest candidate index.
    pub(crate) fn best_blocks<F>(
        &mut self,
        w: &[f64],
        d: &Measurement,
        noise: &NoiseModel,
        allowed: F,
    ) -> (Vec<usize>, Vec<bool>)
    where
        F: Fn(usize, usize) -> bool,
    {
        let r = self.dims.block_rows();
        self.candidates.block_values(w, &mut self.values);
        let mut choice = Vec::with_capacity(self.dims.m());
        let mut ties = Vec::with_capacity(self.dims.m());
        for k in 0..self.dims.m() {
            let dk = d.block(k);
            let iv = noise.block_inverse_variances(&self.dims, k);
            let mut best = f64::INFINITY;
            let mut best_idx = usize::MAX;
            let mut tie = false;
            for (j, vals) in self.values.chunks_exact(r).enumerate() {
                if !allowed(k, j) {
                    continue;
                }
                let mut res = 0.0;
                for c in 0..r {
                    let e = vals[c] - dk[c];
                    res += e * e * iv[c];
                }
                if res < best - TIE_TOL {
                    best = res;
                    best_idx = j;
                    tie = false;
                } else if (res - best).abs() <= TIE_TOL {
                    tie = true;
                }
            }
            choice.push(best_idx);
            ties.push(tie);
        }
        (choice, ties)
    }

    pub(crate) fn update(&mut self, w: &[f64], d: &Measurement, noise: &NoiseModel) -> MatrixUpdate {
        let (choice, ties) = self.best_blocks(w, d, noise, |_, _| true);
        MatrixUpdate {
            matrix: StrainMatrix::from_candidates(self.dims, &self.candidates, &choice),
            ties,
        }
    }
}

fn check_shapes(dims: &ProblemDims, d: &Measurement, noise: &NoiseModel) -> Result<()> {
    if d.data().len() != dims.q() || noise.len() != dims.q() {
        return Err(shape_err(format!(
            "dims imply q = {}, data has {} and noise {} entries",
            dims.q(),
            d.data().len(),
            noise.len()
        )));
    }
    Ok(())
}

/// Exact minimization over the strain matrix for fixed frequencies, one site at a time.
pub fn solve_m_given_w(w: &FrequencyVector, d: &Measurement, noise: &NoiseModel) -> Result<MatrixUpdate> {
    let dims = d.dims().with_n(w.len())?;
    check_shapes(&dims, d, noise)?;
    Ok(SiteSolver::new(dims)?.update(w.values(), d, noise))
}

/// Runs one descent trial from `w0`.
pub(crate) fn run_trial(
    solver: &mut SiteSolver,
    w0: FrequencyVector,
    d: &Measurement,
    noise: &NoiseModel,
    config: &BcdConfig,
    trial: usize,
) -> Result<Mode> {
    let mut w = w0;
    let mut prev: Option<(StrainMatrix, f64)> = None;
    let mut descent = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut current: Option<(StrainMatrix, FrequencyVector, f64)> = None;
    for _ in 0..config.max_iters {
        iterations += 1;
        let m_new = solver.update(w.values(), d, noise).matrix;
        let phi_mid = objective_phi(&m_new, &w, d, noise)?;
        let upd = solve_w_given_m(&m_new, d, noise, &w)?;
        let step: f64 = upd
            .weights
            .values()
            .iter()
            .zip(w.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        descent.push([prev.as_ref().map_or(f64::NAN, |p| p.1), phi_mid, upd.objective]);
        let same_m = prev.as_ref().is_some_and(|(pm, _)| *pm == upd.matrix);
        w = upd.weights.clone();
        prev = Some((upd.matrix.clone(), upd.objective));
        current = Some((upd.matrix, upd.weights, upd.objective));
        if same_m && step < config.tol_w {
            converged = true;
            break;
        }
    }
    let (matrix, weights, objective) = current.expect("max_iters >= 1");
    Ok(Mode {
        reconstruction: Reconstruction {
            matrix,
            weights,
            objective,
            certified: false,
            gap: None,
        },
        trial,
        iterations,
        converged,
        descent,
    })
}

fn mode_key(mode: &Mode) -> (Vec<u8>, Vec<i64>) {
    let r = &mode.reconstruction;
    (
        r.matrix.entries().to_vec(),
        r.weights.values().iter().map(|v| (v * 1e6).round() as i64).collect(),
    )
}

/// Orders modes by objective, then matrix entries, then trial index.
fn mode_order(a: &Mode, b: &Mode) -> std::cmp::Ordering {
    a.reconstruction
        .objective
        .total_cmp(&b.reconstruction.objective)
        .then_with(|| a.reconstruction.matrix.entries().cmp(b.reconstruction.matrix.entries()))
        .then_with(|| a.trial.cmp(&b.trial))
}

/// Multi-start block coordinate descent.
///
/// Trials run in parallel with seeds derived from `config.rng_seed` and the
/// trial index, so the result does not depend on the worker count.
pub fn bcd_map(
    d: &Measurement,
    noise: &NoiseModel,
    dims: ProblemDims,
    config: &BcdConfig,
) -> Result<ModeSet> {
    config.validate()?;
    check_shapes(&dims, d, noise)?;
    let trials: Vec<Mode> = (0..config.n_trials)
        .into_par_iter()
        .map_init(
            || SiteSolver::new(dims),
            |solver, t| {
                let solver = solver.as_mut().map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let seed = derive_seed(config.rng_seed, &[t as u64]);
                let w0 = sample_omega_w_uniform(dims.n(), 1, seed)?.remove(0);
                run_trial(solver, w0, d, noise, config, t)
            },
        )
        .collect::<Result<_>>()?;

    let mut groups: HashMap<(Vec<u8>, Vec<i64>), usize> = HashMap::new();
    let mut modes: Vec<Mode> = Vec::new();
    for mode in &trials {
        match groups.get(&mode_key(mode)) {
            Some(&g) => {
                if mode_order(mode, &modes[g]).is_lt() {
                    modes[g] = mode.clone();
                }
            }
            None => {
                groups.insert(mode_key(mode), modes.len());
                modes.push(mode.clone());
            }
        }
    }
    let best_index = (0..modes.len())
        .min_by(|&a, &b| mode_order(&modes[a], &modes[b]))
        .expect("at least one trial");
    Ok(ModeSet {
        modes,
        best_index,
        trials: config.keep_all_modes.then_some(trials),
    })
}

/// Outcome of the discrepancy-principle search for the number of strains.
#[derive(Clone, Debug)]
pub struct MoiEstimate {
    pub n: usize,
    /// `d(n) = |M(n) w(n) - d|_2^2` for `n = 1, 2, ...` as far as evaluated.
    pub discrepancies: Vec<f64>,
    /// False when no `n <= n_max` met the bound; `n` is then `n_max`.
    pub reached: bool,
    pub estimates: Vec<Reconstruction>,
}

/// Smallest `n` whose MAP residual falls below the expected noise energy `sum_i gamma_i^2`.
pub fn estimate_moi(
    d: &Measurement,
    noise: &NoiseModel,
    m: usize,
    p: usize,
    n_max: usize,
    backend: &MapBackend,
) -> Result<MoiEstimate> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let threshold = noise.total_variance();
    let mut discrepancies = Vec::new();
    let mut estimates = Vec::new();
    for n in 1..=n_max {
        let dims = ProblemDims::new(m, n, p)?;
        let dn = d.with_n(n)?;
        let rec = backend.solve(&dn, noise, dims)?;
        let pred = rec.matrix.apply(rec.weights.values())?;
        let disc: f64 = pred.iter().zip(d.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        discrepancies.push(disc);
        estimates.push(rec);
        if disc <= threshold {
            return Ok(MoiEstimate {
                n,
                discrepancies,
                reached: true,
                estimates,
            });
        }
    }
    Ok(MoiEstimate {
        n: n_max,
        discrepancies,
        reached: false,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(m: usize, n: usize, data: Vec<f64>) -> Measurement {
        Measurement::new(ProblemDims::new(m, n, 2).unwrap(), data).unwrap()
    }

    #[test]
    fn site_update_unique() {
        let w = FrequencyVector::new(vec![0.6, 0.4]).unwrap();
        let d = meas(1, 2, vec![0.4]);
        let noise = NoiseModel::uniform(1, 0.1).unwrap();
        let up = solve_m_given_w(&w, &d, &noise).unwrap();
        assert_eq!(up.matrix.row(0), &[0, 1]);
        assert_eq!(up.ties, vec![false]);
    }

    #[test]
    fn site_update_equal_weights_tie() {
        let w = FrequencyVector::new(vec![0.5, 0.5]).unwrap();
        let d = meas(1, 2, vec![0.5]);
        let noise = NoiseModel::uniform(1, 0.1).unwrap();
        let up = solve_m_given_w(&w, &d, &noise).unwrap();
        assert_eq!(up.matrix.row(0), &[1, 0]);
        assert_eq!(up.ties, vec![true]);
    }

    #[test]
    fn site_update_three_strains_tie() {
        let w = FrequencyVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        let d = meas(1, 3, vec![0.1]);
        let noise = NoiseModel::uniform(1, 1.0).unwrap();
        let up = solve_m_given_w(&w, &d, &noise).unwrap();
        // residual 0.1 for both (0,0,0) and (0,0,1); index 0 wins
        assert_eq!(up.matrix.row(0), &[0, 0, 0]);
        assert_eq!(up.ties, vec![true]);
    }

    #[test]
    fn single_strain_rounds_each_row() {
        let dims = ProblemDims::new(4, 1, 2).unwrap();
        let d = Measurement::new(dims, vec![0.2, 0.7, 1.1, -0.1]).unwrap();
        let noise = NoiseModel::uniform(4, 0.1).unwrap();
        let modes = bcd_map(&d, &noise, dims, &BcdConfig::default()).unwrap();
        let best = &modes.best().reconstruction;
        assert_eq!(best.matrix.column(0), vec![0, 1, 1, 0]);
        assert_eq!(best.weights.values(), &[1.0]);
        let expect = (0.04 + 0.09 + 0.01 + 0.01) / 0.01;
        assert!((best.objective - expect).abs() < 1e-9);
    }

    #[test]
    fn unique_example_recovered() {
        let dims = ProblemDims::new(3, 2, 2).unwrap();
        let d = Measurement::new(dims, vec![0.4, 0.6, 1.0]).unwrap();
        let noise = NoiseModel::uniform(3, 1e-2).unwrap();
        let modes = bcd_map(&d, &noise, dims, &BcdConfig::default()).unwrap();
        let best = &modes.best().reconstruction;
        assert_eq!(best.matrix.entries(), &[0, 1, 1, 0, 1, 1]);
        assert!((best.weights.values()[0] - 0.6).abs() < 1e-9);
        assert!(best.objective < 1e-12);
    }

    #[test]
    fn determinism_for_fixed_seed() {
        let dims = ProblemDims::new(4, 3, 2).unwrap();
        let d = Measurement::new(dims, vec![0.1, 0.3, 0.5, 0.6]).unwrap();
        let noise = NoiseModel::uniform(4, 1e-2).unwrap();
        let cfg = BcdConfig {
            rng_seed: 11,
            keep_all_modes: true,
            ..BcdConfig::default()
        };
        let a = bcd_map(&d, &noise, dims, &cfg).unwrap();
        let b = bcd_map(&d, &noise, dims, &cfg).unwrap();
        let key = |s: &ModeSet| {
            s.trials
                .as_ref()
                .unwrap()
                .iter()
                .map(|m| {
                    (
                        m.reconstruction.matrix.clone(),
                        m.reconstruction.weights.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(key(&a), key(&b));
        assert_eq!(a.best_index, b.best_index);
    }

    #[test]
    fn invalid_config_rejected() {
        let dims = ProblemDims::new(1, 1, 2).unwrap();
        let d = Measurement::new(dims, vec![0.5]).unwrap();
        let noise = NoiseModel::uniform(1, 0.1).unwrap();
        let cfg = BcdConfig {
            n_trials: 0,
            ..BcdConfig::default()
        };
        assert!(bcd_map(&d, &noise, dims, &cfg).is_err());
    }
}
