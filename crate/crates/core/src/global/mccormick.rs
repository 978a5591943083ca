//! McCormick reformulation of the MAP problem.
//!
//! With `Z_ij = M_ij w_j` the objective `sum_i (sum_j Z_ij - d_i)^2 / gamma_i^2`
//! is convex in `Z` alone, and the bilinear equation is replaced by the four
//! linear inequalities `Z >= 0`, `Z <= M`, `Z <= w_j`, `Z >= M + w_j - 1`.
//! For binary `M` these force `Z_ij = M_ij w_j`, so the reformulation is exact.

use crate::error::{shape_err, Result};
use crate::model::{Measurement, NoiseModel, ProblemDims};

/// One linear row `sum coeff * var <= rhs` (or `= rhs`).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRow {
    pub terms: Vec<(Var, f64)>,
    pub rhs: f64,
}

/// Variables of the reformulated problem; `M` and `Z` are indexed row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    W(usize),
    M(usize, usize),
    Z(usize, usize),
}

/// Constraint system and objective data of the MIQP.
#[derive(Clone, Debug)]
pub struct McCormickModel {
    dims: ProblemDims,
    data: Vec<f64>,
    inv_var: Vec<f64>,
    pub mccormick: Vec<LinearRow>,
    pub block_sums: Vec<LinearRow>,
    /// Ordering chain `w_{j+1} - w_j <= 0` and `-w_n <= 0`.
    pub ordering: Vec<LinearRow>,
    /// `sum_j w_j = 1`.
    pub sum_to_one: LinearRow,
}

/// Builds the McCormick model for data `d`.
pub fn build_mccormick(d: &Measurement, noise: &NoiseModel, dims: ProblemDims) -> Result<McCormickModel> {
    let (q, n) = (dims.q(), dims.n());
    if d.data().len() != q || noise.len() != q {
        return Err(shape_err(format!(
            "dims imply q = {q}, data has {} and noise {} entries",
            d.data().len(),
            noise.len()
        )));
    }
    let mut mccormick = Vec::with_capacity(4 * q * n);
    for i in 0..q {
        for j in 0..n {
            let z = Var::Z(i, j);
            let m = Var::M(i, j);
            let w = Var::W(j);
            mccormick.push(LinearRow { terms: vec![(z, -1.0)], rhs: 0.0 });
            mccormick.push(LinearRow { terms: vec![(z, 1.0), (m, -1.0)], rhs: 0.0 });
            mccormick.push(LinearRow { terms: vec![(z, 1.0), (w, -1.0)], rhs: 0.0 });
            mccormick.push(LinearRow {
                terms: vec![(z, -1.0), (m, 1.0), (w, 1.0)],
                rhs: 1.0,
            });
        }
    }
    // A single-row block (p = 2) needs no column-sum row: M_ij <= 1 already.
    let mut block_sums = Vec::new();
    if dims.block_rows() > 1 {
        for k in 0..dims.m() {
            for j in 0..n {
                block_sums.push(LinearRow {
                    terms: dims.block_range(k).map(|i| (Var::M(i, j), 1.0)).collect(),
                    rhs: 1.0,
                });
            }
        }
    }
    let mut ordering: Vec<LinearRow> = (0..n - 1)
        .map(|j| LinearRow {
            terms: vec![(Var::W(j + 1), 1.0), (Var::W(j), -1.0)],
            rhs: 0.0,
        })
        .collect();
    ordering.push(LinearRow {
        terms: vec![(Var::W(n - 1), -1.0)],
        rhs: 0.0,
    });
    Ok(McCormickModel {
        dims,
        data: d.data().to_vec(),
        inv_var: noise.inverse_variances().to_vec(),
        mccormick,
        block_sums,
        ordering,
        sum_to_one: LinearRow {
            terms: (0..n).map(|j| (Var::W(j), 1.0)).collect(),
            rhs: 1.0,
        },
    })
}

impl McCormickModel {
    pub fn dims(&self) -> ProblemDims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn inverse_variances(&self) -> &[f64] {
        &self.inv_var
    }

    pub fn inequality_count(&self) -> usize {
        self.mccormick.len() + self.block_sums.len() + self.ordering.len()
    }

    /// Objective in the lifted variables, `Z` row-major `q x n`.
    pub fn objective_z(&self, z: &[f64]) -> f64 {
        let n = self.dims.n();
        z.chunks_exact(n)
            .zip(&self.data)
            .zip(&self.inv_var)
            .map(|((row, d), iv)| {
                let r = row.iter().sum::<f64>() - d;
                r * r * iv
            })
            .sum()
    }

    /// Largest constraint violation at `(w, M, Z)`; zero when feasible.
    pub fn violation(&self, w: &[f64], m: &[f64], z: &[f64]) -> f64 {
        let n = self.dims.n();
        let value = |v: Var| match v {
            Var::W(j) => w[j],
            Var::M(i, j) => m[i * n + j],
            Var::Z(i, j) => z[i * n + j],
        };
        let lhs = |row: &LinearRow| row.terms.iter().map(|&(v, c)| c * value(v)).sum::<f64>();
        let ineq = self
            .mccormick
            .iter()
            .chain(&self.block_sums)
            .chain(&self.ordering)
            .map(|r| lhs(r) - r.rhs)
            .fold(0.0, f64::max);
        let bounds = m
            .iter()
            .map(|&x| (-x).max(x - 1.0))
            .fold(0.0, f64::max);
        ineq.max((lhs(&self.sum_to_one) - 1.0).abs()).max(bounds)
    }
}

/// Interval that the McCormick rows leave for `Z_ij` given `M_ij` and `w_j`.
pub fn implied_z_bounds(m: f64, w: f64) -> (f64, f64) {
    ((m + w - 1.0).max(0.0), m.min(w))
}
