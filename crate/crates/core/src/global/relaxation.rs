//! Continuous relaxation of a branch-and-bound node.
//!
//! Free entries of `M` are relaxed to `[0, 1]`. Rather than solving over
//! `(w, M, Z)` directly, `M` is projected out: per row only the aggregate
//! `t_i = sum_{free j} Z_ij` enters the objective, and the set of attainable
//! `(w, t)` is described exactly by
//!
//! * `0 <= t_i <= sum_{free j} w_j` for every row, and
//! * for blocks with more than one row, the cut conditions of the bipartite
//!   flow from strain columns (capacity 1) to rows (edge capacity `w_j`):
//!   `sum_{r in T} t_r <= |S| + sum_{j not in S} c_j w_j` for row sets `T`
//!   and column sets `S`, where `c_j` counts the rows of `T` in which
//!   column `j` is free.
//!
//! The optimum of this small QP equals the McCormick relaxation bound; a
//! matching `(M, Z)` is recovered afterwards for branching and rounding.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::global::mccormick::McCormickModel;
use crate::model::ProblemDims;
use crate::qp::{solve_active_set, ActiveSetOptions, ConstraintRows, QuadraticProgram, DEFAULT_TOL};

/// Partial assignment of `M`, row-major; `None` marks a free entry.
pub type Fixings = [Option<u8>];

/// Optimum of a node relaxation.
#[derive(Clone, Debug)]
pub struct RelaxedPoint {
    pub lower_bound: f64,
    pub w: Vec<f64>,
    /// Fractional `M`, row-major `q x n`; fixed entries carry their value.
    pub m: Vec<f64>,
    /// `Z = M w` in the lifted space, row-major.
    pub z: Vec<f64>,
    /// Aggregated free mass per row (zero for rows without free entries).
    pub t: Vec<f64>,
    pub qp_iterations: usize,
}

impl RelaxedPoint {
    /// Free entry closest to 1/2 among those not within `tol` of 0 or 1.
    pub fn most_fractional(&self, fixed: &Fixings, tol: f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (idx, (&v, f)) in self.m.iter().zip(fixed).enumerate() {
            if f.is_some() || v <= tol || v >= 1.0 - tol {
                continue;
            }
            let score = (v - 0.5).abs();
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, idx));
            }
        }
        best.map(|(_, idx)| idx)
    }
}

pub(crate) struct Layout {
    /// Free columns per row, after removing columns pinned by a fixed one elsewhere in the block.
    free: Vec<Vec<usize>>,
    ones: Vec<Vec<usize>>,
    t_index: Vec<Option<usize>>,
    dim: usize,
}

pub(crate) fn layout(dims: &ProblemDims, fixed: &Fixings) -> Result<Layout> {
    let (n, r) = (dims.n(), dims.block_rows());
    let q = dims.q();
    let mut free = vec![Vec::new(); q];
    let mut ones = vec![Vec::new(); q];
    for k in 0..dims.m() {
        for j in 0..n {
            let fixed_ones = dims
                .block_range(k)
                .filter(|&i| fixed[i * n + j] == Some(1))
                .count();
            if fixed_ones > 1 {
                return Err(Error::Infeasible(format!(
                    "two fixed ones in block {k}, column {j}"
                )));
            }
            for i in dims.block_range(k) {
                match fixed[i * n + j] {
                    Some(1) => ones[i].push(j),
                    None if fixed_ones == 0 || r == 1 => free[i].push(j),
                    _ => {}
                }
            }
        }
    }
    let mut t_index = vec![None; q];
    let mut dim = n;
    for i in 0..q {
        if !free[i].is_empty() {
            t_index[i] = Some(dim);
            dim += 1;
        }
    }
    Ok(Layout {
        free,
        ones,
        t_index,
        dim,
    })
}

fn build_program(model: &McCormickModel, lay: &Layout) -> QuadraticProgram {
    let dims = model.dims();
    let n = dims.n();
    let dim = lay.dim;
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    let mut lin = DVector::<f64>::zeros(dim);
    let mut idx = Vec::with_capacity(n + 1);
    for i in 0..dims.q() {
        idx.clear();
        idx.extend_from_slice(&lay.ones[i]);
        if let Some(ti) = lay.t_index[i] {
            idx.push(ti);
        }
        let iv = model.inverse_variances()[i];
        let di = model.data()[i];
        for &a in &idx {
            lin[a] -= 2.0 * iv * di;
            for &b in &idx {
                hess[(a, b)] += 2.0 * iv;
            }
        }
    }

    let mut eq = ConstraintRows::new(dim);
    let all_w: Vec<(usize, f64)> = (0..n).map(|j| (j, 1.0)).collect();
    eq.push_sparse(&all_w, 1.0);

    let mut ineq = ConstraintRows::new(dim);
    for j in 0..n - 1 {
        ineq.push_sparse(&[(j + 1, 1.0), (j, -1.0)], 0.0);
    }
    ineq.push_sparse(&[(n - 1, -1.0)], 0.0);
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..dims.q() {
        let Some(ti) = lay.t_index[i] else { continue };
        ineq.push_sparse(&[(ti, -1.0)], 0.0);
        terms.clear();
        terms.push((ti, 1.0));
        terms.extend(lay.free[i].iter().map(|&j| (j, -1.0)));
        ineq.push_sparse(&terms, 0.0);
    }
    if dims.block_rows() > 1 {
        push_cut_rows(&dims, lay, &mut ineq);
    }
    QuadraticProgram {
        hessian: hess,
        linear: lin,
        equalities: eq,
        inequalities: ineq,
    }
}

/// Cut conditions of the per-block flow problem.
///
/// Column `j` (0-based) has `w_j <= 1/(j+1)` under the ordering, so
/// `min(1, c_j w_j) = c_j w_j` whenever `c_j <= j + 1`; only the remaining
/// columns can usefully enter `S`. Single-row sets `T` and `S = {}` are
/// implied by the per-row bounds.
fn push_cut_rows(dims: &ProblemDims, lay: &Layout, ineq: &mut ConstraintRows) {
    let n = dims.n();
    for k in 0..dims.m() {
        let rows: Vec<usize> = dims
            .block_range(k)
            .filter(|&i| lay.t_index[i].is_some())
            .collect();
        if rows.len() < 2 {
            continue;
        }
        for mask in 1usize..(1 << rows.len()) {
            if mask.count_ones() < 2 {
                continue;
            }
            let set: Vec<usize> = (0..rows.len()).filter(|b| mask >> b & 1 == 1).map(|b| rows[b]).collect();
            let mut c = vec![0usize; n];
            for &i in &set {
                for &j in &lay.free[i] {
                    c[j] += 1;
                }
            }
            let wide: Vec<usize> = (0..n).filter(|&j| c[j] > j + 1).collect();
            for smask in 1usize..(1 << wide.len()) {
                let mut terms: Vec<(usize, f64)> =
                    set.iter().map(|&i| (lay.t_index[i].unwrap(), 1.0)).collect();
                let mut in_s = vec![false; n];
                for (b, &j) in wide.iter().enumerate() {
                    if smask >> b & 1 == 1 {
                        in_s[j] = true;
                    }
                }
                for j in 0..n {
                    if !in_s[j] && c[j] > 0 {
                        terms.push((j, -(c[j] as f64)));
                    }
                }
                ineq.push_sparse(&terms, smask.count_ones() as f64);
            }
        }
    }
}

/// Parent information used to warm start a child relaxation.
pub(crate) struct WarmStart<'a> {
    pub w: &'a [f64],
    pub t: &'a [f64],
    /// Block whose aggregates are reset, for blocks with several rows.
    pub reset_block: Option<usize>,
}

fn start_point(dims: &ProblemDims, lay: &Layout, qp: &QuadraticProgram, warm: Option<&WarmStart>) -> DVector<f64> {
    let n = dims.n();
    if let Some(ws) = warm {
        let mut x = DVector::<f64>::zeros(lay.dim);
        x.rows_mut(0, n).copy_from_slice(ws.w);
        for i in 0..dims.q() {
            let Some(ti) = lay.t_index[i] else { continue };
            let in_reset = ws.reset_block.is_some_and(|k| dims.block_range(k).contains(&i));
            if !in_reset {
                let cap: f64 = lay.free[i].iter().map(|&j| ws.w[j]).sum();
                x[ti] = ws.t[i].clamp(0.0, cap);
            }
        }
        if qp.infeasibility(x.as_slice()) <= 1e-10 {
            return x;
        }
    }
    let mut x = DVector::<f64>::zeros(lay.dim);
    x.rows_mut(0, n).fill(1.0 / n as f64);
    x
}

/// Lower bound and relaxed point for the node defined by `fixed`.
///
/// Returns [`Error::Infeasible`] when a block column has two fixed ones.
pub fn solve_relaxation(model: &McCormickModel, fixed: &Fixings) -> Result<RelaxedPoint> {
    solve_relaxation_from(model, fixed, None)
}

pub(crate) fn solve_relaxation_from(
    model: &McCormickModel,
    fixed: &Fixings,
    warm: Option<&WarmStart>,
) -> Result<RelaxedPoint> {
    let dims = model.dims();
    if fixed.len() != dims.q() * dims.n() {
        return Err(crate::error::shape_err("fixing has the wrong length"));
    }
    let lay = layout(&dims, fixed)?;
    let qp = build_program(model, &lay);
    let x0 = start_point(&dims, &lay, &qp, warm);
    let opts = ActiveSetOptions {
        max_iters: 50 * lay.dim + 100,
        tol: DEFAULT_TOL,
    };
    let sol = solve_active_set(&qp, &x0, &opts)?;
    Ok(recover(model, fixed, &lay, sol.x.as_slice(), sol.report.iterations))
}

fn recover(model: &McCormickModel, fixed: &Fixings, lay: &Layout, x: &[f64], iterations: usize) -> RelaxedPoint {
    let dims = model.dims();
    let (n, q) = (dims.n(), dims.q());
    let mut w: Vec<f64> = x[..n].iter().map(|v| v.max(0.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let mut t = vec![0.0; q];
    for i in 0..q {
        if let Some(ti) = lay.t_index[i] {
            let cap: f64 = lay.free[i].iter().map(|&j| w[j]).sum();
            t[i] = x[ti].clamp(0.0, cap);
        }
    }

    let mut z = vec![0.0; q * n];
    let mut m = vec![0.0; q * n];
    for i in 0..q {
        for &j in &lay.ones[i] {
            m[i * n + j] = 1.0;
            z[i * n + j] = w[j];
        }
    }
    if dims.block_rows() == 1 {
        for i in 0..q {
            let cap: f64 = lay.free[i].iter().map(|&j| w[j]).sum();
            let frac = if cap > 0.0 { (t[i] / cap).clamp(0.0, 1.0) } else { 0.0 };
            for &j in &lay.free[i] {
                m[i * n + j] = frac;
                z[i * n + j] = frac * w[j];
            }
        }
    } else {
        for k in 0..dims.m() {
            split_block(&dims, lay, k, &w, &t, &mut z);
            for j in 0..n {
                let rows: Vec<usize> = dims.block_range(k).filter(|&i| lay.free[i].contains(&j)).collect();
                if rows.is_empty() {
                    continue;
                }
                let zs: f64 = rows.iter().map(|&i| z[i * n + j]).sum();
                let ms: f64 = if w[j] > 1e-15 { zs / w[j] } else { 0.0 };
                // Z/w is the natural fractional value; pull toward Z when the
                // block column would exceed 1.
                let theta = if ms > 1.0 && ms > zs { ((1.0 - zs) / (ms - zs)).clamp(0.0, 1.0) } else { 1.0 };
                for &i in &rows {
                    let zi = z[i * n + j];
                    let mi = if w[j] > 1e-15 { zi / w[j] } else { 0.0 };
                    m[i * n + j] = (zi + theta * (mi - zi)).clamp(0.0, 1.0);
                }
            }
        }
    }
    let _ = fixed;
    let lower_bound = residual_bound(model, lay, &w, &t);
    RelaxedPoint {
        lower_bound,
        w,
        m,
        z,
        t,
        qp_iterations: iterations,
    }
}

fn residual_bound(model: &McCormickModel, lay: &Layout, w: &[f64], t: &[f64]) -> f64 {
    (0..model.dims().q())
        .map(|i| {
            let a: f64 = lay.ones[i].iter().map(|&j| w[j]).sum();
            let r = a + t[i] - model.data()[i];
            r * r * model.inverse_variances()[i]
        })
        .sum()
}

/// Distributes the row aggregates of block `k` over free entries with a max flow.
fn split_block(dims: &ProblemDims, lay: &Layout, k: usize, w: &[f64], t: &[f64], z: &mut [f64]) {
    let n = dims.n();
    let rows: Vec<usize> = dims.block_range(k).collect();
    // nodes: 0 source, 1..=n columns, then rows, then sink
    let nr = rows.len();
    let size = n + nr + 2;
    let sink = size - 1;
    let mut cap = vec![0.0f64; size * size];
    for j in 0..n {
        cap[j + 1] = 1.0;
    }
    for (a, &i) in rows.iter().enumerate() {
        for &j in &lay.free[i] {
            cap[(j + 1) * size + n + 1 + a] = w[j];
        }
        cap[(n + 1 + a) * size + sink] = t[i];
    }
    let orig = cap.clone();
    max_flow(&mut cap, size, 0, sink);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &lay.free[i] {
            let e = (j + 1) * size + n + 1 + a;
            z[i * n + j] = (orig[e] - cap[e]).clamp(0.0, w[j]);
        }
    }
}

/// Edmonds-Karp on a dense residual capacity matrix, updated in place.
fn max_flow(cap: &mut [f64], size: usize, source: usize, sink: usize) -> f64 {
    const EPS: f64 = 1e-15;
    let mut total = 0.0;
    loop {
        let mut prev = vec![usize::MAX; size];
        prev[source] = source;
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            if u == sink {
                break;
            }
            for v in 0..size {
                if prev[v] == usize::MAX && cap[u * size + v] > EPS {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            return total;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != source {
            let u = prev[v];
            push = push.min(cap[u * size + v]);
            v = u;
        }
        let mut v = sink;
        while v != source {
            let u = prev[v];
            cap[u * size + v] -= push;
            cap[v * size + u] += push;
            v = u;
        }
        total += push;
    }
}
