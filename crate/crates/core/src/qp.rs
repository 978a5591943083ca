//! Convex quadratic programming with a primal active-set method.
//!
//! The general solver handles `min 1/2 x'Hx + c'x` subject to linear equalities
//! and inequalities `a_i' x <= b_i`, with `H` positive semidefinite. Each
//! iteration solves the equality-constrained subproblem on the null space of the
//! working set. Directions of zero curvature are followed to the nearest
//! blocking constraint, so singular Hessians (duplicate strain columns, relaxed
//! nodes of the branch-and-bound) need no regularization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{shape_err, Error, Result};
use crate::model::{FrequencyVector, Measurement, NoiseModel, StrainMatrix};

/// Primal feasibility tolerance for starts and solutions.
pub const FEAS_TOL: f64 = 1e-9;

/// Default stationarity / complementarity tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Dense linear constraints stored row-major.
#[derive(Clone, Debug, Default)]
pub struct ConstraintRows {
    dim: usize,
    coeffs: Vec<f64>,
    rhs: Vec<f64>,
}

impl ConstraintRows {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            coeffs: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64], rhs: f64) {
        assert_eq!(row.len(), self.dim);
        self.coeffs.extend_from_slice(row);
        self.rhs.push(rhs);
    }

    /// Pushes a sparse row given as `(column, coefficient)` pairs.
    pub fn push_sparse(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let start = self.coeffs.len();
        self.coeffs.resize(start + self.dim, 0.0);
        for &(j, v) in terms {
            self.coeffs[start + j] += v;
        }
        self.rhs.push(rhs);
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rhs(&self, i: usize) -> f64 {
        self.rhs[i]
    }

    fn dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// `min 1/2 x'Hx + c'x` s.t. `E x = f`, `A x <= b`.
#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub equalities: ConstraintRows,
    pub inequalities: ConstraintRows,
}

impl QuadraticProgram {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest violation of any constraint at `x`.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let eq = (0..self.equalities.len())
            .map(|i| (self.equalities.dot(i, x) - self.equalities.rhs(i)).abs())
            .fold(0.0, f64::max);
        let ineq = (0..self.inequalities.len())
            .map(|i| self.inequalities.dot(i, x) - self.inequalities.rhs(i))
            .fold(0.0, f64::max);
        eq.max(ineq)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ActiveSetOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for ActiveSetOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: DEFAULT_TOL,
        }
    }
}

/// Convergence diagnostics of an active-set solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QpReport {
    pub iterations: usize,
    pub converged: bool,
    /// `max |g + A_W' mu|` at the returned point.
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    /// `max |mu_i (b_i - a_i' x)|` over the working set.
    pub complementarity: f64,
    /// Objective value after every iteration, starting with the start point.
    pub objective_trace: Vec<f64>,
    /// Inequality indices in the final working set.
    pub active: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub report: QpReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Member {
    Eq(usize),
    Ineq(usize),
}

struct NullSpace {
    /// Orthonormal basis of the null space of the working rows, `N x r`.
    basis: DMatrix<f64>,
    /// First `k` columns of the orthogonal factor.
    range: DMatrix<f64>,
    /// Upper triangular `k x k` factor, `A_W' = range * r`.
    r: DMatrix<f64>,
}

fn null_space(rows: &[&[f64]], dim: usize) -> NullSpace {
    let k = rows.len().min(dim);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // Modified Gram-Schmidt with one reorthogonalization pass: A_W' = Q1 R.
    let mut range: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = DMatrix::<f64>::zeros(k, k);
    for (c, row) in rows.iter().take(k).enumerate() {
        let mut v = row.to_vec();
        for _ in 0..2 {
            for (b, qb) in range.iter().enumerate() {
                let h = dot(qb, &v);
                r[(b, c)] += h;
                v.iter_mut().zip(qb).for_each(|(x, y)| *x -= h * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        r[(c, c)] = norm;
        v.iter_mut().for_each(|x| *x /= norm);
        range.push(v);
    }
    // Complete to an orthonormal basis from the coordinate vectors, least
    // covered by the range first.
    let mut order: Vec<(f64, usize)> = (0..dim)
        .map(|i| (range.iter().map(|qb| qb[i] * qb[i]).sum::<f64>(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut null: Vec<Vec<f64>> = Vec::with_capacity(dim - k);
    for threshold in [0.1, 1e-8] {
        for &(_, i) in &order {
            if null.len() == dim - k {
                break;
            }
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            for _ in 0..2 {
                for qb in range.iter().chain(&null) {
                    let h = dot(qb, &v);
                    v.iter_mut().zip(qb).for_each(|(x, y)| *x -= h * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > threshold {
                v.iter_mut().for_each(|x| *x /= norm);
                null.push(v);
            }
        }
    }
    NullSpace {
        basis: DMatrix::from_fn(dim, null.len(), |i, j| null[j][i]),
        range: DMatrix::from_fn(dim, k, |i, j| range[j][i]),
        r,
    }
}

/// Solves a convex QP from a feasible start with the primal active-set method.
///
/// Inequalities active at the start enter the initial working set (in index
/// order, skipping linearly dependent ones). A constraint leaves the working
/// set when its multiplier is negative; among several, the smallest index is
/// dropped, and ties in the ratio test go to the smallest index as well.
pub fn solve_active_set(
    qp: &QuadraticProgram,
    start: &DVector<f64>,
    opts: &ActiveSetOptions,
) -> Result<QpSolution> {
    let dim = qp.dim();
    if start.len() != dim || qp.hessian.nrows() != dim || qp.hessian.ncols() != dim {
        return Err(shape_err("QP start, Hessian and linear term disagree in size"));
    }
    let infeas = qp.infeasibility(start.as_slice());
    if infeas > FEAS_TOL {
        return Err(Error::Infeasible(format!(
            "QP start violates constraints by {infeas:.3e}"
        )));
    }

    let hnorm = qp.hessian.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let gscale = hnorm.max(qp.linear.amax()).max(1.0);
    let stat_tol = opts.tol * gscale;
    let curv_tol = 1e-11 * hnorm.max(1e-300);

    let mut x = start.clone();
    let mut working: Vec<Member> = Vec::new();
    {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut try_add = |row: &[f64], member: Member, working: &mut Vec<Member>| {
            let mut v = DVector::from_column_slice(row);
            let norm0 = v.norm();
            if norm0 == 0.0 {
                return;
            }
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
            let norm = v.norm();
            if norm > 1e-9 * norm0 {
                basis.push(v / norm);
                working.push(member);
            }
        };
        for i in 0..qp.equalities.len() {
            try_add(qp.equalities.row(i), Member::Eq(i), &mut working);
        }
        for i in 0..qp.inequalities.len() {
            let slack = qp.inequalities.rhs(i) - qp.inequalities.dot(i, x.as_slice());
            if slack.abs() <= 1e-10 {
                try_add(qp.inequalities.row(i), Member::Ineq(i), &mut working);
            }
        }
    }

    let mut report = QpReport {
        objective_trace: vec![qp.objective(&x)],
        ..QpReport::default()
    };
    let mut in_working = vec![false; qp.inequalities.len()];
    for m in &working {
        if let Member::Ineq(i) = m {
            in_working[*i] = true;
        }
    }

    let mut multipliers: Vec<f64> = Vec::new();
    let mut stationarity = f64::INFINITY;
    for iter in 0..opts.max_iters {
        report.iterations = iter + 1;
        let g = &qp.hessian * &x + &qp.linear;
        let rows: Vec<&[f64]> = working
            .iter()
            .map(|m| match *m {
                Member::Eq(i) => qp.equalities.row(i),
                Member::Ineq(i) => qp.inequalities.row(i),
            })
            .collect();
        let ns = null_space(&rows, dim);
        let z = &ns.basis;
        let gr = z.transpose() * &g;

        let mut direction: Option<DVector<f64>> = None;
        if gr.amax() > stat_tol {
            let hr = z.transpose() * (&qp.hessian * z);
            // Positive definite reduced Hessian: plain Newton step.
            if let Some(chol) = hr.clone().cholesky() {
                let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &v| a.min(v * v));
                if min_pivot > 1e3 * curv_tol {
                    let y = -chol.solve(&gr);
                    let p = z * y;
                    if p.amax() > 1e-15 {
                        direction = Some(p);
                    }
                }
            }
        }
        if direction.is_none() && gr.amax() > stat_tol {
            let hr = z.transpose() * (&qp.hessian * z);
            let eig = SymmetricEigen::new(hr);
            let mut newton = DVector::<f64>::zeros(z.ncols());
            let mut flat = DVector::<f64>::zeros(z.ncols());
            for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
                let u = eig.eigenvectors.column(idx);
                let coef = u.dot(&gr);
                if lam > curv_tol {
                    newton.axpy(-coef / lam, &u, 1.0);
                } else {
                    flat.axpy(-coef, &u, 1.0);
                }
            }
            let y = if flat.amax() > stat_tol { flat } else { newton };
            let p = z * y;
            if p.amax() > 1e-15 {
                direction = Some(p);
            }
        }

        let Some(p) = direction else {
            // Stationary on the current face: inspect multipliers.
            let (mu, resid) = face_multipliers(&ns, &rows, &g);
            multipliers = mu;
            stationarity = resid;
            let drop = working
                .iter()
                .zip(&multipliers)
                .position(|(m, &mu)| matches!(m, Member::Ineq(_)) && mu < -stat_tol);
            // Bland: smallest constraint index among negative multipliers.
            let drop = drop.and_then(|_| {
                working
                    .iter()
                    .zip(&multipliers)
                    .enumerate()
                    .filter_map(|(pos, (m, &mu))| match m {
                        Member::Ineq(i) if mu < -stat_tol => Some((*i, pos)),
                        _ => None,
                    })
                    .min()
                    .map(|(_, pos)| pos)
            });
            match drop {
                None => {
                    report.converged = true;
                    break;
                }
                Some(pos) => {
                    if let Member::Ineq(i) = working.remove(pos) {
                        in_working[i] = false;
                    }
                    report.objective_trace.push(qp.objective(&x));
                    continue;
                }
            }
        };

        let slope = g.dot(&p);
        let curvature = p.dot(&(&qp.hessian * &p));
        let mut alpha = if curvature > curv_tol * p.norm_squared() {
            -slope / curvature
        } else {
            f64::INFINITY
        };
        let pnorm = p.norm();
        let mut blocking = None;
        for i in 0..qp.inequalities.len() {
            if in_working[i] {
                continue;
            }
            let ap = qp.inequalities.dot(i, p.as_slice());
            if ap <= 1e-13 * pnorm {
                continue;
            }
            let slack = (qp.inequalities.rhs(i) - qp.inequalities.dot(i, x.as_slice())).max(0.0);
            let t = slack / ap;
            if t < alpha {
                alpha = t;
                blocking = Some(i);
            }
        }
        if !alpha.is_finite() {
            return Err(Error::Numerical("QP is unbounded along a feasible direction".into()));
        }
        x.axpy(alpha, &p, 1.0);
        if let Some(i) = blocking {
            working.push(Member::Ineq(i));
            in_working[i] = true;
        }
        report.objective_trace.push(qp.objective(&x));
    }

    if !report.converged {
        let g = &qp.hessian * &x + &qp.linear;
        let rows: Vec<&[f64]> = working
            .iter()
            .map(|m| match *m {
                Member::Eq(i) => qp.equalities.row(i),
                Member::Ineq(i) => qp.inequalities.row(i),
            })
            .collect();
        let ns = null_space(&rows, dim);
        let (mu, resid) = face_multipliers(&ns, &rows, &g);
        multipliers = mu;
        stationarity = resid;
    }

    report.stationarity = stationarity;
    report.primal_infeasibility = qp.infeasibility(x.as_slice());
    report.complementarity = working
        .iter()
        .zip(&multipliers)
        .filter_map(|(m, &mu)| match m {
            Member::Ineq(i) => {
                let slack = qp.inequalities.rhs(*i) - qp.inequalities.dot(*i, x.as_slice());
                Some((mu * slack).abs())
            }
            Member::Eq(_) => None,
        })
        .fold(0.0, f64::max);
    report.active = working
        .iter()
        .filter_map(|m| match m {
            Member::Ineq(i) => Some(*i),
            Member::Eq(_) => None,
        })
        .collect();
    let objective = qp.objective(&x);
    Ok(QpSolution {
        x,
        objective,
        report,
    })
}

/// Least-squares multipliers for `A_W' mu = -g` and the stationarity residual.
fn face_multipliers(ns: &NullSpace, rows: &[&[f64]], g: &DVector<f64>) -> (Vec<f64>, f64) {
    let k = ns.r.nrows();
    if k == 0 {
        return (Vec::new(), g.amax());
    }
    let rhs = -(ns.range.transpose() * g);
    let mu = ns
        .r
        .solve_upper_triangular(&rhs)
        .unwrap_or_else(|| DVector::zeros(k));
    let mut resid = g.clone();
    for (row, &m) in rows.iter().zip(mu.iter()) {
        for (ri, &a) in resid.iter_mut().zip(row.iter()) {
            *ri += m * a;
        }
    }
    (mu.iter().copied().collect(), resid.amax())
}

/// Convex QP over a box with one linear equality, the building block of the
/// frequency update: `min 1/2 x'Hx + g'x` s.t. `lower <= x <= upper`,
/// `coeffs . x = rhs`.
#[derive(Clone, Debug)]
pub struct SimplexQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eq_coeffs: Vec<f64>,
    pub eq_rhs: f64,
}

impl SimplexQp {
    /// Validates symmetry (1e-12) and positive semidefiniteness (eigenvalues >= -1e-10).
    pub fn new(
        hessian: DMatrix<f64>,
        gradient: DVector<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        eq_coeffs: Vec<f64>,
        eq_rhs: f64,
    ) -> Result<Self> {
        let n = gradient.len();
        if hessian.nrows() != n
            || hessian.ncols() != n
            || lower.len() != n
            || upper.len() != n
            || eq_coeffs.len() != n
        {
            return Err(shape_err("simplex QP components disagree in size"));
        }
        let scale = hessian.amax().max(1.0);
        if (&hessian - hessian.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidArgument("Hessian is not symmetric".into()));
        }
        if n > 0 {
            let min_eig = hessian.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "Hessian is not positive semidefinite (eigenvalue {min_eig:.3e})"
                )));
            }
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidArgument("empty box".into()));
        }
        Ok(Self {
            hessian,
            gradient,
            lower,
            upper,
            eq_coeffs,
            eq_rhs,
        })
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn to_program(&self) -> QuadraticProgram {
        let n = self.dim();
        let mut eq = ConstraintRows::new(n);
        eq.push(&self.eq_coeffs, self.eq_rhs);
        let mut ineq = ConstraintRows::new(n);
        for j in 0..n {
            ineq.push_sparse(&[(j, -1.0)], -self.lower[j]);
            ineq.push_sparse(&[(j, 1.0)], self.upper[j]);
        }
        QuadraticProgram {
            hessian: self.hessian.clone(),
            linear: self.gradient.clone(),
            equalities: eq,
            inequalities: ineq,
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.hessian * &x)) + self.gradient.dot(&x)
    }
}

/// Solves a [`SimplexQp`] from a feasible start.
///
/// Exceeding `max_iters` is not an error: the last iterate is returned with
/// `report.converged == false`.
pub fn solve_simplex_qp(
    problem: &SimplexQp,
    start: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, QpReport)> {
    if start.len() != problem.dim() {
        return Err(shape_err("start point has the wrong length"));
    }
    let qp = problem.to_program();
    let sol = solve_active_set(
        &qp,
        &DVector::from_column_slice(start),
        &ActiveSetOptions { max_iters, tol },
    )?;
    Ok((sol.x.iter().copied().collect(), sol.report))
}

/// Result of the frequency update for a fixed strain matrix.
#[derive(Clone, Debug)]
pub struct WeightUpdate {
    /// Input matrix with columns permuted to match the sorted weights.
    pub matrix: StrainMatrix,
    pub weights: FrequencyVector,
    /// Objective value at `(matrix, weights)`.
    pub objective: f64,
    /// False when `rank(M) < n - 1`, where the minimizer need not be unique.
    pub unique: bool,
    /// `perm[j]` is the input column that became column `j`.
    pub permutation: Vec<usize>,
    pub report: QpReport,
}

/// Minimizes the objective over the simplex for fixed `M`.
///
/// Solves for the step `dw` with `0 <= w + dw <= 1` and `sum dw = 0` from
/// `w_start`, then sorts the result in non-increasing order and applies the
/// same column permutation to `M` so that `(M, w)` stays consistent.
pub fn solve_w_given_m(
    matrix: &StrainMatrix,
    d: &Measurement,
    noise: &NoiseModel,
    w_start: &FrequencyVector,
) -> Result<WeightUpdate> {
    let dims = matrix.dims();
    let n = dims.n();
    let q = dims.q();
    if d.data().len() != q || noise.len() != q || w_start.len() != n {
        return Err(shape_err("strain matrix, data, noise and start disagree in size"));
    }
    let w0 = w_start.values();
    let iv = noise.inverse_variances();

    // H = M' G^-1 M, g = M' G^-1 (M w0 - d)
    let mut hess = DMatrix::<f64>::zeros(n, n);
    let mut grad = DVector::<f64>::zeros(n);
    let mw = matrix.apply(w0)?;
    for i in 0..q {
        let row = matrix.row(i);
        let r = mw[i] - d.data()[i];
        for a in 0..n {
            if row[a] == 0 {
                continue;
            }
            grad[a] += iv[i] * r;
            for b in 0..n {
                if row[b] == 1 {
                    hess[(a, b)] += iv[i];
                }
            }
        }
    }
    let problem = SimplexQp {
        hessian: hess,
        gradient: grad,
        lower: w0.iter().map(|w| -w).collect(),
        upper: w0.iter().map(|w| 1.0 - w).collect(),
        eq_coeffs: vec![1.0; n],
        eq_rhs: 0.0,
    };
    let (step, report) = solve_simplex_qp(&problem, &vec![0.0; n], 50 * n.max(2), DEFAULT_TOL)?;
    let raw: Vec<f64> = w0.iter().zip(&step).map(|(w, s)| (w + s).max(0.0)).collect();

    let mut perm: Vec<usize> = (0..n).collect();
    // Stable sort keeps the current order for exact ties.
    perm.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
    let sorted: Vec<f64> = perm.iter().map(|&j| raw[j]).collect();
    let weights = FrequencyVector::new(sorted)?;
    let permuted = matrix.permute_columns(&perm);
    let objective = crate::model::objective_phi(&permuted, &weights, d, noise)?;
    Ok(WeightUpdate {
        unique: matrix.rank() + 1 >= n,
        matrix: permuted,
        weights,
        objective,
        permutation: perm,
        report,
    })
}
