//! Certified global MAP estimation by branch-and-bound over the binary entries.
//!
//! Nodes are explored best-first by relaxation bound; the branching variable
//! is the free entry of the relaxed `M` closest to 1/2. Incumbents come from
//! rounding the relaxed point and from a per-site argmin at the relaxed `w`
//! followed by a few coordinate descent steps, each evaluated with the exact
//! weight QP.

pub mod mccormick;
pub mod relaxation;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bcd::SiteSolver;
use crate::error::{Error, Result};
use crate::model::{FrequencyVector, Measurement, NoiseModel, ProblemDims, Reconstruction, StrainMatrix};
use crate::qp::solve_w_given_m;

pub use mccormick::{build_mccormick, implied_z_bounds, McCormickModel};
pub use relaxation::{solve_relaxation, Fixings, RelaxedPoint};

use relaxation::{solve_relaxation_from, WarmStart};

/// Relaxed entries within this distance of 0 or 1 count as integral.
const INTEGRALITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    pub mip_gap: f64,
    pub node_limit: usize,
    /// Coordinate descent steps applied to each heuristic incumbent.
    pub polish_iters: usize,
    pub record_trace: bool,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            mip_gap: 1e-6,
            node_limit: 1_000_000,
            polish_iters: 3,
            record_trace: false,
        }
    }
}

/// Relative gap `(upper - lower) / max(1e-10, |upper|)`.
pub fn relative_gap(upper: f64, lower: f64) -> f64 {
    ((upper - lower) / upper.abs().max(1e-10)).max(0.0)
}

/// Search state after a node expansion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub nodes: usize,
    pub lower_bound: f64,
    pub incumbent: f64,
}

#[derive(Clone, Debug)]
pub struct BnbNode {
    pub fixed: Vec<Option<u8>>,
    pub lower_bound: f64,
    pub relaxation: RelaxedPoint,
    pub depth: usize,
}

#[derive(Clone, Debug)]
pub struct GlobalSolveReport {
    pub incumbent: Reconstruction,
    pub nodes_explored: usize,
    pub lower_bound: f64,
    pub final_gap: f64,
    /// Seconds.
    pub wall_time: f64,
    pub trace: Vec<TracePoint>,
}

struct Queued {
    bound: f64,
    depth: usize,
    seq: usize,
    node: BnbNode,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // BinaryHeap pops the maximum: smallest bound, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Search<'a> {
    d: &'a Measurement,
    noise: &'a NoiseModel,
    dims: ProblemDims,
    model: McCormickModel,
    sites: SiteSolver,
    config: GlobalConfig,
    incumbent: Option<Reconstruction>,
    tried: HashSet<Vec<u8>>,
}

impl Search<'_> {
    fn upper(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |r| r.objective)
    }

    fn prunable(&self, bound: f64) -> bool {
        let u = self.upper();
        u.is_finite() && relative_gap(u, bound) <= self.config.mip_gap
    }

    /// Exact weight QP for `matrix`; updates the incumbent. Returns the sorted pair.
    fn consider(&mut self, matrix: StrainMatrix, w_start: &[f64]) -> Result<Option<(StrainMatrix, FrequencyVector)>> {
        if !self.tried.insert(matrix.entries().to_vec()) {
            return Ok(None);
        }
        let start = FrequencyVector::sorted_from(w_start.iter().map(|v| v.max(0.0)).collect())
            .unwrap_or_else(|_| FrequencyVector::uniform(self.dims.n()));
        let up = solve_w_given_m(&matrix, self.d, self.noise, &start)?;
        if up.objective < self.upper() {
            self.incumbent = Some(Reconstruction {
                matrix: up.matrix.clone(),
                weights: up.weights.clone(),
                objective: up.objective,
                certified: false,
                gap: None,
            });
        }
        Ok(Some((up.matrix, up.weights)))
    }

    fn heuristics(&mut self, fixed: &Fixings, point: &RelaxedPoint) -> Result<()> {
        let n = self.dims.n();
        let r = self.dims.block_rows();

        // Threshold rounding, keeping the largest entry of an overfull block column.
        let mut entries: Vec<u8> = point
            .m
            .iter()
            .zip(fixed)
            .map(|(&v, f)| f.unwrap_or(u8::from(v > 0.5)))
            .collect();
        if r > 1 {
            for k in 0..self.dims.m() {
                for j in 0..n {
                    let rows: Vec<usize> = self.dims.block_range(k).filter(|&i| entries[i * n + j] == 1).collect();
                    if rows.len() > 1 {
                        let keep = *rows
                            .iter()
                            .max_by(|&&a, &&b| {
                                let fa = fixed[a * n + j].is_some();
                                let fb = fixed[b * n + j].is_some();
                                fa.cmp(&fb)
                                    .then(point.m[a * n + j].total_cmp(&point.m[b * n + j]))
                                    .then(b.cmp(&a))
                            })
                            .unwrap();
                        for &i in &rows {
                            if i != keep {
                                entries[i * n + j] = 0;
                            }
                        }
                    }
                }
            }
        }
        let rounded = StrainMatrix::from_entries(self.dims, entries)?;
        self.consider(rounded, &point.w)?;

        // Per-site argmin at the relaxed weights, restricted to the node.
        let cands = self.sites.candidates().clone();
        let allowed = |k: usize, j: usize| {
            let classes = cands.classes(j);
            self.dims.block_range(k).enumerate().all(|(c, i)| {
                (0..n).all(|t| match fixed[i * n + t] {
                    None => true,
                    Some(v) => v == u8::from(classes[t] as usize == c + 1),
                })
            })
        };
        let (choice, _) = self.sites.best_blocks(&point.w, self.d, self.noise, allowed);
        let mut current = StrainMatrix::from_candidates(self.dims, &cands, &choice);
        let mut w = point.w.clone();
        for step in 0..=self.config.polish_iters {
            match self.consider(current.clone(), &w)? {
                None if step > 0 => break,
                None => {}
                Some((matrix, weights)) => {
                    current = matrix;
                    w = weights.values().to_vec();
                }
            }
            let next = self.sites.update(&w, self.d, self.noise).matrix;
            if next == current {
                break;
            }
            current = next;
        }
        Ok(())
    }

    fn evaluate(&self, fixed: Vec<Option<u8>>, parent: Option<&BnbNode>, branched: usize) -> Result<Option<BnbNode>> {
        let block = branched / self.dims.n() / self.dims.block_rows();
        let warm = parent.map(|p| WarmStart {
            w: &p.relaxation.w,
            t: &p.relaxation.t,
            reset_block: (self.dims.block_rows() > 1).then_some(block),
        });
        match solve_relaxation_from(&self.model, &fixed, warm.as_ref()) {
            Ok(relaxation) => {
                let parent_bound = parent.map_or(0.0, |p| p.lower_bound);
                Ok(Some(BnbNode {
                    lower_bound: relaxation.lower_bound.max(parent_bound),
                    depth: parent.map_or(0, |p| p.depth + 1),
                    relaxation,
                    fixed,
                }))
            }
            Err(Error::Infeasible(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Global MAP estimate with default settings apart from gap and node limit.
pub fn solve_global(
    d: &Measurement,
    noise: &NoiseModel,
    dims: ProblemDims,
    mip_gap: f64,
    node_limit: usize,
    warm_start: Option<&Reconstruction>,
) -> Result<GlobalSolveReport> {
    let config = GlobalConfig {
        mip_gap,
        node_limit,
        ..GlobalConfig::default()
    };
    solve_global_with(d, noise, dims, &config, warm_start)
}

/// Best-first branch-and-bound on the McCormick relaxation.
///
/// The returned incumbent is certified when the relative gap closed to
/// `config.mip_gap` before `config.node_limit` relaxations were solved.
pub fn solve_global_with(
    d: &Measurement,
    noise: &NoiseModel,
    dims: ProblemDims,
    config: &GlobalConfig,
    warm_start: Option<&Reconstruction>,
) -> Result<GlobalSolveReport> {
    if !(config.mip_gap > 0.0) || config.node_limit == 0 {
        return Err(Error::InvalidArgument("mip_gap must be positive and node_limit at least 1".into()));
    }
    let started = Instant::now();
    let model = build_mccormick(d, noise, dims)?;
    let mut search = Search {
        d,
        noise,
        dims,
        model,
        sites: SiteSolver::new(dims)?,
        config: *config,
        incumbent: None,
        tried: HashSet::new(),
    };
    if let Some(ws) = warm_start {
        if ws.matrix.dims() != dims {
            return Err(crate::error::shape_err("warm start has different dimensions"));
        }
        search.consider(ws.matrix.clone(), ws.weights.values())?;
    }

    let qn = dims.q() * dims.n();
    let root = search
        .evaluate(vec![None; qn], None, 0)?
        .ok_or_else(|| Error::Numerical("root relaxation infeasible".into()))?;
    let mut nodes_explored = 1;
    search.heuristics(&root.fixed, &root.relaxation)?;

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    // Smallest bound among nodes discarded by the gap test.
    let mut pruned_min = f64::INFINITY;
    let mut global_lb = root.lower_bound;
    let mut trace = Vec::new();
    heap.push(Queued {
        bound: root.lower_bound,
        depth: 0,
        seq,
        node: root,
    });

    while let Some(top) = heap.peek() {
        global_lb = global_lb.max(top.bound.min(pruned_min));
        if search.prunable(top.bound) || nodes_explored >= config.node_limit {
            break;
        }
        let Queued { node, .. } = heap.pop().unwrap();
        match node.relaxation.most_fractional(&node.fixed, INTEGRALITY_TOL) {
            None => {
                // Relaxed point is binary: the node is solved exactly.
                let entries = node
                    .relaxation
                    .m
                    .iter()
                    .map(|&v| u8::from(v > 0.5))
                    .collect();
                let mat = StrainMatrix::from_entries(dims, entries)?;
                search.consider(mat, &node.relaxation.w)?;
                pruned_min = pruned_min.min(node.lower_bound);
            }
            Some(var) => {
                let mut f0 = node.fixed.clone();
                f0[var] = Some(0);
                let mut f1 = node.fixed.clone();
                f1[var] = Some(1);
                let (c0, c1) = rayon::join(
                    || search.evaluate(f0, Some(&node), var),
                    || search.evaluate(f1, Some(&node), var),
                );
                for child in [c0?, c1?].into_iter().flatten() {
                    nodes_explored += 1;
                    search.heuristics(&child.fixed, &child.relaxation)?;
                    if search.prunable(child.lower_bound) {
                        pruned_min = pruned_min.min(child.lower_bound);
                        continue;
                    }
                    seq += 1;
                    heap.push(Queued {
                        bound: child.lower_bound,
                        depth: child.depth,
                        seq,
                        node: child,
                    });
                }
            }
        }
        if config.record_trace {
            let lb = heap.peek().map_or(f64::INFINITY, |q| q.bound).min(pruned_min);
            trace.push(TracePoint {
                nodes: nodes_explored,
                lower_bound: global_lb.max(lb.min(search.upper())),
                incumbent: search.upper(),
            });
        }
    }
    let upper = search.upper();
    let open_min = heap.peek().map_or(f64::INFINITY, |q| q.bound);
    let lower = open_min.min(pruned_min).min(upper).max(global_lb.min(upper));
    let final_gap = relative_gap(upper, lower);
    let mut incumbent = search
        .incumbent
        .ok_or_else(|| Error::Numerical("no incumbent found".into()))?;
    incumbent.certified = final_gap <= config.mip_gap;
    incumbent.gap = Some(final_gap);
    Ok(GlobalSolveReport {
        incumbent,
        nodes_explored,
        lower_bound: lower,
        final_gap,
        wall_time: started.elapsed().as_secs_f64(),
        trace,
    })
}
