//! Empirical checks of the contraction theory.
//!
//! An aggregation restricted to a graph is *contracted* when (1) a constant
//! closed neighborhood maps to that constant, and (2) for every reference
//! point the aggregated row is no farther from it than the farthest
//! neighborhood row, with equality only in the constant case. Repeatedly
//! applying a contracted (or diffeomorphism-conjugated) aggregation collapses
//! all rows of a connected graph to one point; aggregations over compact
//! manifolds escape the definition, witnessed by explicit fixed-point
//! configurations.
//!
//! This module samples those conditions, tracks collapse trajectories, and
//! verifies the `g(H) = D̃^{1/2} H` conjugation between the symmetric and
//! row-normalized operators numerically.

use thiserror::Error;

use crate::graph::{AggregatorKind, AggregatorMatrix, Graph, GraphError};
use crate::manifold::{euclidean_distance, euclidean_pairwise_stats, ManifoldError, ManifoldSpec};
use crate::mat::Mat;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("graph is not connected")]
    GraphNotConnected,
    #[error("embedding has {0} rows, graph has {1} nodes")]
    ShapeMismatch(usize, usize),
}

/// Distance used by trajectory statistics and contraction probes.
#[derive(Clone, Debug)]
pub enum Metric {
    Euclidean,
    Manifold(ManifoldSpec),
}

impl Metric {
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64, LabError> {
        match self {
            Metric::Euclidean => Ok(euclidean_distance(x, y)),
            Metric::Manifold(m) => Ok(m.distance(x, y)?),
        }
    }

    /// `(max, mean)` pairwise distance over rows.
    pub fn pairwise_stats(&self, h: &Mat) -> Result<(f64, f64), LabError> {
        match self {
            Metric::Euclidean => Ok(euclidean_pairwise_stats(h)),
            Metric::Manifold(m) => Ok(m.pairwise_stats(h)?),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub max_pairwise: f64,
    pub mean_pairwise: f64,
    pub max_to_ref: f64,
}

/// Iteration record: strided embedding snapshots plus per-step dispersion.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<Mat>,
    pub snapshot_steps: Vec<usize>,
    pub step_stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn final_embedding(&self) -> &Mat {
        self.snapshots.last().expect("trajectory stores at least H0")
    }
}

/// Iterate `H <- agg(H)` for `steps` steps, measuring dispersion under
/// `metric` against the first row of `h0` as the reference point.
pub fn iterate(
    agg: impl FnMut(&Mat) -> Result<Mat, LabError>,
    h0: &Mat,
    steps: usize,
    metric: &Metric,
) -> Result<Trajectory, LabError> {
    let reference: Vec<f64> = h0.row(0).to_vec();
    iterate_with(agg, h0, steps, metric, &reference)
}

/// [`iterate`] with an explicit reference point.
pub fn iterate_with(
    mut agg: impl FnMut(&Mat) -> Result<Mat, LabError>,
    h0: &Mat,
    steps: usize,
    metric: &Metric,
    reference: &[f64],
) -> Result<Trajectory, LabError> {
    let stride = (steps / 100).max(1);
    let mut snapshots = Vec::new();
    let mut snapshot_steps = Vec::new();
    let mut step_stats = Vec::with_capacity(steps + 1);
    let mut h = h0.clone();
    for step in 0..=steps {
        let (max_pairwise, mean_pairwise) = metric.pairwise_stats(&h)?;
        let max_to_ref = (0..h.rows()).try_fold(0.0f64, |acc, i| {
            metric.distance(reference, h.row(i)).map(|d| acc.max(d))
        })?;
        step_stats.push(StepStats { max_pairwise, mean_pairwise, max_to_ref });
        if step % stride == 0 || step == steps {
            snapshots.push(h.clone());
            snapshot_steps.push(step);
        }
        if step < steps {
            h = agg(&h)?;
        }
    }
    Ok(Trajectory { snapshots, snapshot_steps, step_stats })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    ConsistentWithContracted,
    Refuted,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::ConsistentWithContracted => "consistent_with_contracted",
            Verdict::Refuted => "refuted",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Outcome of sampling the two contraction conditions.
#[derive(Clone, Debug)]
pub struct ContractionReport {
    pub condition1_violations: usize,
    pub worst_condition1: f64,
    pub condition2_violations: usize,
    pub worst_condition2: f64,
    /// Strictness failures: distance to the reference matched the neighborhood
    /// maximum although the neighborhood rows were not identical.
    pub equality_without_identical: usize,
    pub samples: usize,
    pub verdict: Verdict,
}

/// Margin separating genuine equality from floating-point noise in the
/// strictness clause.
const EQUALITY_MARGIN: f64 = 1e-6;

/// Sample the contraction conditions for `agg` on `g`.
///
/// Random probes test condition 1 (constant neighborhoods) and condition 2
/// (no expansion past the neighborhood maximum). Deterministic adversarial
/// probes additionally hunt for the strictness failure that separates
/// non-contracted aggregations: a row placed at the farthest possible point
/// whose aggregate stays at maximal distance. On manifolds the battery only
/// runs at nodes with `|Ñ(u)| > 2`, matching the hypothesis of the
/// non-contraction theorem.
pub fn check_contracted(
    mut agg: impl FnMut(&Mat) -> Result<Mat, LabError>,
    g: &Graph,
    metric: &Metric,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> ContractionReport {
    let mut rng = Rng::new(seed);
    let n = g.n_nodes();
    let dim = match metric {
        Metric::Manifold(m) => m.dim(),
        Metric::Euclidean => 4,
    };
    let mut report = ContractionReport {
        condition1_violations: 0,
        worst_condition1: 0.0,
        condition2_violations: 0,
        worst_condition2: 0.0,
        equality_without_identical: 0,
        samples: 0,
        verdict: Verdict::Inconclusive,
    };

    let sample_row = |rng: &mut Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        match metric {
            Metric::Euclidean => raw,
            Metric::Manifold(m) => {
                let mat = Mat::from_vec(1, dim, raw);
                m.project_rows_or_center(&mat).row(0).to_vec()
            }
        }
    };
    let sample_embedding = |rng: &mut Rng| -> Mat {
        let mut h = Mat::zeros(n, dim);
        for i in 0..n {
            h.row_mut(i).copy_from_slice(&sample_row(rng));
        }
        h
    };

    // Condition 1: constant closed neighborhoods are fixed.
    for _ in 0..n_samples {
        let mut h = sample_embedding(&mut rng);
        let i = rng.below(n);
        let x = sample_row(&mut rng);
        for &j in &g.closed_neighbors(i) {
            h.row_mut(j).copy_from_slice(&x);
        }
        let hbar = match agg(&h) {
            Ok(hb) => hb,
            Err(_) => continue,
        };
        report.samples += 1;
        let d = match metric.distance(&x, hbar.row(i)) {
            Ok(d) => d,
            Err(_) => continue,
        };
        if d > tol {
            report.condition1_violations += 1;
            report.worst_condition1 = report.worst_condition1.max(d);
        }
    }

    // Condition 2 on random embeddings.
    for _ in 0..n_samples {
        let h = sample_embedding(&mut rng);
        let x = sample_row(&mut rng);
        let i = rng.below(n);
        if let Err(_e) = probe_condition2(&mut agg, g, metric, &h, &x, i, tol, &mut report) {
            continue;
        }
    }

    // Adversarial battery: place row i at the farthest point from x.
    let mut battery_nodes: Vec<usize> = (0..n).filter(|&i| g.degree(i) >= 1).collect();
    battery_nodes.truncate(8);
    for &i in &battery_nodes {
        let mut h = sample_embedding(&mut rng);
        let x = sample_row(&mut rng);
        match metric {
            Metric::Euclidean => {
                let rhs = g
                    .closed_neighbors(i)
                    .iter()
                    .map(|&j| euclidean_distance(&x, h.row(j)))
                    .fold(0.0f64, f64::max);
                let dir: Vec<f64> = {
                    let raw: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                    let nrm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    raw.iter().map(|v| v / nrm).collect()
                };
                let far: Vec<f64> = x
                    .iter()
                    .zip(&dir)
                    .map(|(&xv, &dv)| xv + (rhs + 1.0) * dv)
                    .collect();
                h.row_mut(i).copy_from_slice(&far);
            }
            Metric::Manifold(_) => {
                let anti: Vec<f64> = x.iter().map(|&v| -v).collect();
                h.row_mut(i).copy_from_slice(&anti);
            }
        }
        let _ = probe_condition2(&mut agg, g, metric, &h, &x, i, tol, &mut report);
    }

    // Manifold fixed-point battery (only at nodes satisfying |Ñ(u)| > 2).
    if let Metric::Manifold(m) = metric {
        if m.dim() >= 2 {
            let mut qualifying: Vec<usize> = (0..n).filter(|&i| g.degree(i) >= 2).collect();
            qualifying.truncate(8);
            for &u0 in &qualifying {
                let h = antipodal_witness(g, m, u0);
                let x = circle_point(m, 0.0);
                let _ = probe_condition2(&mut agg, g, metric, &h, &x, u0, tol, &mut report);
            }
        }
    }

    report.verdict = if report.condition1_violations + report.condition2_violations > 0
        || report.equality_without_identical > 0
    {
        Verdict::Refuted
    } else if report.samples == 0 {
        Verdict::Inconclusive
    } else {
        Verdict::ConsistentWithContracted
    };
    report
}

#[allow(clippy::too_many_arguments)]
fn probe_condition2(
    agg: &mut impl FnMut(&Mat) -> Result<Mat, LabError>,
    g: &Graph,
    metric: &Metric,
    h: &Mat,
    x: &[f64],
    i: usize,
    tol: f64,
    report: &mut ContractionReport,
) -> Result<(), LabError> {
    let hbar = agg(h)?;
    report.samples += 1;
    let lhs = metric.distance(x, hbar.row(i))?;
    let closed = g.closed_neighbors(i);
    let mut rhs = 0.0f64;
    for &j in &closed {
        rhs = rhs.max(metric.distance(x, h.row(j))?);
    }
    if lhs > rhs + tol {
        report.condition2_violations += 1;
        report.worst_condition2 = report.worst_condition2.max(lhs - rhs);
        return Ok(());
    }
    // Strictness: equality is only allowed when the neighborhood is constant.
    let mut neighborhood_spread = 0.0f64;
    for (a, &ja) in closed.iter().enumerate() {
        for &jb in &closed[a + 1..] {
            neighborhood_spread = neighborhood_spread.max(metric.distance(h.row(ja), h.row(jb))?);
        }
    }
    if neighborhood_spread > EQUALITY_MARGIN && lhs >= rhs - EQUALITY_MARGIN {
        report.equality_without_identical += 1;
    }
    Ok(())
}

/// Point at angle `theta` on the `{e1, e2}` section of `M_U`.
fn circle_point(m: &ManifoldSpec, theta: f64) -> Vec<f64> {
    let mut p = vec![0.0; m.dim()];
    p[0] = theta.cos() / m.u_diag()[0].sqrt();
    p[1] = theta.sin() / m.u_diag()[1].sqrt();
    p
}

/// The non-contraction witness configuration at `u0`: the node itself at the
/// antipode of the reference, two neighbors at `±pi/2`, everything else at
/// the antipode. The aggregate of the closed neighborhood points back to the
/// antipode while the neighborhood rows are plainly not identical.
fn antipodal_witness(g: &Graph, m: &ManifoldSpec, u0: usize) -> Mat {
    use std::f64::consts::{FRAC_PI_2, PI};
    let n = g.n_nodes();
    let anti = circle_point(m, PI);
    let mut h = Mat::zeros(n, m.dim());
    for i in 0..n {
        h.row_mut(i).copy_from_slice(&anti);
    }
    let nbrs = g.neighbors(u0);
    if nbrs.len() >= 2 {
        h.row_mut(nbrs[0]).copy_from_slice(&circle_point(m, FRAC_PI_2));
        h.row_mut(nbrs[1]).copy_from_slice(&circle_point(m, -FRAC_PI_2));
    }
    h
}

/// Max entrywise deviation over `k <= steps` between iterates of the
/// symmetric operator and the conjugated row-normalized operator
/// `D̃^{1/2} L_rw^k D̃^{-1/2}`.
pub fn check_equiv_contracted_sym(
    g: &Graph,
    lambda: f64,
    h0: &Mat,
    steps: usize,
) -> Result<f64, LabError> {
    if h0.rows() != g.n_nodes() {
        return Err(LabError::ShapeMismatch(h0.rows(), g.n_nodes()));
    }
    let l_sym = AggregatorMatrix::new(g, AggregatorKind::SymNorm, lambda)?;
    let l_rw = AggregatorMatrix::new(g, AggregatorKind::RowNorm, lambda)?;
    let scale_rows = |h: &Mat, up: bool| -> Mat {
        let mut out = h.clone();
        for i in 0..h.rows() {
            let s = g.augmented_degree(i).sqrt();
            let f = if up { s } else { 1.0 / s };
            for v in out.row_mut(i) {
                *v *= f;
            }
        }
        out
    };
    let mut sym = h0.clone();
    let mut rw = scale_rows(h0, false);
    let mut max_dev = sym.max_abs_diff(&scale_rows(&rw, true));
    for _ in 1..=steps {
        sym = l_sym.spmm(&sym)?;
        rw = l_rw.spmm(&rw)?;
        max_dev = max_dev.max(sym.max_abs_diff(&scale_rows(&rw, true)));
    }
    Ok(max_dev)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollapseOutcome {
    /// First step at which the dispersion statistic fell below the tolerance.
    Collapsed(usize),
    NotCollapsed,
}

/// Iterate the operator and report the first step where the max pairwise
/// Euclidean distance drops below `tol`. The symmetric operator is measured
/// in the conjugated frame (rows rescaled by `D̃^{-1/2}`), where its collapse
/// point becomes a constant.
pub fn collapse_check(
    g: &Graph,
    kind: AggregatorKind,
    lambda: f64,
    h0: &Mat,
    tol: f64,
    max_steps: usize,
) -> Result<CollapseOutcome, LabError> {
    if !g.is_connected() {
        return Err(LabError::GraphNotConnected);
    }
    if h0.rows() != g.n_nodes() {
        return Err(LabError::ShapeMismatch(h0.rows(), g.n_nodes()));
    }
    let op = AggregatorMatrix::new(g, kind, lambda)?;
    let conjugate = matches!(kind, AggregatorKind::SymNorm);
    let measure_collapsed = |h: &Mat| -> bool {
        let scaled;
        let view = if conjugate {
            let mut s = h.clone();
            for i in 0..h.rows() {
                let f = 1.0 / g.augmented_degree(i).sqrt();
                for v in s.row_mut(i) {
                    *v *= f;
                }
            }
            scaled = s;
            &scaled
        } else {
            h
        };
        !any_pair_at_least(view, tol)
    };
    let mut h = h0.clone();
    if measure_collapsed(&h) {
        return Ok(CollapseOutcome::Collapsed(0));
    }
    for step in 1..=max_steps {
        h = op.spmm(&h)?;
        if measure_collapsed(&h) {
            return Ok(CollapseOutcome::Collapsed(step));
        }
    }
    Ok(CollapseOutcome::NotCollapsed)
}

fn any_pair_at_least(h: &Mat, tol: f64) -> bool {
    let n = h.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            if euclidean_distance(h.row(i), h.row(j)) >= tol {
                return true;
            }
        }
    }
    false
}

/// Random connected graph: a random attachment tree plus `extra_edges`
/// additional distinct edges.
pub fn random_connected_graph(n: usize, extra_edges: usize, rng: &mut Rng) -> Graph {
    assert!(n >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut present = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for k in 1..n {
        let parent = order[rng.below(k)];
        let child = order[k];
        let key = (parent.min(child), parent.max(child));
        present.insert(key);
        edges.push(key);
    }
    let max_extra = n * (n - 1) / 2 - edges.len();
    let mut added = 0;
    let mut attempts = 0;
    while added < extra_edges.min(max_extra) && attempts < 50 * (extra_edges + 1) {
        attempts += 1;
        let u = rng.below(n);
        let v = rng.below(n);
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if present.insert(key) {
            edges.push(key);
            added += 1;
        }
    }
    Graph::build(&edges, n).expect("constructed edges are valid")
}
