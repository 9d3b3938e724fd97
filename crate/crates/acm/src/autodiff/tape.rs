//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is an append-only sequence of nodes; every operation evaluates
//! eagerly and records what it needs for the reverse sweep. Tapes are rebuilt
//! per forward pass (attention weights depend on the current embedding, so
//! the graph is data-dependent), and a tape is confined to one thread for its
//! lifetime.
//!
//! The manifold row-maps accept the diagonal of `U` as a node so that the
//! trainable-manifold variant differentiates through the geometry. Near their
//! singular sets the maps clamp (push-forward keeps `|w1 - a0| >= 1e-9`,
//! push-back keeps its denominator above `EPS_NORM^2`) and gradients flow
//! through the clamped value; the optimizer's per-coordinate normalization
//! absorbs the resulting scale.

use std::sync::Arc;

use crate::graph::{AggregatorMatrix, Graph, GraphError};
use crate::manifold::{CENTER_GUARD, EPS_NORM};
use crate::mat::{dot, Mat};
use crate::rng::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("loss must be 1x1, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(usize, usize),
    #[error("mask index {0} out of range for {1} rows")]
    MaskOutOfRange(usize, usize),
    #[error("empty mask in masked_nll")]
    EmptyMask,
    #[error("dropout probability must lie in [0, 1), got {0}")]
    InvalidDropout(f64),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Constant,
    Parameter,
    Spmm { operator: Arc<AggregatorMatrix>, input: NodeId },
    MatMul { lhs: NodeId, rhs: NodeId },
    Add { lhs: NodeId, rhs: NodeId },
    Scale { input: NodeId, factor: f64 },
    Hadamard { lhs: NodeId, rhs: NodeId },
    Tanh { input: NodeId },
    LeakyRelu { input: NodeId, alpha: f64 },
    SumAll { input: NodeId },
    SoftplusShift { input: NodeId },
    ProjectRows { input: NodeId, u: NodeId },
    PushForwardRows { input: NodeId, u: NodeId, b: f64 },
    PushBackRows { input: NodeId, u: NodeId },
    Dropout { input: NodeId, mask: Mat },
    LogSoftmaxRows { input: NodeId },
    MaskedNll { input: NodeId, labels: Arc<Vec<usize>>, mask: Arc<Vec<usize>> },
    GatAggregate {
        h: NodeId,
        w_att: NodeId,
        a: NodeId,
        graph: Arc<Graph>,
        alpha: f64,
        z: Mat,
        raw_scores: Vec<f64>,
        attention: Arc<AggregatorMatrix>,
    },
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    op: Op,
}

/// Dynamic computation graph with eager evaluation.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Mat> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn parameter(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Parameter)
    }

    pub fn spmm(&mut self, operator: &Arc<AggregatorMatrix>, input: NodeId) -> Result<NodeId, TapeError> {
        let out = operator.spmm(self.value(input))?;
        Ok(self.push(out, Op::Spmm { operator: Arc::clone(operator), input }))
    }

    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, TapeError> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.cols() != b.rows() {
            return Err(TapeError::ShapeMismatch { op: "matmul", lhs: a.shape(), rhs: b.shape() });
        }
        let out = a.matmul(b);
        Ok(self.push(out, Op::MatMul { lhs, rhs }))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, TapeError> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(TapeError::ShapeMismatch { op: "add", lhs: a.shape(), rhs: b.shape() });
        }
        let out = a.add(b);
        Ok(self.push(out, Op::Add { lhs, rhs }))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let out = self.value(input).scale(factor);
        self.push(out, Op::Scale { input, factor })
    }

    pub fn hadamard(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, TapeError> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(TapeError::ShapeMismatch { op: "hadamard", lhs: a.shape(), rhs: b.shape() });
        }
        let out = a.hadamard(b);
        Ok(self.push(out, Op::Hadamard { lhs, rhs }))
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(f64::tanh);
        self.push(out, Op::Tanh { input })
    }

    pub fn leaky_relu(&mut self, input: NodeId, alpha: f64) -> NodeId {
        let out = self.value(input).map(|x| if x >= 0.0 { x } else { alpha * x });
        self.push(out, Op::LeakyRelu { input, alpha })
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let out = Mat::from_vec(1, 1, vec![self.value(input).sum()]);
        self.push(out, Op::SumAll { input })
    }

    /// `softplus(x) + shift`; stays strictly positive for `shift > 0`.
    pub fn softplus_shift(&mut self, input: NodeId, shift: f64) -> NodeId {
        let out = self.value(input).map(|x| softplus(x) + shift);
        self.push(out, Op::SoftplusShift { input })
    }

    fn check_manifold_args(
        &self,
        op: &'static str,
        input: NodeId,
        u: NodeId,
    ) -> Result<(), TapeError> {
        let (h, ud) = (self.value(input), self.value(u));
        if ud.rows() != 1 || ud.cols() != h.cols() {
            return Err(TapeError::ShapeMismatch { op, lhs: h.shape(), rhs: ud.shape() });
        }
        Ok(())
    }

    /// Row-wise `P_U`. Degenerate rows map to the basepoint `x0`.
    pub fn project_rows(&mut self, input: NodeId, u: NodeId) -> Result<NodeId, TapeError> {
        self.check_manifold_args("project_rows", input, u)?;
        let h = self.value(input);
        let ud = self.value(u).row(0);
        let a0 = ud[0].powf(-0.5);
        let mut out = h.clone();
        for i in 0..h.rows() {
            let row = h.row(i);
            let q = quad(ud, row);
            let orow = out.row_mut(i);
            if q < EPS_NORM * EPS_NORM {
                orow.fill(0.0);
                orow[0] = a0;
            } else {
                let s = q.sqrt();
                for (o, &x) in orow.iter_mut().zip(row) {
                    *o = x / s;
                }
            }
        }
        Ok(self.push(out, Op::ProjectRows { input, u }))
    }

    /// Row-wise push-forward onto the hyperplane `x1 = b`, clamped away from
    /// the chart center.
    pub fn push_forward_rows(&mut self, input: NodeId, u: NodeId, b: f64) -> Result<NodeId, TapeError> {
        self.check_manifold_args("push_forward_rows", input, u)?;
        let h = self.value(input);
        let ud = self.value(u).row(0);
        let a0 = ud[0].powf(-0.5);
        let mut out = h.clone();
        for i in 0..h.rows() {
            let row = h.row(i);
            let delta = clamp_delta(row[0] - a0);
            let c = (b - a0) / delta;
            let orow = out.row_mut(i);
            orow[0] = c * delta + a0;
            for l in 1..row.len() {
                orow[l] = c * row[l];
            }
        }
        Ok(self.push(out, Op::PushForwardRows { input, u, b }))
    }

    /// Row-wise push-back onto `M_U`, denominator clamped at `EPS_NORM^2`.
    pub fn push_back_rows(&mut self, input: NodeId, u: NodeId) -> Result<NodeId, TapeError> {
        self.check_manifold_args("push_back_rows", input, u)?;
        let h = self.value(input);
        let ud = self.value(u).row(0);
        let a0 = ud[0].powf(-0.5);
        let mut out = h.clone();
        for i in 0..h.rows() {
            let row = h.row(i);
            let mut d: Vec<f64> = row.to_vec();
            d[0] -= a0;
            let q = quad(ud, &d).max(EPS_NORM * EPS_NORM);
            let p = d[0] * ud[0] * a0;
            let t = -2.0 * p / q;
            let orow = out.row_mut(i);
            for (o, &di) in orow.iter_mut().zip(&d) {
                *o = t * di;
            }
            orow[0] += a0;
        }
        Ok(self.push(out, Op::PushBackRows { input, u }))
    }

    /// Inverted dropout: in training mode entries survive with probability
    /// `1 - p` and are scaled by `1/(1 - p)`; in eval mode the identity.
    pub fn dropout(&mut self, input: NodeId, p: f64, seed: u64, train: bool) -> Result<NodeId, TapeError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TapeError::InvalidDropout(p));
        }
        let h = self.value(input);
        let mask = if train {
            let mut rng = Rng::new(seed);
            let keep = 1.0 / (1.0 - p);
            Mat::from_fn(h.rows(), h.cols(), |_, _| if rng.uniform() >= p { keep } else { 0.0 })
        } else {
            Mat::from_fn(h.rows(), h.cols(), |_, _| 1.0)
        };
        let out = h.hadamard(&mask);
        Ok(self.push(out, Op::Dropout { input, mask }))
    }

    pub fn log_softmax_rows(&mut self, input: NodeId) -> NodeId {
        let h = self.value(input);
        let mut out = h.clone();
        for i in 0..h.rows() {
            let row = out.row_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows { input })
    }

    /// Mean negative log-likelihood of `labels` over the rows in `mask`;
    /// `input` holds row-wise log-probabilities.
    pub fn masked_nll(
        &mut self,
        input: NodeId,
        labels: &Arc<Vec<usize>>,
        mask: &Arc<Vec<usize>>,
    ) -> Result<NodeId, TapeError> {
        let h = self.value(input);
        if labels.len() != h.rows() {
            return Err(TapeError::ShapeMismatch {
                op: "masked_nll",
                lhs: h.shape(),
                rhs: (labels.len(), 1),
            });
        }
        if mask.is_empty() {
            return Err(TapeError::EmptyMask);
        }
        let mut acc = 0.0;
        for &i in mask.iter() {
            if i >= h.rows() {
                return Err(TapeError::MaskOutOfRange(i, h.rows()));
            }
            let label = labels[i];
            if label >= h.cols() {
                return Err(TapeError::LabelOutOfRange(label, h.cols()));
            }
            acc -= h.get(i, label);
        }
        let out = Mat::from_vec(1, 1, vec![acc / mask.len() as f64]);
        Ok(self.push(
            out,
            Op::MaskedNll { input, labels: Arc::clone(labels), mask: Arc::clone(mask) },
        ))
    }

    /// Single-head graph attention followed by aggregation: computes
    /// row-stochastic weights over closed neighborhoods from
    /// `leaky_relu(a . [h_i W_att || h_j W_att])` and returns `Att(H) * H`.
    pub fn gat_aggregate(
        &mut self,
        h: NodeId,
        w_att: NodeId,
        a: NodeId,
        graph: &Arc<Graph>,
        alpha: f64,
    ) -> Result<NodeId, TapeError> {
        let (hm, wm, am) = (self.value(h), self.value(w_att), self.value(a));
        let d = hm.cols();
        if hm.rows() != graph.n_nodes() {
            return Err(TapeError::ShapeMismatch {
                op: "gat_aggregate",
                lhs: hm.shape(),
                rhs: (graph.n_nodes(), d),
            });
        }
        if wm.shape() != (d, d) {
            return Err(TapeError::ShapeMismatch { op: "gat_aggregate", lhs: hm.shape(), rhs: wm.shape() });
        }
        if am.shape() != (1, 2 * d) {
            return Err(TapeError::ShapeMismatch { op: "gat_aggregate", lhs: hm.shape(), rhs: am.shape() });
        }
        let z = hm.matmul(wm);
        let (left, right) = am.row(0).split_at(d);
        let u_scores: Vec<f64> = (0..z.rows()).map(|i| dot(left, z.row(i))).collect();
        let v_scores: Vec<f64> = (0..z.rows()).map(|i| dot(right, z.row(i))).collect();
        let (raw_scores, att_values) = attention_rows(graph, &u_scores, &v_scores, alpha);
        let attention = Arc::new(AggregatorMatrix::from_attention(graph, att_values)?);
        let out = attention.spmm(hm)?;
        Ok(self.push(
            out,
            Op::GatAggregate {
                h,
                w_att,
                a,
                graph: Arc::clone(graph),
                alpha,
                z,
                raw_scores,
                attention,
            },
        ))
    }

    /// The attention operator built during the latest [`Tape::gat_aggregate`]
    /// node, for diagnostics.
    pub fn attention_of(&self, id: NodeId) -> Option<&Arc<AggregatorMatrix>> {
        match &self.nodes[id.0].op {
            Op::GatAggregate { attention, .. } => Some(attention),
            _ => None,
        }
    }

    fn add_grad(&mut self, id: NodeId, delta: Mat) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => g.add_assign(&delta),
            None => node.grad = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss. All gradients are reset first and
    /// contributions from shared consumers accumulate by summation.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TapeError> {
        {
            let l = self.value(loss);
            if l.shape() != (1, 1) {
                return Err(TapeError::NonScalarLoss(l.rows(), l.cols()));
            }
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Mat::from_vec(1, 1, vec![1.0]));

        for i in (0..self.nodes.len()).rev() {
            let grad = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            let deltas = self.local_grads(i, &grad)?;
            for (parent, delta) in deltas {
                self.add_grad(parent, delta);
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to its parents.
    fn local_grads(&self, i: usize, g: &Mat) -> Result<Vec<(NodeId, Mat)>, TapeError> {
        let node = &self.nodes[i];
        let out = match &node.op {
            Op::Constant | Op::Parameter => Vec::new(),
            Op::Spmm { operator, input } => {
                vec![(*input, operator.spmm_transpose(g)?)]
            }
            Op::MatMul { lhs, rhs } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                vec![(*lhs, g.matmul_t(b)), (*rhs, a.t_matmul(g))]
            }
            Op::Add { lhs, rhs } => vec![(*lhs, g.clone()), (*rhs, g.clone())],
            Op::Scale { input, factor } => vec![(*input, g.scale(*factor))],
            Op::Hadamard { lhs, rhs } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                vec![(*lhs, g.hadamard(b)), (*rhs, g.hadamard(a))]
            }
            Op::Tanh { input } => {
                let y = &node.value;
                let mut d = g.clone();
                for (dv, &yv) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv *= 1.0 - yv * yv;
                }
                vec![(*input, d)]
            }
            Op::LeakyRelu { input, alpha } => {
                let x = self.value(*input);
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                    *dv *= if xv >= 0.0 { 1.0 } else { *alpha };
                }
                vec![(*input, d)]
            }
            Op::SumAll { input } => {
                let x = self.value(*input);
                let s = g.get(0, 0);
                vec![(*input, Mat::from_fn(x.rows(), x.cols(), |_, _| s))]
            }
            Op::SoftplusShift { input } => {
                let x = self.value(*input);
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                    *dv *= sigmoid(xv);
                }
                vec![(*input, d)]
            }
            Op::ProjectRows { input, u } => self.project_rows_backward(*input, *u, g),
            Op::PushForwardRows { input, u, b } => self.push_forward_backward(*input, *u, *b, g),
            Op::PushBackRows { input, u } => self.push_back_backward(*input, *u, g),
            Op::Dropout { input, mask } => vec![(*input, g.hadamard(mask))],
            Op::LogSoftmaxRows { input } => {
                let y = &node.value;
                let mut d = g.clone();
                for r in 0..y.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    let drow = d.row_mut(r);
                    for (c, dv) in drow.iter_mut().enumerate() {
                        *dv -= y.get(r, c).exp() * gsum;
                    }
                }
                vec![(*input, d)]
            }
            Op::MaskedNll { input, labels, mask } => {
                let x = self.value(*input);
                let s = g.get(0, 0) / mask.len() as f64;
                let mut d = Mat::zeros(x.rows(), x.cols());
                for &r in mask.iter() {
                    let c = labels[r];
                    d.set(r, c, d.get(r, c) - s);
                }
                vec![(*input, d)]
            }
            Op::GatAggregate { h, w_att, a, graph, alpha, z, raw_scores, attention } => {
                self.gat_backward(*h, *w_att, *a, graph, *alpha, z, raw_scores, attention, g)?
            }
        };
        Ok(out)
    }

    fn project_rows_backward(&self, input: NodeId, u: NodeId, g: &Mat) -> Vec<(NodeId, Mat)> {
        let x = self.value(input);
        let ud = self.value(u).row(0);
        let a0 = ud[0].powf(-0.5);
        let mut dx = Mat::zeros(x.rows(), x.cols());
        let mut du = Mat::zeros(1, x.cols());
        for i in 0..x.rows() {
            let row = x.row(i);
            let grow = g.row(i);
            let q = quad(ud, row);
            if q < EPS_NORM * EPS_NORM {
                // Row was mapped to the basepoint x0 = (a0, 0, ...): constant
                // in x, derivative in u only through a0.
                let da0 = grow[0];
                du.set(0, 0, du.get(0, 0) + da0 * (-0.5) * ud[0].powf(-1.5));
                continue;
            }
            let s = q.sqrt();
            let gx = dot(grow, row);
            let drow = dx.row_mut(i);
            for l in 0..row.len() {
                drow[l] = grow[l] / s - gx * ud[l] * row[l] / (s * s * s);
                let du_l = -gx * row[l] * row[l] / (2.0 * s * s * s);
                du.set(0, l, du.get(0, l) + du_l);
            }
        }
        let _ = a0;
        vec![(input, dx), (u, du)]
    }

    fn push_forward_backward(&self, input: NodeId, u: NodeId, b: f64, g: &Mat) -> Vec<(NodeId, Mat)> {
        let w = self.value(input);
        let ud = self.value(u).row(0);
        let a0 = ud[0].powf(-0.5);
        let mut dw = Mat::zeros(w.rows(), w.cols());
        let mut du = Mat::zeros(1, w.cols());
        for i in 0..w.rows() {
            let row = w.row(i);
            let grow = g.row(i);
            let delta = clamp_delta(row[0] - a0);
            let c = (b - a0) / delta;
            // g . (w - x0) with the clamped first coordinate.
            let mut gdot = grow[0] * delta;
            for l in 1..row.len() {
                gdot += grow[l] * row[l];
            }
            let dc_dw1 = -(b - a0) / (delta * delta);
            let drow = dw.row_mut(i);
            drow[0] = dc_dw1 * gdot + grow[0] * c;
            for l in 1..row.len() {
                drow[l] = grow[l] * c;
            }
            // Chain through a0 = u1^{-1/2} (clamp treated as pass-through).
            let dc_da0 = (b - a0 - delta) / (delta * delta);
            let dl_da0 = dc_da0 * gdot + grow[0] * (1.0 - c);
            du.set(0, 0, du.get(0, 0) + dl_da0 * (-0.5) * ud[0].powf(-1.5));
        }
        vec![(input, dw), (u, du)]
    }

    fn push_back_backward(&self, input: NodeId, u: NodeId, g: &Mat) -> Vec<(NodeId, Mat)> {
        let v = self.value(input);
        let ud = self.value(u).row(0);
        let a0 = ud[0].powf(-0.5);
        let n_cols = v.cols();
        let mut dv = Mat::zeros(v.rows(), n_cols);
        let mut du = Mat::zeros(1, n_cols);
        for i in 0..v.rows() {
            let row = v.row(i);
            let grow = g.row(i);
            let mut d: Vec<f64> = row.to_vec();
            d[0] -= a0;
            let q = quad(ud, &d).max(EPS_NORM * EPS_NORM);
            let p = d[0] * ud[0] * a0;
            let t = -2.0 * p / q;
            let gd = dot(grow, &d);
            let drow = dv.row_mut(i);
            for l in 0..n_cols {
                // dt/dd_l = -2 (u1 a0 [l=0] q - 2 p u_l d_l) / q^2
                let dp_dl = if l == 0 { ud[0] * a0 } else { 0.0 };
                let dt_ddl = -2.0 * (dp_dl * q - 2.0 * p * ud[l] * d[l]) / (q * q);
                drow[l] = grow[l] * t + gd * dt_ddl;
                // direct u_l dependence: dp/du_l = d1 a0 [l=0], dq/du_l = d_l^2
                let dp_dul = if l == 0 { d[0] * a0 } else { 0.0 };
                let dt_dul = -2.0 * (dp_dul * q - p * d[l] * d[l]) / (q * q);
                du.set(0, l, du.get(0, l) + gd * dt_dul);
            }
            // chain through a0: d1, p and q all move with a0.
            let dp_da0 = ud[0] * (d[0] - a0);
            let dq_da0 = -2.0 * ud[0] * d[0];
            let dt_da0 = -2.0 * (dp_da0 * q - p * dq_da0) / (q * q);
            let dl_da0 = gd * dt_da0 + grow[0] * (1.0 - t);
            du.set(0, 0, du.get(0, 0) + dl_da0 * (-0.5) * ud[0].powf(-1.5));
        }
        vec![(input, dv), (u, du)]
    }

    #[allow(clippy::too_many_arguments)]
    fn gat_backward(
        &self,
        h: NodeId,
        w_att: NodeId,
        a: NodeId,
        graph: &Arc<Graph>,
        alpha: f64,
        z: &Mat,
        raw_scores: &[f64],
        attention: &Arc<AggregatorMatrix>,
        g: &Mat,
    ) -> Result<Vec<(NodeId, Mat)>, TapeError> {
        let hm = self.value(h);
        let wm = self.value(w_att);
        let am = self.value(a);
        let d = hm.cols();
        let n = graph.n_nodes();

        // out = Att * H: the matmul part of dH.
        let mut dh = attention.spmm_transpose(g)?;

        // dAtt_ij = g_i . h_j, then softmax and leaky-relu backward per row.
        let mut du_scores = vec![0.0; n];
        let mut dv_scores = vec![0.0; n];
        for i in 0..n {
            let grow = g.row(i);
            let entries: Vec<(usize, f64)> = attention.row(i).collect();
            let datt: Vec<f64> = entries.iter().map(|&(j, _)| dot(grow, hm.row(j))).collect();
            let inner: f64 = entries
                .iter()
                .zip(&datt)
                .map(|(&(_, w), &da)| w * da)
                .sum();
            let row_start = row_start_of(attention, i);
            for (k, (&(j, w), &da)) in entries.iter().zip(&datt).enumerate() {
                let de = w * (da - inner);
                let raw = raw_scores[row_start + k];
                let dpre = de * if raw >= 0.0 { 1.0 } else { alpha };
                du_scores[i] += dpre;
                dv_scores[j] += dpre;
            }
        }

        // u_i = aL . z_i, v_j = aR . z_j.
        let (left, right) = am.row(0).split_at(d);
        let mut dz = Mat::zeros(n, d);
        let mut da = Mat::zeros(1, 2 * d);
        for i in 0..n {
            let zrow = z.row(i);
            let dzrow = dz.row_mut(i);
            for l in 0..d {
                dzrow[l] = du_scores[i] * left[l] + dv_scores[i] * right[l];
                da.set(0, l, da.get(0, l) + du_scores[i] * zrow[l]);
                da.set(0, d + l, da.get(0, d + l) + dv_scores[i] * zrow[l]);
            }
        }

        // z = H * W_att.
        let dw = hm.t_matmul(&dz);
        dh.add_assign(&dz.matmul_t(wm));
        Ok(vec![(h, dh), (w_att, dw), (a, da)])
    }
}

/// Raw scores and row-softmax attention weights over closed neighborhoods,
/// aligned with the augmented adjacency pattern of `g` (row-major, columns
/// ascending). `u` and `v` hold the per-node source and target score parts.
pub fn attention_rows(g: &Graph, u: &[f64], v: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let mut raw = Vec::new();
    let mut att = Vec::new();
    for i in 0..g.n_nodes() {
        let nbrs = g.closed_neighbors(i);
        let start = raw.len();
        for &j in &nbrs {
            raw.push(u[i] + v[j]);
        }
        let scores: Vec<f64> = raw[start..]
            .iter()
            .map(|&s| if s >= 0.0 { s } else { alpha * s })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|&e| (e - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        att.extend(exps.into_iter().map(|e| e / sum));
    }
    (raw, att)
}

fn row_start_of(att: &AggregatorMatrix, i: usize) -> usize {
    // Attention matrices share the augmented pattern: row k has deg(k)+1
    // entries, so the offset is recoverable by walking the rows. Cheap at the
    // sizes involved.
    let mut start = 0;
    for r in 0..i {
        start += att.row(r).count();
    }
    start
}

fn quad(u: &[f64], x: &[f64]) -> f64 {
    x.iter().zip(u).map(|(&xi, &ui)| ui * xi * xi).sum()
}

fn clamp_delta(delta: f64) -> f64 {
    if delta.abs() >= CENTER_GUARD {
        delta
    } else if delta < 0.0 {
        -CENTER_GUARD
    } else {
        CENTER_GUARD
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of `softplus`, used to initialize trainable manifolds at `U = I`.
pub fn softplus_inverse(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}
