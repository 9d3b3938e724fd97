//! SGC, GCN and GAT, each in three flavors: the vanilla Euclidean model, the
//! compact-manifold variant (embeddings re-projected onto `M_U` after every
//! aggregation, transforms routed through the push-forward/push-back charts),
//! and the trainable-manifold variant where the diagonal of `U` is learned.
//!
//! Layer recipes, with `S = D̃^{-1/2} Ã D̃^{-1/2}` and `P = row-wise P_U`:
//!
//! * vanilla GCN:  `H <- relu(dropout(S H) W)`
//! * manifold GCN: `H̄ <- P(S H)`, `H <- PB(tanh(dropout(PF(H̄)) W))`
//! * GAT variants replace `S` by the data-dependent attention operator.
//! * SGC applies `k` aggregation (and projection) steps with no hidden
//!   transform, then a single linear classifier.
//!
//! The classifier reads `PF(H) W_out` for manifold variants and `H W_out`
//! otherwise. The trainable diagonal uses `u = softplus(theta) + 1e-4`,
//! initialized so that `U = I` exactly at the first step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{attention_rows, glorot_init, softplus_inverse, NodeId, Tape, TapeError};
use crate::graph::{AggregatorKind, AggregatorMatrix, Graph, GraphError};
use crate::manifold::{ManifoldError, ManifoldSpec};
use crate::mat::{dot, Mat};

pub const U_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Sgc,
    Gcn,
    Gat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Acm,
    AcmStar,
}

impl Variant {
    pub fn on_manifold(self) -> bool {
        matches!(self, Variant::Acm | Variant::AcmStar)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub arch: Arch,
    pub variant: Variant,
    /// Aggregation steps for SGC (0 allowed), layers for GCN/GAT (>= 1).
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub dropout_p: f64,
    /// Negative slope of the GAT attention nonlinearity.
    pub leaky_relu_alpha: f64,
    /// Chart hyperplane offset; 0 keeps the chart maximally far from the
    /// projection center for `U = I`.
    pub hyperplane_b: f64,
}

impl ModelConfig {
    pub fn new(arch: Arch, variant: Variant, n_layers: usize, hidden_dim: usize, n_classes: usize) -> ModelConfig {
        ModelConfig {
            arch,
            variant,
            n_layers,
            hidden_dim,
            n_classes,
            dropout_p: 0.6,
            leaky_relu_alpha: 0.2,
            hyperplane_b: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.n_classes < 1 {
            return fail("n_classes must be >= 1".into());
        }
        if !matches!(self.arch, Arch::Sgc) && self.n_layers < 1 {
            return fail("n_layers must be >= 1 for GCN/GAT".into());
        }
        if !matches!(self.arch, Arch::Sgc) && self.hidden_dim < 1 {
            return fail("hidden_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.leaky_relu_alpha < 0.0 {
            return fail("leaky_relu_alpha must be >= 0".into());
        }
        match self.variant {
            Variant::Acm if self.hyperplane_b == 1.0 => {
                fail("hyperplane_b = 1 passes through the projection center of U = I".into())
            }
            Variant::AcmStar if self.hyperplane_b > 0.0 => {
                fail("hyperplane_b must be <= 0 for a trainable manifold".into())
            }
            _ => Ok(()),
        }
    }
}

/// One model instance: configuration plus its trainable parameters.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    in_dim: usize,
    params: Vec<Mat>,
    names: Vec<String>,
}

/// Handles produced by a forward pass.
pub struct Forward {
    pub logits: NodeId,
    /// Embedding after each aggregation step (index 0 is the model input,
    /// projected for manifold variants).
    pub layers: Vec<NodeId>,
    /// Tape ids of the parameters, aligned with [`Model::params`].
    pub param_ids: Vec<NodeId>,
}

impl Model {
    pub fn new(cfg: ModelConfig, in_dim: usize, seed: u64) -> Result<Model, ModelError> {
        cfg.validate()?;
        if in_dim < 1 {
            return Err(ModelError::InvalidConfig("input dimension must be >= 1".into()));
        }
        let mut seeds = crate::rng::Rng::new(seed);
        let mut params = Vec::new();
        let mut names = Vec::new();
        let add = |name: String, m: Mat, params: &mut Vec<Mat>, names: &mut Vec<String>| {
            names.push(name);
            params.push(m);
        };
        let h = cfg.hidden_dim;
        let c = cfg.n_classes;
        match cfg.arch {
            Arch::Sgc => {
                add("w_out".into(), glorot_init(in_dim, c, seeds.next_u64()), &mut params, &mut names);
            }
            Arch::Gcn => {
                for l in 0..cfg.n_layers {
                    let (din, dout) = (if l == 0 { in_dim } else { h }, h);
                    add(format!("w{l}"), glorot_init(din, dout, seeds.next_u64()), &mut params, &mut names);
                }
                add("w_out".into(), glorot_init(h, c, seeds.next_u64()), &mut params, &mut names);
            }
            Arch::Gat => {
                for l in 0..cfg.n_layers {
                    let (din, dout) = (if l == 0 { in_dim } else { h }, h);
                    add(format!("w_att{l}"), glorot_init(din, din, seeds.next_u64()), &mut params, &mut names);
                    add(format!("a{l}"), glorot_init(1, 2 * din, seeds.next_u64()), &mut params, &mut names);
                    add(format!("w{l}"), glorot_init(din, dout, seeds.next_u64()), &mut params, &mut names);
                }
                add("w_out".into(), glorot_init(h, c, seeds.next_u64()), &mut params, &mut names);
            }
        }
        if matches!(cfg.variant, Variant::AcmStar) {
            let theta0 = softplus_inverse(1.0 - U_FLOOR);
            add(
                "theta_in".into(),
                Mat::from_fn(1, in_dim, |_, _| theta0),
                &mut params,
                &mut names,
            );
            if !matches!(cfg.arch, Arch::Sgc) {
                add(
                    "theta_hidden".into(),
                    Mat::from_fn(1, h, |_, _| theta0),
                    &mut params,
                    &mut names,
                );
            }
        }
        Ok(Model { cfg, in_dim, params, names })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    fn param_index(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).expect("unknown parameter")
    }

    /// The manifold in effect for a given ambient dimension: `U = I` for the
    /// fixed variant, `softplus(theta) + 1e-4` for the trainable one.
    pub fn manifold_for_dim(&self, dim: usize) -> Option<ManifoldSpec> {
        match self.cfg.variant {
            Variant::Vanilla => None,
            Variant::Acm => Some(
                ManifoldSpec::unit(dim)
                    .with_b(self.cfg.hyperplane_b)
                    .expect("validated b"),
            ),
            Variant::AcmStar => {
                let name = if dim == self.in_dim { "theta_in" } else { "theta_hidden" };
                let theta = &self.params[self.param_index(name)];
                assert_eq!(theta.cols(), dim, "no trainable manifold of dimension {dim}");
                let u: Vec<f64> = theta
                    .row(0)
                    .iter()
                    .map(|&t| softplus(t) + U_FLOOR)
                    .collect();
                Some(
                    ManifoldSpec::from_u_diag(u)
                        .expect("softplus keeps U positive")
                        .with_b(self.cfg.hyperplane_b)
                        .expect("validated b"),
                )
            }
        }
    }

    /// Build the full forward pass on `tape`. `dropout_seed` pins the mask
    /// stream; evaluation passes use `train = false`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &Arc<Graph>,
        x: &Mat,
        train: bool,
        dropout_seed: u64,
    ) -> Result<Forward, ModelError> {
        if x.rows() != graph.n_nodes() {
            return Err(ModelError::Tape(TapeError::ShapeMismatch {
                op: "model_forward",
                lhs: (graph.n_nodes(), self.in_dim),
                rhs: x.shape(),
            }));
        }
        let param_ids: Vec<NodeId> = self.params.iter().map(|p| tape.parameter(p.clone())).collect();
        let pid = |name: &str| param_ids[self.param_index(name)];
        let mut seeds = crate::rng::Rng::new(dropout_seed);
        let on_manifold = self.cfg.variant.on_manifold();
        let b = self.cfg.hyperplane_b;

        // Manifold diagonals as tape nodes (constant for the fixed variant,
        // differentiable through softplus for the trainable one).
        let u_in = if on_manifold {
            Some(match self.cfg.variant {
                Variant::Acm => tape.constant(Mat::from_fn(1, self.in_dim, |_, _| 1.0)),
                Variant::AcmStar => tape.softplus_shift(pid("theta_in"), U_FLOOR),
                Variant::Vanilla => unreachable!(),
            })
        } else {
            None
        };
        let u_hidden = if on_manifold && !matches!(self.cfg.arch, Arch::Sgc) {
            Some(match self.cfg.variant {
                Variant::Acm => tape.constant(Mat::from_fn(1, self.cfg.hidden_dim, |_, _| 1.0)),
                Variant::AcmStar => tape.softplus_shift(pid("theta_hidden"), U_FLOOR),
                Variant::Vanilla => unreachable!(),
            })
        } else {
            None
        };

        let mut h = tape.constant(x.clone());
        if let Some(u) = u_in {
            h = tape.project_rows(h, u)?;
        }
        let mut layers = vec![h];

        let static_op = match self.cfg.arch {
            Arch::Sgc | Arch::Gcn => Some(Arc::new(AggregatorMatrix::new(
                graph,
                AggregatorKind::SymNorm,
                1.0,
            )?)),
            Arch::Gat => None,
        };

        match self.cfg.arch {
            Arch::Sgc => {
                let op = static_op.as_ref().unwrap();
                for _ in 0..self.cfg.n_layers {
                    h = tape.spmm(op, h)?;
                    if let Some(u) = u_in {
                        h = tape.project_rows(h, u)?;
                    }
                    layers.push(h);
                }
                let logits = self.classifier_head(tape, h, u_in, b, train, &mut seeds, &pid)?;
                Ok(Forward { logits, layers, param_ids })
            }
            Arch::Gcn | Arch::Gat => {
                for l in 0..self.cfg.n_layers {
                    let u_cur = if l == 0 { u_in } else { u_hidden };
                    let agg = match self.cfg.arch {
                        Arch::Gcn => tape.spmm(static_op.as_ref().unwrap(), h)?,
                        Arch::Gat => tape.gat_aggregate(
                            h,
                            pid(&format!("w_att{l}")),
                            pid(&format!("a{l}")),
                            graph,
                            self.cfg.leaky_relu_alpha,
                        )?,
                        Arch::Sgc => unreachable!(),
                    };
                    h = agg;
                    if let Some(u) = u_cur {
                        h = tape.project_rows(h, u)?;
                        h = tape.push_forward_rows(h, u, b)?;
                    }
                    h = tape.dropout(h, self.cfg.dropout_p, seeds.next_u64(), train)?;
                    h = tape.matmul(h, pid(&format!("w{l}")))?;
                    if self.cfg.variant.on_manifold() {
                        h = tape.tanh(h);
                        h = tape.push_back_rows(h, u_hidden.unwrap())?;
                    } else {
                        h = tape.leaky_relu(h, 0.0);
                    }
                    layers.push(h);
                }
                let logits = self.classifier_head(tape, h, u_hidden, b, train, &mut seeds, &pid)?;
                Ok(Forward { logits, layers, param_ids })
            }
        }
    }

    fn classifier_head(
        &self,
        tape: &mut Tape,
        mut h: NodeId,
        u: Option<NodeId>,
        b: f64,
        train: bool,
        seeds: &mut crate::rng::Rng,
        pid: &impl Fn(&str) -> NodeId,
    ) -> Result<NodeId, ModelError> {
        if let Some(u) = u {
            h = tape.push_forward_rows(h, u, b)?;
        }
        h = tape.dropout(h, self.cfg.dropout_p, seeds.next_u64(), train)?;
        Ok(tape.matmul(h, pid("w_out"))?)
    }

    /// Masked cross-entropy on top of a forward pass.
    pub fn loss(
        &self,
        tape: &mut Tape,
        logits: NodeId,
        labels: &Arc<Vec<usize>>,
        mask: &Arc<Vec<usize>>,
    ) -> Result<NodeId, ModelError> {
        let lp = tape.log_softmax_rows(logits);
        Ok(tape.masked_nll(lp, labels, mask)?)
    }

    /// Evaluation-mode logits (fresh tape, no dropout).
    pub fn logits(&self, graph: &Arc<Graph>, x: &Mat) -> Result<Mat, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, graph, x, false, 0)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Evaluation-mode embeddings after every aggregation step (entry 0 is
    /// the projected/raw input).
    pub fn layer_embeddings(&self, graph: &Arc<Graph>, x: &Mat) -> Result<Vec<Mat>, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, graph, x, false, 0)?;
        Ok(fwd.layers.iter().map(|&id| tape.value(id).clone()).collect())
    }

    /// For SGC without a trainable manifold the whole aggregation stack is
    /// parameter-free; the per-epoch tape then only needs the classifier
    /// head. Returns the fixed pre-classifier embedding in that case.
    pub fn fixed_prefix(&self, graph: &Arc<Graph>, x: &Mat) -> Result<Option<Mat>, ModelError> {
        if !matches!(self.cfg.arch, Arch::Sgc) || matches!(self.cfg.variant, Variant::AcmStar) {
            return Ok(None);
        }
        let op = AggregatorMatrix::new(graph, AggregatorKind::SymNorm, 1.0)?;
        let manifold = self.manifold_for_dim(self.in_dim);
        let mut h = match &manifold {
            Some(m) => m.project_rows_or_center(x),
            None => x.clone(),
        };
        for _ in 0..self.cfg.n_layers {
            h = op.spmm(&h)?;
            if let Some(m) = &manifold {
                h = m.project_rows_or_center(&h);
            }
        }
        Ok(Some(h))
    }

    /// Classifier head over a fixed prefix (see [`Model::fixed_prefix`]).
    pub fn head_forward(
        &self,
        tape: &mut Tape,
        z: &Mat,
        train: bool,
        dropout_seed: u64,
    ) -> Result<Forward, ModelError> {
        debug_assert!(matches!(self.cfg.arch, Arch::Sgc) && !matches!(self.cfg.variant, Variant::AcmStar));
        let param_ids: Vec<NodeId> = self.params.iter().map(|p| tape.parameter(p.clone())).collect();
        let pid = |name: &str| param_ids[self.param_index(name)];
        let mut seeds = crate::rng::Rng::new(dropout_seed);
        let mut h = tape.constant(z.clone());
        let u = match self.cfg.variant {
            Variant::Acm => Some(tape.constant(Mat::from_fn(1, z.cols(), |_, _| 1.0))),
            _ => None,
        };
        let layers = vec![h];
        if let Some(u) = u {
            h = tape.push_forward_rows(h, u, self.cfg.hyperplane_b)?;
        }
        h = tape.dropout(h, self.cfg.dropout_p, seeds.next_u64(), train)?;
        let logits = tape.matmul(h, pid("w_out"))?;
        Ok(Forward { logits, layers, param_ids })
    }
}

/// Single-head attention operator: scores
/// `e_ij = leaky_relu(a . [h_i W_att || h_j W_att])` over closed
/// neighborhoods, row-softmax normalized.
pub fn gat_attention(
    graph: &Graph,
    h: &Mat,
    w_att: &Mat,
    a: &Mat,
    alpha: f64,
) -> Result<AggregatorMatrix, ModelError> {
    let d = h.cols();
    if h.rows() != graph.n_nodes() || w_att.shape() != (d, d) || a.shape() != (1, 2 * d) {
        return Err(ModelError::Tape(TapeError::ShapeMismatch {
            op: "gat_attention",
            lhs: h.shape(),
            rhs: w_att.shape(),
        }));
    }
    let z = h.matmul(w_att);
    let (left, right) = a.row(0).split_at(d);
    let u: Vec<f64> = (0..z.rows()).map(|i| dot(left, z.row(i))).collect();
    let v: Vec<f64> = (0..z.rows()).map(|i| dot(right, z.row(i))).collect();
    let (_, att) = attention_rows(graph, &u, &v, alpha);
    Ok(AggregatorMatrix::from_attention(graph, att)?)
}

/// One manifold GCN layer outside the tape: `PB(tanh(PF(P(S H)) W))`.
/// Strict geometry (errors at the singular sets); used by tests and the
/// contraction lab as an independent route to the tape implementation.
pub fn gcn_acm_layer(graph: &Graph, h: &Mat, w: &Mat, m: &ManifoldSpec) -> Result<Mat, ModelError> {
    let op = AggregatorMatrix::new(graph, AggregatorKind::SymNorm, 1.0)?;
    let hbar = m.project_rows(&op.spmm(h)?)?;
    let pf = m.push_forward_rows(&hbar)?;
    let t = pf.matmul(w).map(f64::tanh);
    Ok(m.push_back_rows(&t)?)
}

/// Row-wise softmax probabilities and predicted labels (ties resolve to the
/// lowest class index).
pub fn classify(logits: &Mat) -> (Mat, Vec<usize>) {
    let mut probs = logits.clone();
    let mut preds = Vec::with_capacity(logits.rows());
    for i in 0..logits.rows() {
        let row = probs.row_mut(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
        let mut best = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        preds.push(best);
    }
    (probs, preds)
}

/// Fraction of correct predictions over `mask`.
pub fn accuracy(preds: &[usize], labels: &[usize], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let hits = mask.iter().filter(|&&i| preds[i] == labels[i]).count();
    hits as f64 / mask.len() as f64
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> Arc<Graph> {
        Arc::new(Graph::build(&[(0, 1)], 2).unwrap())
    }

    #[test]
    fn classify_uniform_and_ties() {
        let (probs, preds) = classify(&Mat::zeros(2, 4));
        for i in 0..2 {
            for c in 0..4 {
                assert!((probs.get(i, c) - 0.25).abs() < 1e-12);
            }
        }
        assert_eq!(preds, vec![0, 0]);

        // equal max at classes 1 and 3 resolves to 1
        let logits = Mat::from_rows(&[vec![0.0, 3.0, 1.0, 3.0]]);
        let (_, preds) = classify(&logits);
        assert_eq!(preds, vec![1]);
    }

    #[test]
    fn classify_rows_sum_to_one() {
        let mut rng = crate::rng::Rng::new(8);
        let logits = Mat::from_fn(200, 6, |_, _| rng.normal() * 4.0);
        let (probs, _) = classify(&logits);
        for i in 0..probs.rows() {
            let s: f64 = probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn acm_layer_output_stays_on_manifold() {
        let g = Graph::build(&[(0, 1), (1, 2), (0, 2), (2, 3)], 4).unwrap();
        let m = ManifoldSpec::unit(3);
        let mut rng = crate::rng::Rng::new(4);
        for trial in 0..20 {
            let h0 = Mat::from_fn(4, 3, |_, _| rng.normal());
            let h = m.project_rows_or_center(&h0);
            let w = glorot_init(3, 3, trial);
            let out = gcn_acm_layer(&g, &h, &w, &m).unwrap();
            for i in 0..out.rows() {
                assert!((m.quad(out.row(i)) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn acm_layer_hand_chain_on_path() {
        // H rows (0,1): aggregation keeps (0,1); PF fixes (0,1); tanh gives
        // (0, tanh 1); PB lands back on the unit circle.
        let g = path2();
        let m = ManifoldSpec::unit(2);
        let h = Mat::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]);
        let out = gcn_acm_layer(&g, &h, &Mat::identity(2), &m).unwrap();
        let t = 1.0f64.tanh();
        // PB((0, t)): d = (-1, t), p = -1, q = 1 + t^2, y = (2/(1+t^2))(-1,t) + (1,0)
        let q = 1.0 + t * t;
        let expect = [1.0 - 2.0 / q, 2.0 * t / q];
        for i in 0..2 {
            assert!((out.get(i, 0) - expect[0]).abs() < 1e-12);
            assert!((out.get(i, 1) - expect[1]).abs() < 1e-12);
            assert!((m.quad(out.row(i)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_stay_identical_through_layers() {
        let g = Arc::new(Graph::build(&[(0, 1), (1, 2), (0, 2)], 3).unwrap());
        for variant in [Variant::Vanilla, Variant::Acm, Variant::AcmStar] {
            let cfg = ModelConfig::new(Arch::Gcn, variant, 3, 5, 2);
            let model = Model::new(cfg, 4, 7).unwrap();
            let x = Mat::from_fn(3, 4, |_, j| 0.3 * (j as f64 + 1.0));
            let logits = model.logits(&g, &x).unwrap();
            for i in 1..3 {
                for c in 0..2 {
                    assert!(
                        (logits.get(i, c) - logits.get(0, c)).abs() < 1e-10,
                        "{variant:?} row {i} class {c}"
                    );
                }
            }
        }
    }

    #[test]
    fn sgc_depth_zero_is_classifier_on_projected_input() {
        let g = path2();
        let cfg = ModelConfig::new(Arch::Sgc, Variant::Acm, 0, 0, 3);
        let model = Model::new(cfg, 2, 11).unwrap();
        let x = Mat::from_rows(&[vec![3.0, 4.0], vec![0.0, 2.0]]);
        let logits = model.logits(&g, &x).unwrap();
        let m = ManifoldSpec::unit(2);
        let z = m.push_forward_rows(&m.project_rows_or_center(&x)).unwrap();
        let expect = z.matmul(&model.params()[0]);
        assert!(logits.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn head_forward_matches_full_forward_for_sgc() {
        let g = Arc::new(Graph::build(&[(0, 1), (1, 2)], 3).unwrap());
        let x = Mat::from_fn(3, 4, |i, j| (i as f64 - 1.0) * 0.4 + j as f64 * 0.1);
        for variant in [Variant::Vanilla, Variant::Acm] {
            let cfg = ModelConfig::new(Arch::Sgc, variant, 3, 0, 2);
            let model = Model::new(cfg, 4, 21).unwrap();
            let full = model.logits(&g, &x).unwrap();
            let z = model.fixed_prefix(&g, &x).unwrap().unwrap();
            let mut tape = Tape::new();
            let head = model.head_forward(&mut tape, &z, false, 0).unwrap();
            assert!(tape.value(head.logits).max_abs_diff(&full) < 1e-12, "{variant:?}");
        }
    }

    #[test]
    fn acm_star_starts_at_unit_manifold() {
        let cfg = ModelConfig::new(Arch::Gcn, Variant::AcmStar, 2, 3, 2);
        let model = Model::new(cfg, 5, 1).unwrap();
        let m = model.manifold_for_dim(5).unwrap();
        for &u in m.u_diag() {
            assert!((u - 1.0).abs() < 1e-12);
        }
        let mh = model.manifold_for_dim(3).unwrap();
        assert_eq!(mh.dim(), 3);
    }

    #[test]
    fn gat_attention_matrix_is_row_stochastic() {
        let g = Graph::build(&[(0, 1), (1, 2), (0, 2), (2, 3)], 4).unwrap();
        let mut rng = crate::rng::Rng::new(2);
        let h = Mat::from_fn(4, 3, |_, _| rng.normal());
        let w = glorot_init(3, 3, 5);
        let a = glorot_init(1, 6, 6);
        let att = gat_attention(&g, &h, &w, &a, 0.2).unwrap();
        for i in 0..4 {
            let sum: f64 = att.row(i).map(|(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (j, w) in att.row(i) {
                assert!(w > 0.0 && w < 1.0);
                assert!(g.closed_neighbors(i).contains(&j));
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::new(Arch::Gcn, Variant::Vanilla, 0, 4, 2);
        assert!(cfg.validate().is_err());
        cfg.n_layers = 1;
        assert!(cfg.validate().is_ok());
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout_p = 0.0;
        cfg.variant = Variant::AcmStar;
        cfg.hyperplane_b = 0.5;
        assert!(cfg.validate().is_err());
    }
}
