//! Graph storage and the normalized aggregation operators.
//!
//! Graphs are undirected, stored in compressed sparse row form with sorted
//! neighbor lists. Aggregation operators always work on the augmented
//! adjacency (self-loops added implicitly, never stored in the graph), so an
//! operator row for node `i` covers exactly the closed neighborhood of `i`.
//!
//! Three operator families are supported:
//!
//! * `RowNorm`:  `L = (1-lambda) I + lambda D̃^{-1} Ã` (row-stochastic),
//! * `SymNorm`:  `L = (1-lambda) I + lambda D̃^{-1/2} Ã D̃^{-1/2}`,
//! * `Attention`: row-stochastic weights supplied per forward pass.

use crate::mat::Mat;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) out of range for {2} nodes")]
    IndexOutOfRange(usize, usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("self-loop ({0}, {0}) in input; self-loops are implicit")]
    SelfLoopInInput(usize),
    #[error("lambda must lie in (0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("attention operators are built per forward pass, not by make_aggregator")]
    AttentionNotStatic,
    #[error("operator expects {0} rows, embedding has {1}")]
    ShapeMismatch(usize, usize),
    #[error("attention row {0} is not positive and normalized")]
    InvalidAttentionRow(usize),
}

/// Immutable undirected graph in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    row_offsets: Vec<usize>,
    neighbors: Vec<usize>,
    degrees: Vec<usize>,
}

impl Graph {
    /// Build from an undirected edge list (each edge listed once, no
    /// self-loops). Both directions are stored.
    pub fn build(edges: &[(usize, usize)], n_nodes: usize) -> Result<Graph, GraphError> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for &(u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(GraphError::IndexOutOfRange(u, v, n_nodes));
            }
            if u == v {
                return Err(GraphError::SelfLoopInInput(u));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_offsets = Vec::with_capacity(n_nodes + 1);
        let mut neighbors = Vec::with_capacity(2 * edges.len());
        let mut degrees = Vec::with_capacity(n_nodes);
        row_offsets.push(0);
        for (u, mut list) in adj.into_iter().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(GraphError::DuplicateEdge(u, w[0]));
            }
            degrees.push(list.len());
            neighbors.extend_from_slice(&list);
            row_offsets.push(neighbors.len());
        }
        Ok(Graph { n_nodes, row_offsets, neighbors, degrees })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn degree(&self, u: usize) -> usize {
        self.degrees[u]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Open neighborhood, sorted ascending.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.row_offsets[u]..self.row_offsets[u + 1]]
    }

    /// Augmented degree `d̃(u) = deg(u) + 1`.
    pub fn augmented_degree(&self, u: usize) -> f64 {
        (self.degrees[u] + 1) as f64
    }

    /// Closed neighborhood `Ñ(u) = N(u) ∪ {u}`, sorted ascending.
    pub fn closed_neighbors(&self, u: usize) -> Vec<usize> {
        let nb = self.neighbors(u);
        let mut out = Vec::with_capacity(nb.len() + 1);
        let pos = nb.partition_point(|&v| v < u);
        out.extend_from_slice(&nb[..pos]);
        out.push(u);
        out.extend_from_slice(&nb[pos..]);
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.n_nodes == 0 {
            return true;
        }
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n_nodes
    }

    /// Component id per node (0-based, in discovery order).
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n_nodes];
        let mut next = 0;
        for start in 0..self.n_nodes {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = next;
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Edge list with each undirected edge once (u < v).
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.n_nodes {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregatorKind {
    RowNorm,
    SymNorm,
    Attention,
}

/// Sparse aggregation operator over node embeddings. The sparsity pattern is
/// the augmented adjacency (closed neighborhoods), values depend on the kind.
#[derive(Clone, Debug)]
pub struct AggregatorMatrix {
    kind: AggregatorKind,
    lambda: f64,
    n: usize,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl AggregatorMatrix {
    /// Build a `RowNorm` or `SymNorm` operator for the graph.
    pub fn new(g: &Graph, kind: AggregatorKind, lambda: f64) -> Result<AggregatorMatrix, GraphError> {
        match kind {
            AggregatorKind::Attention => return Err(GraphError::AttentionNotStatic),
            AggregatorKind::RowNorm | AggregatorKind::SymNorm => {
                if !(lambda > 0.0 && lambda <= 1.0) {
                    return Err(GraphError::LambdaOutOfRange(lambda));
                }
            }
        }
        let (row_offsets, cols) = augmented_pattern(g);
        let mut values = vec![0.0; cols.len()];
        for i in 0..g.n_nodes() {
            let di = g.augmented_degree(i);
            for k in row_offsets[i]..row_offsets[i + 1] {
                let j = cols[k];
                let base = match kind {
                    AggregatorKind::RowNorm => lambda / di,
                    AggregatorKind::SymNorm => lambda / (di * g.augmented_degree(j)).sqrt(),
                    AggregatorKind::Attention => unreachable!(),
                };
                values[k] = base + if i == j { 1.0 - lambda } else { 0.0 };
            }
        }
        Ok(AggregatorMatrix { kind, lambda, n: g.n_nodes(), row_offsets, cols, values })
    }

    /// Wrap per-edge attention weights (aligned with the augmented pattern of
    /// `g`, row-major, each row sorted by column). Rows must be positive and
    /// sum to 1.
    pub fn from_attention(g: &Graph, weights: Vec<f64>) -> Result<AggregatorMatrix, GraphError> {
        let (row_offsets, cols) = augmented_pattern(g);
        if weights.len() != cols.len() {
            return Err(GraphError::ShapeMismatch(cols.len(), weights.len()));
        }
        for i in 0..g.n_nodes() {
            let row = &weights[row_offsets[i]..row_offsets[i + 1]];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| w <= 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(GraphError::InvalidAttentionRow(i));
            }
        }
        Ok(AggregatorMatrix {
            kind: AggregatorKind::Attention,
            lambda: 1.0,
            n: g.n_nodes(),
            row_offsets,
            cols,
            values: weights,
        })
    }

    /// The identity operator (the lambda -> 0 limit), useful as a
    /// non-contracted control in the contraction lab.
    pub fn identity(n: usize) -> AggregatorMatrix {
        AggregatorMatrix {
            kind: AggregatorKind::RowNorm,
            lambda: 0.0,
            n,
            row_offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn kind(&self) -> AggregatorKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `(column, value)` pairs of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// Sparse-matrix times dense-matrix product `L * H`.
    pub fn spmm(&self, h: &Mat) -> Result<Mat, GraphError> {
        if h.rows() != self.n {
            return Err(GraphError::ShapeMismatch(self.n, h.rows()));
        }
        let d = h.cols();
        let mut out = Mat::zeros(self.n, d);
        for i in 0..self.n {
            let orow = out.row_mut(i);
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let w = self.values[k];
                let hrow = h.row(self.cols[k]);
                for (o, &x) in orow.iter_mut().zip(hrow) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    /// `L^T * H`, used by reverse-mode differentiation.
    pub fn spmm_transpose(&self, h: &Mat) -> Result<Mat, GraphError> {
        if h.rows() != self.n {
            return Err(GraphError::ShapeMismatch(self.n, h.rows()));
        }
        let d = h.cols();
        let mut out = Mat::zeros(self.n, d);
        for i in 0..self.n {
            let hrow: Vec<f64> = h.row(i).to_vec();
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let w = self.values[k];
                let orow = out.row_mut(self.cols[k]);
                for (o, &x) in orow.iter_mut().zip(&hrow) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                m.set(i, j, w);
            }
        }
        m
    }
}

fn augmented_pattern(g: &Graph) -> (Vec<usize>, Vec<usize>) {
    let n = g.n_nodes();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    row_offsets.push(0);
    for u in 0..n {
        cols.extend(g.closed_neighbors(u));
        row_offsets.push(cols.len());
    }
    (row_offsets, cols)
}
