//! Dataset files, synthetic graphs, and the missing-feature transform.
//!
//! On-disk layout of a dataset directory:
//!
//! * `edges.tsv` — one undirected edge per line, two 0-based integers
//!   separated by a tab, each edge listed once, LF line endings;
//! * `features.csv` — row `i` holds the comma-separated features of node `i`,
//!   no header;
//! * `labels.csv` — one integer class per line;
//! * `splits.json` — `{"train": [...], "val": [...], "test": [...]}`.
//!
//! Floats are written with 17 significant digits so a write/load round trip
//! reproduces every value bit-exactly.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::mat::Mat;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: parse error: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("node {0} appears in more than one split")]
    SplitOverlap(usize),
    #[error("label {0} out of range")]
    LabelOutOfRange(i64),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("{n} nodes not divisible into {blocks} blocks")]
    IndivisibleBlocks { n: usize, blocks: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// A transductive node-classification dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Mat,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&c| c + 1)
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }
}

fn read_lines(dir: &Path, name: &str) -> Result<Vec<String>, DataError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(DataError::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|source| DataError::Io { path, source })?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let dir = dir.as_ref();

    let feature_lines = read_lines(dir, "features.csv")?;
    let n = feature_lines.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (lineno, line) in feature_lines.iter().enumerate() {
        let row: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| DataError::Parse {
            file: "features.csv".into(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(DataError::ShapeMismatch(format!(
                    "features.csv row {} has {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let features = Mat::from_rows(&rows);

    let label_lines = read_lines(dir, "labels.csv")?;
    if label_lines.len() != n {
        return Err(DataError::ShapeMismatch(format!(
            "labels.csv has {} rows, features.csv has {n}",
            label_lines.len()
        )));
    }
    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in label_lines.iter().enumerate() {
        let v: i64 = line.trim().parse().map_err(|e: std::num::ParseIntError| DataError::Parse {
            file: "labels.csv".into(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if v < 0 {
            return Err(DataError::LabelOutOfRange(v));
        }
        labels.push(v as usize);
    }

    let edge_lines = read_lines(dir, "edges.tsv")?;
    let mut edges = Vec::with_capacity(edge_lines.len());
    for (lineno, line) in edge_lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let parse = |t: Option<&str>, lineno: usize| -> Result<usize, DataError> {
            t.ok_or_else(|| DataError::Parse {
                file: "edges.tsv".into(),
                line: lineno + 1,
                msg: "expected two tab-separated endpoints".into(),
            })?
            .trim()
            .parse::<usize>()
            .map_err(|e| DataError::Parse {
                file: "edges.tsv".into(),
                line: lineno + 1,
                msg: e.to_string(),
            })
        };
        let u = parse(it.next(), lineno)?;
        let v = parse(it.next(), lineno)?;
        edges.push((u, v));
    }
    let graph = Graph::build(&edges, n)?;

    let split_path = dir.join("splits.json");
    if !split_path.exists() {
        return Err(DataError::MissingFile(split_path));
    }
    let text = std::fs::read_to_string(&split_path).map_err(|source| DataError::Io {
        path: split_path.clone(),
        source,
    })?;
    let split: Split = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        file: "splits.json".into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    validate_split(&split, n)?;

    Ok(Dataset { graph, features, labels, split })
}

fn validate_split(split: &Split, n: usize) -> Result<(), DataError> {
    let mut seen = vec![false; n];
    for part in [&split.train, &split.val, &split.test] {
        for &i in part {
            if i >= n {
                return Err(DataError::ShapeMismatch(format!(
                    "split index {i} out of range for {n} nodes"
                )));
            }
            if seen[i] {
                return Err(DataError::SplitOverlap(i));
            }
            seen[i] = true;
        }
    }
    Ok(())
}

/// Write a dataset directory (inverse of [`load_dataset`]).
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.into(), source })?;
    let write = |name: &str, content: String| -> Result<(), DataError> {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path)
            .map_err(|source| DataError::Io { path: path.clone(), source })?;
        f.write_all(content.as_bytes())
            .map_err(|source| DataError::Io { path, source })
    };

    let mut edges = String::new();
    for (u, v) in ds.graph.edge_list() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write("edges.tsv", edges)?;

    let mut feats = String::new();
    for i in 0..ds.features.rows() {
        let row: Vec<String> = ds.features.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write("features.csv", feats)?;

    let mut labels = String::new();
    for &l in &ds.labels {
        labels.push_str(&format!("{l}\n"));
    }
    write("labels.csv", labels)?;

    let split_json = serde_json::to_string_pretty(&ds.split).expect("split serializes");
    write("splits.json", split_json + "\n")?;
    Ok(())
}

/// Parameters of the planted-partition generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub n: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub sigma: f64,
}

/// Stochastic block model with Gaussian features around per-block unit-norm
/// means; labels are block ids. The split takes up to 20 train and 30
/// validation nodes per class (scaled down for tiny classes), rest test.
pub fn synth_sbm(params: &SbmParams, seed: u64) -> Result<Dataset, DataError> {
    let SbmParams { n, n_blocks, p_in, p_out, feat_dim, sigma } = *params;
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(DataError::InvalidProbability(p));
        }
    }
    if n_blocks == 0 || n % n_blocks != 0 {
        return Err(DataError::IndivisibleBlocks { n, blocks: n_blocks });
    }
    let block_size = n / n_blocks;
    let mut rng = Rng::new(seed);
    let labels: Vec<usize> = (0..n).map(|i| i / block_size).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.uniform() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::build(&edges, n)?;

    let mut means = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let raw: Vec<f64> = (0..feat_dim).map(|_| rng.normal()).collect();
        let nrm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        means.push(raw.into_iter().map(|v| v / nrm).collect::<Vec<f64>>());
    }
    let mut features = Mat::zeros(n, feat_dim);
    for i in 0..n {
        let mean = &means[labels[i]];
        let row = features.row_mut(i);
        for (k, m) in mean.iter().enumerate() {
            row[k] = m + sigma * rng.normal();
        }
    }

    let mut split = Split::default();
    for b in 0..n_blocks {
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == b).collect();
        rng.shuffle(&mut idx);
        let c = idx.len();
        let n_train = (c / 4).clamp(1, 20);
        let rest = c - n_train;
        let n_val = (rest / 2).min(30).max(usize::from(rest > 0));
        split.train.extend(&idx[..n_train]);
        split.val.extend(&idx[n_train..n_train + n_val]);
        split.test.extend(&idx[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();

    Ok(Dataset { graph, features, labels, split })
}

/// The missing-feature protocol: validation and test rows zeroed, training
/// rows untouched. Idempotent.
pub fn apply_missing_features(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for part in [&ds.split.val, &ds.split.test] {
        for &i in part {
            out.features.row_mut(i).fill(0.0);
        }
    }
    out
}

/// Newman modularity of a node partition (used as a sanity check on the
/// generator's planted structure).
pub fn modularity(graph: &Graph, labels: &[usize]) -> f64 {
    let m2: f64 = graph.degrees().iter().map(|&d| d as f64).sum();
    if m2 == 0.0 {
        return 0.0;
    }
    let n_classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut within = vec![0.0f64; n_classes];
    let mut deg_sum = vec![0.0f64; n_classes];
    for u in 0..graph.n_nodes() {
        deg_sum[labels[u]] += graph.degree(u) as f64;
        for &v in graph.neighbors(u) {
            if labels[u] == labels[v] {
                within[labels[u]] += 1.0; // counts both directions
            }
        }
    }
    (0..n_classes)
        .map(|c| within[c] / m2 - (deg_sum[c] / m2) * (deg_sum[c] / m2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Dataset {
        Dataset {
            graph: Graph::build(&[(0, 1), (1, 2), (0, 2)], 3).unwrap(),
            features: Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]),
            labels: vec![0, 1, 0],
            split: Split { train: vec![0], val: vec![1], test: vec![2] },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params = SbmParams { n: 24, n_blocks: 2, p_in: 0.4, p_out: 0.1, feat_dim: 5, sigma: 1.3 };
        let ds = synth_sbm(&params, 7).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.graph, ds.graph);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.split, ds.split);
        assert_eq!(back.features, ds.features, "features must round-trip bit-exactly");
    }

    #[test]
    fn fixture_loads_with_expected_degrees() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&fixture(), dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.graph.degrees(), &[2, 2, 2]);
        assert_eq!(ds.n_classes(), 2);
    }

    #[test]
    fn shape_mismatch_on_missing_feature_row() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&fixture(), dir.path()).unwrap();
        std::fs::write(dir.path().join("features.csv"), "1.0,2.0\n3.0,4.0\n").unwrap();
        match load_dataset(dir.path()) {
            Err(DataError::ShapeMismatch(_)) => {}
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn split_overlap_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&fixture(), dir.path()).unwrap();
        std::fs::write(
            dir.path().join("splits.json"),
            r#"{"train": [0, 1], "val": [], "test": [1]}"#,
        )
        .unwrap();
        match load_dataset(dir.path()) {
            Err(DataError::SplitOverlap(1)) => {}
            other => panic!("expected SplitOverlap(1), got {other:?}"),
        }
    }

    #[test]
    fn missing_file_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&fixture(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("labels.csv")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::MissingFile(_))));
    }

    #[test]
    fn negative_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&fixture(), dir.path()).unwrap();
        std::fs::write(dir.path().join("labels.csv"), "0\n-1\n0\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::LabelOutOfRange(-1))));
    }

    #[test]
    fn sbm_extremes_form_cliques() {
        let params = SbmParams { n: 8, n_blocks: 2, p_in: 1.0, p_out: 0.0, feat_dim: 3, sigma: 0.5 };
        let ds = synth_sbm(&params, 1).unwrap();
        for i in 0..8 {
            assert_eq!(ds.graph.degree(i), 3, "two 4-cliques expected");
            for &j in ds.graph.neighbors(i) {
                assert_eq!(ds.labels[i], ds.labels[j]);
            }
        }
    }

    #[test]
    fn sbm_deterministic_per_seed() {
        let params = SbmParams { n: 30, n_blocks: 3, p_in: 0.3, p_out: 0.05, feat_dim: 4, sigma: 1.0 };
        let a = synth_sbm(&params, 9).unwrap();
        let b = synth_sbm(&params, 9).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn sbm_cross_edge_count_within_binomial_bound() {
        let params = SbmParams { n: 200, n_blocks: 2, p_in: 0.1, p_out: 0.01, feat_dim: 8, sigma: 1.0 };
        let ds = synth_sbm(&params, 42).unwrap();
        let cross = ds
            .graph
            .edge_list()
            .iter()
            .filter(|&&(u, v)| ds.labels[u] != ds.labels[v])
            .count() as f64;
        // 100*100 Bernoulli(0.01) trials: mean 100, sigma ~= 9.95
        assert!((cross - 100.0).abs() < 3.0 * 9.95, "cross edges {cross}");
    }

    #[test]
    fn sbm_split_convention_at_acceptance_scale() {
        let params = SbmParams { n: 200, n_blocks: 2, p_in: 0.1, p_out: 0.01, feat_dim: 8, sigma: 1.0 };
        let ds = synth_sbm(&params, 3).unwrap();
        assert_eq!(ds.split.train.len(), 40);
        assert_eq!(ds.split.val.len(), 60);
        assert_eq!(ds.split.test.len(), 100);
    }

    #[test]
    fn sbm_rejects_bad_params() {
        let mut params = SbmParams { n: 10, n_blocks: 3, p_in: 0.5, p_out: 0.1, feat_dim: 2, sigma: 1.0 };
        assert!(matches!(synth_sbm(&params, 0), Err(DataError::IndivisibleBlocks { .. })));
        params.n_blocks = 2;
        params.p_in = 1.5;
        assert!(matches!(synth_sbm(&params, 0), Err(DataError::InvalidProbability(_))));
    }

    #[test]
    fn missing_features_zeroes_val_and_test_only() {
        let ds = fixture();
        let out = apply_missing_features(&ds);
        assert_eq!(out.features.row(0), ds.features.row(0), "train row untouched");
        assert_eq!(out.features.row(1), &[0.0, 0.0]);
        assert_eq!(out.features.row(2), &[0.0, 0.0]);
        let twice = apply_missing_features(&out);
        assert_eq!(twice.features, out.features, "idempotent");
    }

    #[test]
    fn planted_partition_has_positive_modularity_on_most_seeds() {
        let params = SbmParams { n: 60, n_blocks: 2, p_in: 0.2, p_out: 0.02, feat_dim: 3, sigma: 1.0 };
        let positive = (0..20)
            .filter(|&s| {
                let ds = synth_sbm(&params, s).unwrap();
                modularity(&ds.graph, &ds.labels) > 0.0
            })
            .count();
        assert!(positive >= 19, "positive modularity on {positive}/20 seeds");
    }
}
