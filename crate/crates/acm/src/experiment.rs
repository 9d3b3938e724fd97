//! Configuration-driven training, sweeps, and diagnostics.
//!
//! A [`RunConfig`] (one JSON document) names a dataset (directory or
//! synthetic spec), a model, and the training protocol: full-batch Adam,
//! early stopping on validation accuracy, test accuracy reported at the
//! best-validation checkpoint, several repeats with derived seeds.
//!
//! Output files per run directory:
//!
//! * `summary.json` — config echo, per-repeat results, aggregates, and final
//!   embedding dispersion;
//! * `repeat-<r>/metrics.csv` — `epoch,split,loss,accuracy` per epoch;
//! * `sweep.csv` / `sweep.svg` — `depth,repeat,seed,best_val_acc,test_acc`
//!   rows and an accuracy-vs-depth chart (sweeps only);
//! * `dispersion.csv` — `layer,mean_pairwise,max_pairwise` (diagnose only);
//! * `trajectory.csv` / `report.json` — contraction-lab outputs
//!   (check-theory only).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Adam;
use crate::contraction::{
    check_contracted, check_equiv_contracted_sym, collapse_check, iterate, random_connected_graph,
    CollapseOutcome, LabError, Metric, Trajectory,
};
use crate::data::{
    apply_missing_features, load_dataset, synth_sbm, DataError, Dataset, SbmParams,
};
use crate::graph::{AggregatorKind, AggregatorMatrix, Graph};
use crate::manifold::ManifoldSpec;
use crate::mat::Mat;
use crate::models::{accuracy, classify, Arch, Model, ModelConfig, ModelError, Variant};
use crate::rng::{mix, Rng};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error("non-finite loss at epoch {epoch} of repeat {repeat}")]
    NonFiniteLoss { epoch: usize, repeat: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit code contract: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Model(ModelError::InvalidConfig(_)) => 2,
            ExperimentError::Data(_) | ExperimentError::Io { .. } => 3,
            _ => 4,
        }
    }
}

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ExperimentError {
    let path = path.into();
    move |source| ExperimentError::Io { path, source }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    Path { path: PathBuf },
    Synth {
        #[serde(flatten)]
        params: SbmParams,
        seed: u64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub variant: Variant,
    pub n_layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_alpha")]
    pub leaky_relu_alpha: f64,
    #[serde(default)]
    pub hyperplane_b: f64,
}

fn default_hidden() -> usize {
    16
}
fn default_dropout() -> f64 {
    0.6
}
fn default_alpha() -> f64 {
    0.2
}

impl ModelSpec {
    pub fn to_model_config(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            variant: self.variant,
            n_layers: self.n_layers,
            hidden_dim: self.hidden_dim,
            n_classes,
            dropout_p: self.dropout_p,
            leaky_relu_alpha: self.leaky_relu_alpha,
            hyperplane_b: self.hyperplane_b,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSpec {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_lr() -> f64 {
    5e-3
}
fn default_wd() -> f64 {
    5e-4
}
fn default_epochs() -> usize {
    1000
}
fn default_patience() -> usize {
    100
}
fn default_seed() -> u64 {
    1
}
fn default_repeats() -> usize {
    5
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            lr: default_lr(),
            weight_decay: default_wd(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            seed: default_seed(),
            repeats: default_repeats(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Standard,
    MissingFeature,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sweep_layers: Vec<usize>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ExperimentError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.train.patience < 1 {
            return Err(ExperimentError::Config("patience must be >= 1".into()));
        }
        if self.train.repeats < 1 {
            return Err(ExperimentError::Config("repeats must be >= 1".into()));
        }
        if self.train.lr < 0.0 {
            return Err(ExperimentError::Config("lr must be >= 0".into()));
        }
        Ok(())
    }

    /// Load or synthesize the dataset and apply the scenario transform.
    pub fn resolve_dataset(&self) -> Result<Dataset, ExperimentError> {
        let ds = match &self.dataset {
            DatasetSource::Path { path } => load_dataset(path)?,
            DatasetSource::Synth { params, seed } => synth_sbm(params, *seed)?,
        };
        Ok(match self.scenario {
            Scenario::Standard => ds,
            Scenario::MissingFeature => apply_missing_features(&ds),
        })
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub best_val_acc: f64,
    pub test_acc_at_best_val: f64,
    pub epochs_run: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

pub struct TrainOutcome {
    pub result: RepeatResult,
    pub model: Model,
    pub metrics: Vec<EpochRecord>,
}

fn eval_metrics(logits: &Mat, labels: &[usize], mask: &[usize]) -> (f64, f64) {
    if mask.is_empty() {
        return (0.0, 0.0);
    }
    let mut loss = 0.0;
    for &i in mask {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        loss -= row[labels[i]] - lse;
    }
    let (_, preds) = classify(logits);
    (loss / mask.len() as f64, accuracy(&preds, labels, mask))
}

/// Train one model instance full-batch with early stopping on validation
/// accuracy; the reported test accuracy is taken at the best-val epoch.
pub fn train_single(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    train: &TrainSpec,
    repeat: usize,
) -> Result<TrainOutcome, ExperimentError> {
    let graph = Arc::new(ds.graph.clone());
    let seed = mix(train.seed, repeat as u64);
    let mut model = Model::new(model_cfg.clone(), ds.feat_dim(), seed)?;
    let mut adam = Adam::new(train.lr, train.weight_decay);
    let labels = Arc::new(ds.labels.clone());
    let train_mask = Arc::new(ds.split.train.clone());

    // SGC with a fixed manifold has a parameter-free aggregation stack;
    // precompute it once and train only the classifier head.
    let prefix = model.fixed_prefix(&graph, &ds.features)?;

    let mut best_val = f64::NEG_INFINITY;
    let mut best_test = 0.0;
    let mut best_epoch = 0;
    let mut metrics = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=train.max_epochs {
        epochs_run = epoch;
        let dropout_seed = mix(seed, epoch as u64);

        let mut tape = crate::autodiff::Tape::new();
        let fwd = match &prefix {
            Some(z) => model.head_forward(&mut tape, z, true, dropout_seed)?,
            None => model.forward(&mut tape, &graph, &ds.features, true, dropout_seed)?,
        };
        let loss_id = model.loss(&mut tape, fwd.logits, &labels, &train_mask)?;
        let loss = tape.value(loss_id).get(0, 0);
        if !loss.is_finite() {
            return Err(ExperimentError::NonFiniteLoss { epoch, repeat });
        }
        tape.backward(loss_id).map_err(ModelError::from)?;
        let grads: Vec<Mat> = fwd
            .param_ids
            .iter()
            .zip(model.params())
            .map(|(&id, p)| match tape.grad(id) {
                Some(g) => g.clone(),
                None => Mat::zeros(p.rows(), p.cols()),
            })
            .collect();
        adam.step(model.params_mut(), &grads).map_err(ModelError::from)?;

        // Evaluation pass without dropout.
        let logits = match &prefix {
            Some(z) => {
                let mut t = crate::autodiff::Tape::new();
                let f = model.head_forward(&mut t, z, false, 0)?;
                t.value(f.logits).clone()
            }
            None => model.logits(&graph, &ds.features)?,
        };
        let (train_loss, train_acc) = eval_metrics(&logits, &ds.labels, &ds.split.train);
        let (val_loss, val_acc) = eval_metrics(&logits, &ds.labels, &ds.split.val);
        let (test_loss, test_acc) = eval_metrics(&logits, &ds.labels, &ds.split.test);
        metrics.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            test_loss,
            test_acc,
        });

        if val_acc > best_val {
            best_val = val_acc;
            best_test = test_acc;
            best_epoch = epoch;
        }
        if epoch - best_epoch >= train.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        result: RepeatResult {
            repeat,
            seed,
            best_val_acc: best_val.max(0.0),
            test_acc_at_best_val: best_test,
            epochs_run,
        },
        model,
        metrics,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DispersionSummary {
    pub metric: String,
    pub final_mean_pairwise: f64,
    pub final_max_pairwise: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub n_classes: usize,
    pub repeats: Vec<RepeatResult>,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub mean_best_val_acc: f64,
    pub dispersion: DispersionSummary,
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs.iter().copied());
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Dispersion of the final-layer embeddings of a trained model: Euclidean
/// for the vanilla variant, geodesic on the (possibly trained) manifold
/// otherwise.
pub fn final_dispersion(model: &Model, graph: &Arc<Graph>, x: &Mat) -> Result<(String, f64, f64), ExperimentError> {
    let layers = model.layer_embeddings(graph, x)?;
    let last = layers.last().expect("at least the input layer");
    match model.manifold_for_dim(last.cols()) {
        Some(m) => {
            let (max, mean) = m.pairwise_stats(last).map_err(LabError::from)?;
            Ok(("manifold".into(), mean, max))
        }
        None => {
            let (max, mean) = crate::manifold::euclidean_pairwise_stats(last);
            Ok(("euclidean".into(), mean, max))
        }
    }
}

/// Full `train` command: all repeats, metrics files, summary.
pub fn run_train(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    let ds = cfg.resolve_dataset()?;
    let model_cfg = cfg.model.to_model_config(ds.n_classes());
    let graph = Arc::new(ds.graph.clone());

    let mut repeats = Vec::new();
    let mut disp_mean = Vec::new();
    let mut disp_max = Vec::new();
    let mut metric_name = String::from("euclidean");
    for r in 0..cfg.train.repeats {
        let outcome = train_single(&ds, &model_cfg, &cfg.train, r)?;
        let rep_dir = out_dir.join(format!("repeat-{r}"));
        std::fs::create_dir_all(&rep_dir).map_err(io_err(&rep_dir))?;
        write_metrics_csv(&rep_dir.join("metrics.csv"), &outcome.metrics)?;
        let (name, dmean, dmax) = final_dispersion(&outcome.model, &graph, &ds.features)?;
        metric_name = name;
        disp_mean.push(dmean);
        disp_max.push(dmax);
        repeats.push(outcome.result);
    }

    let tests: Vec<f64> = repeats.iter().map(|r| r.test_acc_at_best_val).collect();
    let vals: Vec<f64> = repeats.iter().map(|r| r.best_val_acc).collect();
    let summary = RunSummary {
        config: cfg.clone(),
        n_classes: ds.n_classes(),
        mean_test_acc: mean(tests.iter().copied()),
        std_test_acc: sample_std(&tests),
        mean_best_val_acc: mean(vals.iter().copied()),
        dispersion: DispersionSummary {
            metric: metric_name,
            final_mean_pairwise: mean(disp_mean),
            final_max_pairwise: mean(disp_max),
        },
        repeats,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub depth: usize,
    pub repeat: usize,
    pub seed: u64,
    pub best_val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config: RunConfig,
    pub layers: Vec<usize>,
    pub rows: Vec<SweepRow>,
    pub mean_test_acc_per_depth: Vec<(usize, f64)>,
}

/// Depth sweep: one full training run per depth per repeat.
pub fn run_sweep(cfg: &RunConfig, layers: &[usize], out_dir: &Path) -> Result<SweepSummary, ExperimentError> {
    cfg.validate()?;
    if layers.is_empty() {
        return Err(ExperimentError::Config("sweep needs a non-empty layer list".into()));
    }
    let ds = cfg.resolve_dataset()?;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for &depth in layers {
        let mut spec = cfg.model.clone();
        spec.n_layers = depth;
        let model_cfg = spec.to_model_config(ds.n_classes());
        let mut accs = Vec::new();
        for r in 0..cfg.train.repeats {
            let outcome = train_single(&ds, &model_cfg, &cfg.train, r)?;
            rows.push(SweepRow {
                depth,
                repeat: r,
                seed: outcome.result.seed,
                best_val_acc: outcome.result.best_val_acc,
                test_acc: outcome.result.test_acc_at_best_val,
            });
            accs.push(outcome.result.test_acc_at_best_val);
        }
        means.push((depth, mean(accs)));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_sweep_csv(&out_dir.join("sweep.csv"), &rows)?;
    write_sweep_svg(&out_dir.join("sweep.svg"), &means)?;
    let summary = SweepSummary {
        config: cfg.clone(),
        layers: layers.to_vec(),
        rows,
        mean_test_acc_per_depth: means,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Diagnose
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub config: RunConfig,
    pub trained: bool,
    pub metric: String,
    /// `(layer, mean_pairwise, max_pairwise)` per aggregation step.
    pub per_layer: Vec<(usize, f64, f64)>,
}

/// Per-layer dispersion of a freshly initialized or trained model.
pub fn run_diagnose(cfg: &RunConfig, trained: bool, out_dir: &Path) -> Result<DiagnoseReport, ExperimentError> {
    cfg.validate()?;
    let ds = cfg.resolve_dataset()?;
    let model_cfg = cfg.model.to_model_config(ds.n_classes());
    let graph = Arc::new(ds.graph.clone());
    let model = if trained {
        train_single(&ds, &model_cfg, &cfg.train, 0)?.model
    } else {
        Model::new(model_cfg, ds.feat_dim(), mix(cfg.train.seed, 0))?
    };
    let layers = model.layer_embeddings(&graph, &ds.features)?;
    let mut per_layer = Vec::new();
    for (k, h) in layers.iter().enumerate() {
        let (mean_pw, max_pw) = match model.manifold_for_dim(h.cols()) {
            Some(m) => {
                let (max, mean) = m.pairwise_stats(h).map_err(LabError::from)?;
                (mean, max)
            }
            None => {
                let (max, mean) = crate::manifold::euclidean_pairwise_stats(h);
                (mean, max)
            }
        };
        per_layer.push((k, mean_pw, max_pw));
    }
    let metric = if model.manifold_for_dim(ds.feat_dim()).is_some() {
        "manifold".to_string()
    } else {
        "euclidean".to_string()
    };
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut csv = String::from("layer,mean_pairwise,max_pairwise\n");
    for &(k, mean_pw, max_pw) in &per_layer {
        csv.push_str(&format!("{k},{mean_pw:.17e},{max_pw:.17e}\n"));
    }
    let path = out_dir.join("dispersion.csv");
    std::fs::write(&path, csv).map_err(io_err(path))?;
    let report = DiagnoseReport { config: cfg.clone(), trained, metric, per_layer };
    write_json(&out_dir.join("summary.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Theory checks
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionCheckRecord {
    pub name: String,
    pub verdict: String,
    pub condition1_violations: usize,
    pub condition2_violations: usize,
    pub equality_without_identical: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub contraction_checks: Vec<ContractionCheckRecord>,
    pub conjugation_max_deviation: f64,
    pub collapse_steps: Option<usize>,
    pub fixed_point_max_deviation_from_pi: f64,
}

/// Desk-scale battery over the contraction theory; writes `report.json` and
/// the fixed-point `trajectory.csv`.
pub fn run_theory_checks(out_dir: &Path, seed: u64) -> Result<TheoryReport, ExperimentError> {
    let mut rng = Rng::new(seed);
    let mut checks = Vec::new();

    let record = |name: &str, r: &crate::contraction::ContractionReport| ContractionCheckRecord {
        name: name.into(),
        verdict: r.verdict.as_str().into(),
        condition1_violations: r.condition1_violations,
        condition2_violations: r.condition2_violations,
        equality_without_identical: r.equality_without_identical,
        samples: r.samples,
    };

    for lambda in [0.3, 1.0] {
        let g = random_connected_graph(12, 8, &mut rng);
        let op = AggregatorMatrix::new(&g, AggregatorKind::RowNorm, lambda)?;
        let rep = check_contracted(
            |h| Ok(op.spmm(h)?),
            &g,
            &Metric::Euclidean,
            500,
            1e-12,
            mix(seed, lambda.to_bits()),
        );
        checks.push(record(&format!("row_norm_lambda_{lambda}"), &rep));
    }
    {
        let g = random_connected_graph(10, 6, &mut rng);
        let h_ref = Mat::from_fn(10, 4, |_, _| rng.normal());
        let w = crate::autodiff::glorot_init(4, 4, mix(seed, 101));
        let a = crate::autodiff::glorot_init(1, 8, mix(seed, 102));
        let att = crate::models::gat_attention(&g, &h_ref, &w, &a, 0.2)?;
        let rep = check_contracted(
            |h| Ok(att.spmm(h)?),
            &g,
            &Metric::Euclidean,
            500,
            1e-12,
            mix(seed, 103),
        );
        checks.push(record("attention", &rep));
    }
    {
        let g = random_connected_graph(10, 6, &mut rng);
        let rep = check_contracted(
            |h| Ok(h.clone()),
            &g,
            &Metric::Euclidean,
            200,
            1e-12,
            mix(seed, 104),
        );
        checks.push(record("identity", &rep));
    }
    let fixed_point_dev;
    {
        let g = Graph::build(&[(0, 1), (1, 2), (2, 3), (3, 0)], 4)?;
        let m = ManifoldSpec::unit(2);
        let op = AggregatorMatrix::new(&g, AggregatorKind::RowNorm, 1.0)?;
        let mc = m.clone();
        let agg = move |h: &Mat| -> Result<Mat, LabError> { Ok(mc.project_rows(&op.spmm(h)?)?) };
        let rep = check_contracted(agg, &g, &Metric::Manifold(m.clone()), 200, 1e-12, mix(seed, 105));
        checks.push(record("acm_circle_4cycle", &rep));

        let h0 = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ]);
        let op2 = AggregatorMatrix::new(&g, AggregatorKind::RowNorm, 1.0)?;
        let mc2 = m.clone();
        let traj = iterate(
            move |h: &Mat| Ok(mc2.project_rows(&op2.spmm(h)?)?),
            &h0,
            1000,
            &Metric::Manifold(m),
        )?;
        fixed_point_dev = traj
            .step_stats
            .iter()
            .map(|s| (s.max_pairwise - std::f64::consts::PI).abs())
            .fold(0.0f64, f64::max);
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        write_trajectory_csv(&out_dir.join("trajectory.csv"), &traj)?;
    }

    let conjugation_max_deviation = {
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let g = random_connected_graph(30, 20, &mut rng);
            let h0 = Mat::from_fn(30, 4, |_, _| rng.normal());
            worst = worst.max(check_equiv_contracted_sym(&g, 1.0, &h0, 50)?);
        }
        worst
    };

    let collapse_steps = {
        let g = random_connected_graph(50, 25, &mut rng);
        let h0 = Mat::from_fn(50, 4, |_, _| rng.normal());
        match collapse_check(&g, AggregatorKind::RowNorm, 1.0, &h0, 1e-6, 10_000)? {
            CollapseOutcome::Collapsed(k) => Some(k),
            CollapseOutcome::NotCollapsed => None,
        }
    };

    let report = TheoryReport {
        seed,
        contraction_checks: checks,
        conjugation_max_deviation,
        collapse_steps,
        fixed_point_max_deviation_from_pi: fixed_point_dev,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| ExperimentError::Config(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_metrics_csv(path: &Path, metrics: &[EpochRecord]) -> Result<(), ExperimentError> {
    let mut csv = String::from("epoch,split,loss,accuracy\n");
    for m in metrics {
        csv.push_str(&format!("{},train,{:.17e},{:.17e}\n", m.epoch, m.train_loss, m.train_acc));
        csv.push_str(&format!("{},val,{:.17e},{:.17e}\n", m.epoch, m.val_loss, m.val_acc));
        csv.push_str(&format!("{},test,{:.17e},{:.17e}\n", m.epoch, m.test_loss, m.test_acc));
    }
    std::fs::write(path, csv).map_err(io_err(path))
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let mut csv = String::from("depth,repeat,seed,best_val_acc,test_acc\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{:.17e},{:.17e}\n",
            r.depth, r.repeat, r.seed, r.best_val_acc, r.test_acc
        ));
    }
    std::fs::write(path, csv).map_err(io_err(path))
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), ExperimentError> {
    let mut csv = String::from("step,max_pairwise,mean_pairwise,max_to_ref\n");
    for (step, s) in traj.step_stats.iter().enumerate() {
        csv.push_str(&format!(
            "{step},{:.17e},{:.17e},{:.17e}\n",
            s.max_pairwise, s.mean_pairwise, s.max_to_ref
        ));
    }
    std::fs::write(path, csv).map_err(io_err(path))
}

/// Minimal accuracy-vs-depth line chart. The CSV stays authoritative.
fn write_sweep_svg(path: &Path, means: &[(usize, f64)]) -> Result<(), ExperimentError> {
    let (w, h, ml, mb) = (640.0, 420.0, 60.0, 40.0);
    let plot_w = w - ml - 20.0;
    let plot_h = h - mb - 20.0;
    let max_depth = means.iter().map(|&(d, _)| d).max().unwrap_or(1).max(1) as f64;
    let to_x = |d: f64| ml + plot_w * d / max_depth;
    let to_y = |acc: f64| 20.0 + plot_h * (1.0 - acc);
    let mut pts = String::new();
    for &(d, acc) in means {
        pts.push_str(&format!("{:.2},{:.2} ", to_x(d as f64), to_y(acc)));
    }
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"black\"/>\n<line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        20.0 + plot_h,
        20.0 + plot_h,
        ml + plot_w,
        20.0 + plot_h
    ));
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{frac:.2}</text>\n",
            ml - 6.0,
            to_y(frac) + 4.0
        ));
    }
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        pts.trim_end()
    ));
    for &(d, acc) in means {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\"/>\n",
            to_x(d as f64),
            to_y(acc)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{d}</text>\n",
            to_x(d as f64),
            20.0 + plot_h + 16.0
        ));
    }
    svg.push_str("<text x=\"320\" y=\"415\" font-size=\"12\" text-anchor=\"middle\">layers</text>\n");
    svg.push_str("<text x=\"16\" y=\"220\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 220)\">test accuracy</text>\n");
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Self-check: validate output files against the documented schemas
// ---------------------------------------------------------------------------

/// Walk an output directory and validate every known file against its
/// schema. Returns the list of validated files.
pub fn self_check(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut validated = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(io_err(&d))?;
        for entry in entries {
            let entry = entry.map_err(io_err(&d))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let ok = match name {
                "metrics.csv" => validate_csv(&path, "epoch,split,loss,accuracy", 4)?,
                "sweep.csv" => validate_csv(&path, "depth,repeat,seed,best_val_acc,test_acc", 5)?,
                "trajectory.csv" => {
                    validate_csv(&path, "step,max_pairwise,mean_pairwise,max_to_ref", 4)?
                }
                "dispersion.csv" => validate_csv(&path, "layer,mean_pairwise,max_pairwise", 3)?,
                "summary.json" | "report.json" => {
                    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
                    serde_json::from_str::<serde_json::Value>(&text).map_err(|e| {
                        ExperimentError::Config(format!("{}: invalid json: {e}", path.display()))
                    })?;
                    true
                }
                _ => false,
            };
            if ok {
                validated.push(path);
            }
        }
    }
    Ok(validated)
}

fn validate_csv(path: &Path, header: &str, cols: usize) -> Result<bool, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let got = lines.next().unwrap_or("");
    if got != header {
        return Err(ExperimentError::Config(format!(
            "{}: expected header '{header}', got '{got}'",
            path.display()
        )));
    }
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let n = line.split(',').count();
        if n != cols {
            return Err(ExperimentError::Config(format!(
                "{}:{}: expected {cols} columns, got {n}",
                path.display(),
                i + 2
            )));
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sbm_config(arch: Arch, variant: Variant, n_layers: usize) -> RunConfig {
        RunConfig {
            dataset: DatasetSource::Synth {
                params: SbmParams {
                    n: 24,
                    n_blocks: 2,
                    p_in: 0.5,
                    p_out: 0.05,
                    feat_dim: 4,
                    sigma: 0.3,
                },
                seed: 5,
            },
            model: ModelSpec {
                arch,
                variant,
                n_layers,
                hidden_dim: 8,
                dropout_p: 0.2,
                leaky_relu_alpha: 0.2,
                hyperplane_b: 0.0,
            },
            train: TrainSpec { lr: 1e-2, weight_decay: 5e-4, max_epochs: 60, patience: 30, seed: 3, repeats: 2 },
            scenario: Scenario::Standard,
            output_dir: PathBuf::from("out"),
            sweep_layers: vec![],
        }
    }

    #[test]
    fn config_parses_with_defaults() {
        let text = r#"{
            "dataset": {"path": "data/triangle"},
            "model": {"arch": "sgc", "variant": "acm", "n_layers": 4}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.train.max_epochs, 1000);
        assert_eq!(cfg.train.patience, 100);
        assert_eq!(cfg.model.hidden_dim, 16);
        assert!((cfg.model.dropout_p - 0.6).abs() < 1e-15);
        assert_eq!(cfg.scenario, Scenario::Standard);
    }

    #[test]
    fn synth_config_round_trips() {
        let cfg = sbm_config(Arch::Sgc, Variant::Acm, 2);
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        match back.dataset {
            DatasetSource::Synth { params, seed } => {
                assert_eq!(params.n, 24);
                assert_eq!(seed, 5);
            }
            _ => panic!("expected synth source"),
        }
    }

    #[test]
    fn overfit_path_fixture_with_gcn() {
        // separable features, train mask covering all nodes: must reach
        // perfect train accuracy quickly. A path keeps neighborhoods
        // distinct (a triangle's uniform aggregation would erase the
        // per-node features in one step).
        let ds = Dataset {
            graph: Graph::build(&[(0, 1), (1, 2)], 3).unwrap(),
            features: Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.9, 0.1]]),
            labels: vec![0, 1, 0],
            split: crate::data::Split { train: vec![0, 1, 2], val: vec![0, 1, 2], test: vec![0, 1, 2] },
        };
        let model_cfg = ModelConfig {
            arch: Arch::Gcn,
            variant: Variant::Vanilla,
            n_layers: 2,
            hidden_dim: 8,
            n_classes: 2,
            dropout_p: 0.0,
            leaky_relu_alpha: 0.2,
            hyperplane_b: 0.0,
        };
        let train = TrainSpec { lr: 2e-2, weight_decay: 0.0, max_epochs: 200, patience: 200, seed: 1, repeats: 1 };
        let outcome = train_single(&ds, &model_cfg, &train, 0).unwrap();
        assert_eq!(outcome.result.test_acc_at_best_val, 1.0);
    }

    #[test]
    fn identical_seed_gives_identical_summary() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let cfg = sbm_config(Arch::Sgc, Variant::Acm, 3);
        let s1 = run_train(&cfg, dir1.path()).unwrap();
        let s2 = run_train(&cfg, dir2.path()).unwrap();
        assert_eq!(
            serde_json::to_string(&s1.repeats).unwrap(),
            serde_json::to_string(&s2.repeats).unwrap()
        );
        assert_eq!(s1.mean_test_acc, s2.mean_test_acc);
    }

    #[test]
    fn lr_zero_freezes_the_model() {
        let mut cfg = sbm_config(Arch::Sgc, Variant::Vanilla, 2);
        cfg.train.lr = 0.0;
        cfg.train.max_epochs = 20;
        cfg.train.patience = 50;
        let ds = cfg.resolve_dataset().unwrap();
        let model_cfg = cfg.model.to_model_config(ds.n_classes());
        let outcome = train_single(&ds, &model_cfg, &cfg.train, 0).unwrap();
        let first = outcome.metrics.first().unwrap();
        for m in &outcome.metrics {
            assert_eq!(m.val_acc, first.val_acc);
            assert_eq!(m.test_acc, first.test_acc);
        }
    }

    #[test]
    fn early_stopping_bounds_epochs() {
        let cfg = sbm_config(Arch::Sgc, Variant::Vanilla, 1);
        let ds = cfg.resolve_dataset().unwrap();
        let model_cfg = cfg.model.to_model_config(ds.n_classes());
        let mut train = cfg.train.clone();
        train.max_epochs = 500;
        train.patience = 10;
        let outcome = train_single(&ds, &model_cfg, &train, 0).unwrap();
        assert!(outcome.result.epochs_run <= 500);
        // best epoch + patience bounds the run
        let best_epoch = outcome
            .metrics
            .iter()
            .max_by(|a, b| a.val_acc.partial_cmp(&b.val_acc).unwrap())
            .unwrap()
            .epoch;
        assert!(outcome.result.epochs_run <= best_epoch + train.patience);
    }

    #[test]
    fn mean_matches_repeat_mean_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sbm_config(Arch::Sgc, Variant::Vanilla, 2);
        let s = run_train(&cfg, dir.path()).unwrap();
        let manual = s.repeats.iter().map(|r| r.test_acc_at_best_val).sum::<f64>()
            / s.repeats.len() as f64;
        assert!((s.mean_test_acc - manual).abs() < 1e-12);
    }

    #[test]
    fn sweep_csv_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sbm_config(Arch::Sgc, Variant::Acm, 1);
        let layers = vec![1, 2, 4];
        run_sweep(&cfg, &layers, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let rows = text.lines().count();
        assert_eq!(rows, layers.len() * cfg.train.repeats + 1);
        assert!(dir.path().join("sweep.svg").exists());
    }

    #[test]
    fn sweep_of_single_depth_matches_train() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let cfg = sbm_config(Arch::Sgc, Variant::Vanilla, 3);
        let sweep = run_sweep(&cfg, &[3], dir1.path()).unwrap();
        let train = run_train(&cfg, dir2.path()).unwrap();
        let sweep_mean = sweep.mean_test_acc_per_depth[0].1;
        assert!((sweep_mean - train.mean_test_acc).abs() < 1e-12);
    }

    #[test]
    fn diagnose_depth_zero_matches_direct_projection() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sbm_config(Arch::Sgc, Variant::Acm, 0);
        cfg.model.n_layers = 0;
        let report = run_diagnose(&cfg, false, dir.path()).unwrap();
        assert_eq!(report.per_layer.len(), 1);
        let ds = cfg.resolve_dataset().unwrap();
        let m = ManifoldSpec::unit(ds.feat_dim());
        let h = m.project_rows_or_center(&ds.features);
        let (max, mean) = m.pairwise_stats(&h).unwrap();
        assert!((report.per_layer[0].1 - mean).abs() < 1e-12);
        assert!((report.per_layer[0].2 - max).abs() < 1e-12);
    }

    #[test]
    fn theory_checks_report_expected_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_theory_checks(dir.path(), 11).unwrap();
        let by_name = |n: &str| {
            report
                .contraction_checks
                .iter()
                .find(|c| c.name.starts_with(n))
                .unwrap()
                .clone()
        };
        assert_eq!(by_name("row_norm_lambda_0.3").verdict, "consistent_with_contracted");
        assert_eq!(by_name("row_norm_lambda_1").verdict, "consistent_with_contracted");
        assert_eq!(by_name("attention").verdict, "consistent_with_contracted");
        assert_eq!(by_name("identity").verdict, "refuted");
        assert_eq!(by_name("acm_circle").verdict, "refuted");
        assert!(report.conjugation_max_deviation < 1e-10);
        assert!(report.collapse_steps.is_some());
        assert!(report.fixed_point_max_deviation_from_pi < 1e-12);
        assert!(dir.path().join("report.json").exists());
        assert!(dir.path().join("trajectory.csv").exists());
    }

    #[test]
    fn self_check_validates_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sbm_config(Arch::Sgc, Variant::Vanilla, 1);
        run_train(&cfg, dir.path()).unwrap();
        run_theory_checks(&dir.path().join("theory"), 1).unwrap();
        let files = self_check(dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("summary.json")));
        assert!(files.iter().any(|p| p.ends_with("metrics.csv")));
        assert!(files.iter().any(|p| p.ends_with("report.json")));

        // corrupt a csv header and the check must fail
        let bad = dir.path().join("repeat-0").join("metrics.csv");
        std::fs::write(&bad, "oops\n1,2,3,4\n").unwrap();
        assert!(self_check(dir.path()).is_err());
    }
}
