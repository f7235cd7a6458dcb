//! RMSProp training of a [`Model`] on the penalised objective, with
//! per-epoch validation under test-time gates, checkpointing and sweeps.

mod checkpoint;
mod optim;
mod sweep;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, CHECKPOINT_VERSION};
pub use optim::{clip_global_norm, rmsprop_update, RmsPropConfig, RmsPropState};
pub use sweep::{derived_seed, sweep_alpha, sweep_lambda, DEFAULT_ALPHAS, DEFAULT_LAMBDAS};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{segment, split, NormMode, NormStats, PadPolicy, SequenceDataset, SplitMode};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::gating::{FeatureGroups, GatePrior, DEFAULT_TAU};
use crate::model::{evaluate_batch, training_objective, Model, ModelSpec, ObjectiveConfig, PolicyKind};
use crate::report::{
    classification_metrics, selection_metrics, selection_precision_recall, ClassificationMetrics, RunReport,
    SelectionTrace,
};
use crate::tape::Tape;

/// Everything that determines a training run. Serialised as flat JSON;
/// missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rmsprop_smoothing: f64,
    pub rmsprop_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau: f64,
    pub lambda: f64,
    pub estimator: EstimatorKind,
    pub policy: PolicyKind,
    pub seed: u64,
    pub hidden_size: usize,
    pub gate_hidden: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Gate probability of the random policy.
    pub random_p: f64,
    /// Test-time threshold of the attention policy.
    pub alpha: f64,
    /// Dataset-size factor `N` in the prior parameter `η = Nλ`.
    pub n_scale: f64,
    /// Per-gate observation costs; all ones when absent.
    pub costs: Option<Vec<f64>>,
    /// Features per gate (contiguous blocks).
    pub group_size: usize,
    pub norm: NormMode,
    pub split_ratios: [f64; 3],
    pub split_mode: SplitMode,
    pub segment_len: Option<usize>,
    pub pad: PadPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            rmsprop_smoothing: 0.99,
            rmsprop_epsilon: 1e-8,
            batch_size: 16,
            epochs: 100,
            tau: DEFAULT_TAU,
            lambda: 0.01,
            estimator: EstimatorKind::GumbelSoftmax,
            policy: PolicyKind::Vfds,
            seed: 0,
            hidden_size: 32,
            gate_hidden: 16,
            clip_norm: 5.0,
            random_p: 0.5,
            alpha: 0.0,
            n_scale: 1000.0,
            costs: None,
            group_size: 1,
            norm: NormMode::Zscore,
            split_ratios: [0.8, 0.1, 0.1],
            split_mode: SplitMode::Subject,
            segment_len: None,
            pad: PadPolicy::RepeatLast,
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings for the synthetic benchmark.
    pub fn synthetic_benchmark() -> Self {
        Self { learning_rate: 3e-3, epochs: 100, hidden_size: 24, gate_hidden: 16, lambda: 0.015, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.rmsprop_smoothing > 0.0 && self.rmsprop_smoothing < 1.0) {
            return bad("rmsprop_smoothing must lie in (0, 1)");
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop_epsilon must be positive");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        if self.batch_size == 0 || self.hidden_size == 0 || self.gate_hidden == 0 || self.group_size == 0 {
            return bad("batch_size, hidden sizes and group_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.random_p) {
            return bad("random_p must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)");
        }
        if !(self.n_scale > 0.0) {
            return bad("n_scale must be positive");
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&body)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig { learning_rate: self.learning_rate, smoothing: self.rmsprop_smoothing, epsilon: self.rmsprop_epsilon }
    }

    pub fn groups(&self, n_features: usize) -> Result<FeatureGroups> {
        if self.group_size == 1 {
            Ok(FeatureGroups::singletons(n_features))
        } else {
            FeatureGroups::blocks(n_features, self.group_size)
        }
    }

    pub fn model_spec(&self, ds: &SequenceDataset) -> Result<ModelSpec> {
        Ok(ModelSpec {
            input_size: ds.n_features(),
            hidden_size: self.hidden_size,
            gate_hidden: self.gate_hidden,
            outputs: ds.n_outputs,
            mode: ds.mode,
            groups: self.groups(ds.n_features())?,
            policy: self.policy,
            random_p: self.random_p,
            alpha: self.alpha,
        })
    }

    pub fn prior(&self, n_gates: usize) -> Result<GatePrior> {
        let costs = self.costs.clone().unwrap_or_else(|| vec![1.0; n_gates]);
        if costs.len() != n_gates {
            return Err(Error::invalid(format!("{} costs for {n_gates} gates", costs.len())));
        }
        GatePrior::new(costs, self.lambda, self.n_scale)
    }
}

/// Train/validation/test splits after segmentation and normalisation.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: SequenceDataset,
    pub val: SequenceDataset,
    pub test: SequenceDataset,
    pub norm: NormStats,
}

pub fn prepare(cfg: &TrainConfig, ds: &SequenceDataset) -> Result<PreparedData> {
    let ds = match cfg.segment_len {
        Some(len) => segment(ds, len, cfg.pad)?,
        None => ds.clone(),
    };
    let (mut train, mut val, mut test) = split(&ds, cfg.split_ratios, cfg.split_mode, cfg.seed)?;
    let norm = crate::data::normalize(&mut train, &mut [&mut val, &mut test], cfg.norm)?;
    Ok(PreparedData { train, val, test, norm })
}

/// XOR-ed into the run seed to derive independent RNG streams.
pub const SHUFFLE_STREAM: u64 = 0x5eed_0001;
pub const NOISE_STREAM: u64 = 0x5eed_0002;
pub const EVAL_STREAM: u64 = 0x5eed_0003;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
    pub avg_feat_pct: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub latest: Model,
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub log: Vec<EpochLog>,
    /// Diagnostic when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

/// Which of the two retained models to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pick {
    /// Highest validation accuracy (later epoch on ties).
    #[default]
    Best,
    /// Parameters after the final epoch.
    Latest,
}

impl Pick {
    pub fn as_str(self) -> &'static str {
        match self {
            Pick::Best => "best",
            Pick::Latest => "latest",
        }
    }
}

impl std::str::FromStr for Pick {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(Pick::Best),
            "latest" => Ok(Pick::Latest),
            other => Err(Error::invalid(format!("unknown checkpoint {other:?}: expected best or latest"))),
        }
    }
}

impl TrainOutcome {
    pub fn model(&self, pick: Pick) -> &Model {
        match pick {
            Pick::Best => &self.best,
            Pick::Latest => &self.latest,
        }
    }
}

/// Test-time predictions, gates and metrics on a dataset.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub preds: Vec<Vec<Vec<usize>>>,
    pub trace: SelectionTrace,
    pub metrics: ClassificationMetrics,
    pub report: RunReport,
}

/// Evaluates with deterministic test-time gates. The random policy draws
/// from a stream fixed by `seed`, so repeated calls agree.
pub fn evaluate(model: &Model, ds: &SequenceDataset, batch_size: usize, seed: u64) -> Result<Evaluation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    let order: Vec<usize> = (0..ds.len()).collect();
    let g = model.spec.n_gates();
    let mut preds = Vec::with_capacity(ds.len());
    let mut gates = Vec::with_capacity(ds.len());
    for chunk in order.chunks(batch_size.max(1)) {
        let batch = ds.batch::<f32>(chunk)?;
        let out = evaluate_batch(model, &batch, &mut rng)?;
        for (row, &i) in chunk.iter().enumerate() {
            let len = ds.sequences[i].len();
            preds.push((0..len).map(|t| out.predictions[t][row].clone()).collect::<Vec<_>>());
            gates.push(
                (0..len).map(|t| out.selected[t].row_slice(row).iter().map(|&v| v > 0.5).collect()).collect::<Vec<_>>(),
            );
        }
    }
    let trace = SelectionTrace { n_gates: g, gates };
    let labels: Vec<_> = ds.sequences.iter().map(|s| s.labels.clone()).collect();
    let metrics = classification_metrics(&preds, &labels, ds.n_outputs)?;
    let (avg, union) = selection_metrics(&trace);
    let contexts: Vec<_> = ds.sequences.iter().map(|s| s.context.clone()).collect();
    let pr = match (&ds.relevance, contexts.iter().all(Option::is_some)) {
        (Some(rel), true) => Some(selection_precision_recall(&trace, &model.spec.groups, Some(rel), &contexts)?),
        _ => None,
    };
    let steps = ds.sequences.iter().map(|s| s.mask().iter().filter(|&&m| m).count()).sum();
    let report = RunReport {
        accuracy: metrics.accuracy,
        macro_f1: metrics.macro_f1,
        avg_feature_pct: avg,
        union_feature_pct: union,
        selection_precision: pr.map(|p| p.0),
        selection_recall: pr.map(|p| p.1),
        steps,
    };
    Ok(Evaluation { preds, trace, metrics, report })
}

/// Where a run writes its log and checkpoints.
#[derive(Clone, Debug)]
pub struct RunOutput<'a> {
    pub dir: &'a Path,
    pub norm: Option<&'a NormStats>,
}

pub const LOG_FILE: &str = "train_log.csv";

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("epoch,train_loss,val_acc,val_f1,avg_feat_pct\n");
    for e in log {
        body.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_acc, e.val_f1, e.avg_feat_pct));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains a freshly initialised model.
pub fn train(cfg: &TrainConfig, train_ds: &SequenceDataset, val_ds: &SequenceDataset, out: Option<RunOutput<'_>>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::init(cfg.model_spec(train_ds)?, cfg.seed)?;
    train_model(cfg, model, train_ds, val_ds, out)
}

/// Trains `model` in place of a fresh initialisation.
pub fn train_model(
    cfg: &TrainConfig,
    mut model: Model,
    train_ds: &SequenceDataset,
    val_ds: &SequenceDataset,
    out: Option<RunOutput<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_ds.validate()?;
    val_ds.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::invalid("training and validation sets must be nonempty"));
    }
    if train_ds.mode != val_ds.mode || train_ds.n_outputs != val_ds.n_outputs {
        return Err(Error::invalid("training and validation sets disagree on outputs"));
    }
    if let Some(o) = &out {
        std::fs::create_dir_all(o.dir).map_err(|e| Error::io(o.dir, e))?;
    }
    let objective = ObjectiveConfig { estimator: cfg.estimator, tau: cfg.tau, prior: cfg.prior(model.spec.n_gates())? };
    let opt = cfg.rmsprop();
    let mut state = RmsPropState::new(model.named_params().into_iter().map(|(_, t)| t));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_STREAM);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut aborted = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let snapshot = model.clone();
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_ds.batch::<f32>(chunk)?;
            if batch.targets.iter().all(|t| t.observed() == 0) {
                continue;
            }
            let mut tape = Tape::new();
            let obj = match training_objective(&mut tape, &model, &batch, &objective, &mut noise_rng) {
                Ok(o) => o,
                Err(Error::NonFinite { op }) => {
                    aborted = Some(format!("epoch {epoch}: non-finite value in {op}"));
                    model = snapshot;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let loss = tape.value(obj.total).item() as f64;
            let grads = tape.backward(obj.total)?;
            let mut g: Vec<Vec<f32>> = obj.bound.order.iter().map(|&v| grads.get(v).into_data()).collect();
            if !loss.is_finite() || g.iter().flatten().any(|v| !v.is_finite()) {
                aborted = Some(format!("epoch {epoch}: non-finite loss or gradient"));
                model = snapshot;
                break 'epochs;
            }
            clip_global_norm(&mut g, cfg.clip_norm);
            for (((_, p), grad), v) in model.named_params_mut().into_iter().zip(&g).zip(&mut state.v) {
                rmsprop_update(p, grad, v, &opt)?;
            }
            loss_sum += loss;
            batches += 1;
        }
        let val = evaluate(&model, val_ds, cfg.batch_size, cfg.seed)?;
        let entry = EpochLog {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            val_acc: val.metrics.accuracy,
            val_f1: val.metrics.macro_f1,
            avg_feat_pct: val.report.avg_feature_pct,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val_acc {:.2} val_f1 {:.2} feat {:.1}%",
            entry.train_loss, entry.val_acc, entry.val_f1, entry.avg_feat_pct
        );
        let improved = entry.val_acc >= best_val_acc;
        if improved {
            best = model.clone();
            best_epoch = epoch;
            best_val_acc = entry.val_acc;
        }
        log.push(entry);
        if let Some(o) = &out {
            write_log(&o.dir.join(LOG_FILE), &log)?;
            save_checkpoint(&o.dir.join("latest"), &model, cfg, o.norm, epoch, log.last().map(|e| e.val_acc))?;
            if improved {
                save_checkpoint(&o.dir.join("best"), &best, cfg, o.norm, epoch, Some(best_val_acc))?;
            }
        }
    }
    if let Some(msg) = &aborted {
        log::error!("training aborted: {msg}");
    }
    if best_epoch == 0 {
        best = model.clone();
        best_val_acc = f64::NAN;
    }
    Ok(TrainOutcome { latest: model, best, best_epoch, best_val_acc, log, aborted })
}
