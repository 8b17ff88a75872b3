//! Desk-scale supervised training: SGD with momentum, decoupled weight
//! decay, per-epoch metrics, and optional output-range tracking.

use std::io::{self, Write};

use normlab_core::{
    decay_step, decay_weights, layer_bound, Mode, NormScheme, RangeTracker, Tensor4,
    WeightDecayConfig,
};

use crate::dataset::{DataBundle, Dataset};
use crate::derive_seed;
use crate::error::{HarnessError, HarnessResult};
use crate::loss::softmax_xent;
use crate::model::{scheme_valid_for, Model, ModelGrads, ModelSpec};
use crate::sampler::{iid_batches, non_iid_batches};

/// How training batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Iid,
    NonIid { classes_per_batch: usize },
}

/// Everything one training run needs beyond the data and architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub wd: WeightDecayConfig,
    pub scheme: NormScheme,
    /// Example weights evaluated on the validation split each epoch.
    pub alpha_eval_grid: Vec<f64>,
    pub rho: f64,
    pub epsilon: f64,
    pub sampler: SamplerKind,
    pub track_ranges: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(batch_size: usize, epochs: usize, scheme: NormScheme, seed: u64) -> Self {
        Self {
            batch_size,
            lr: 0.1,
            momentum: 0.9,
            epochs,
            wd: WeightDecayConfig::disabled(),
            scheme,
            alpha_eval_grid: vec![0.0],
            rho: normlab_core::moments::DEFAULT_RHO,
            epsilon: normlab_core::layers::DEFAULT_EPSILON,
            sampler: SamplerKind::Iid,
            track_ranges: false,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One metrics row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: Split,
    /// Example weight used for evaluation; absent for train-mode rows.
    pub alpha: Option<f64>,
    pub accuracy: f64,
    pub xent: f64,
}

/// A trained model with its per-epoch history and, if requested, the
/// per-layer output ranges observed during the run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub history: Vec<HistoryRow>,
    pub ranges: Option<RangeTracker>,
}

/// Static feasibility checks, run before any training starts.
pub fn validate_train(
    spec: &ModelSpec,
    data: &DataBundle,
    cfg: &TrainConfig,
) -> HarnessResult<()> {
    spec.validate()?;
    if cfg.batch_size == 0 || cfg.batch_size > data.train.len() {
        return Err(HarnessError::Config(format!(
            "batch size {} invalid for {} training examples",
            cfg.batch_size,
            data.train.len()
        )));
    }
    if cfg.epochs == 0 {
        return Err(HarnessError::Config("epochs must be >= 1".into()));
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(HarnessError::Config(format!("bad learning rate {}", cfg.lr)));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(HarnessError::Config(format!("bad momentum {}", cfg.momentum)));
    }
    if cfg.alpha_eval_grid.is_empty() {
        return Err(HarnessError::Config("alpha evaluation grid is empty".into()));
    }
    if let Some(a) = cfg
        .alpha_eval_grid
        .iter()
        .find(|a| !(a.is_finite() && **a >= 0.0))
    {
        return Err(HarnessError::Config(format!("bad alpha {a} in grid")));
    }
    scheme_valid_for(&cfg.scheme, cfg.batch_size, &spec.block_widths)?;
    if let SamplerKind::NonIid { classes_per_batch } = cfg.sampler {
        // Probe the sampler's own feasibility checks without training.
        non_iid_batches(&data.train, cfg.batch_size, classes_per_batch, 0)?;
    }
    Ok(())
}

/// Mean loss and per-example logit gradients (already divided by the
/// batch size) for one batch.
fn batch_loss_terms(
    logits: &[f64],
    labels: &[usize],
    n_classes: usize,
) -> HarnessResult<(f64, Vec<f64>)> {
    let n = labels.len();
    let mut total = 0.0;
    let mut d_logits = vec![0.0; n * n_classes];
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits[i * n_classes..(i + 1) * n_classes];
        let (loss, grad) = softmax_xent(row, label)?;
        total += loss;
        for (j, g) in grad.iter().enumerate() {
            d_logits[i * n_classes + j] = g / n as f64;
        }
    }
    Ok((total / n as f64, d_logits))
}

fn batch_accuracy(logits: &[f64], labels: &[usize], n_classes: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(i, &label)| {
            let row = &logits[i * n_classes..(i + 1) * n_classes];
            let best = row
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            best == label
        })
        .count()
}

/// Mean training-mode loss of a batch without touching the model.
/// Finite-difference oracle hook for end-to-end gradient checks.
pub fn batch_loss(model: &Model, x: &Tensor4, labels: &[usize]) -> HarnessResult<f64> {
    let mut probe = model.clone();
    let trace = probe.forward_train(x)?;
    Ok(batch_loss_terms(&trace.logits, labels, model.spec.n_classes)?.0)
}

/// Mean training-mode loss and parameter gradients of a batch.
pub fn batch_loss_grads(
    model: &mut Model,
    x: &Tensor4,
    labels: &[usize],
) -> HarnessResult<(f64, ModelGrads)> {
    let trace = model.forward_train(x)?;
    let (loss, d_logits) = batch_loss_terms(&trace.logits, labels, model.spec.n_classes)?;
    let grads = model.backward(&trace, &d_logits)?;
    Ok((loss, grads))
}

/// Trains a fresh model; fully deterministic in `(spec, data, cfg)`.
pub fn train(spec: &ModelSpec, data: &DataBundle, cfg: &TrainConfig) -> HarnessResult<TrainOutput> {
    validate_train(spec, data, cfg)?;
    let mut model = Model::init(
        spec.clone(),
        cfg.scheme,
        cfg.rho,
        cfg.epsilon,
        derive_seed(cfg.seed, 0),
    )?;
    let mut velocity = vec![0.0; model.param_count()];
    let mut ranges = cfg.track_ranges.then(|| RangeTracker::new(model.n_norm_layers()));
    let mut history = Vec::new();

    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, 1 + epoch as u64);
        let batches = match cfg.sampler {
            SamplerKind::Iid => iid_batches(&data.train, cfg.batch_size, epoch_seed)?,
            SamplerKind::NonIid { classes_per_batch } => {
                non_iid_batches(&data.train, cfg.batch_size, classes_per_batch, epoch_seed)?
            }
        };
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut seen = 0;
        // Numeric failures inside the step are divergence, reported with
        // the epoch they surfaced in.
        let diverged = |e: HarnessError| match e {
            HarnessError::Numeric(m) => {
                HarnessError::Training(format!("loss diverged at epoch {epoch}: {m}"))
            }
            other => other,
        };
        for indices in &batches {
            let (x, labels) = data.train.batch(indices).map_err(diverged)?;
            let trace = model.forward_train(&x).map_err(diverged)?;
            if let Some(tracker) = ranges.as_mut() {
                for (layer, bt) in trace.blocks.iter().enumerate() {
                    tracker.record(layer, Mode::Train, bt.norm_out());
                    let n_g = bt.cache().partition().cell_count(0);
                    let (lo, hi) = layer_bound(&model.blocks[layer].norm, n_g)?;
                    tracker.record_bound(layer, lo, hi);
                }
            }
            let (loss, d_logits) = batch_loss_terms(&trace.logits, &labels, spec.n_classes)?;
            if !loss.is_finite() {
                return Err(HarnessError::Training(format!(
                    "loss diverged at epoch {epoch}"
                )));
            }
            loss_sum += loss;
            correct += batch_accuracy(&trace.logits, &labels, spec.n_classes);
            seen += labels.len();
            let grads = model.backward(&trace, &d_logits).map_err(diverged)?;

            let mut params = model.params_flat();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(grads.flat()) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.lr * *v;
            }
            model.set_params_flat(&params)?;
            apply_weight_decay(&mut model, &cfg.wd);
        }
        history.push(HistoryRow {
            epoch,
            split: Split::Train,
            alpha: None,
            accuracy: correct as f64 / seen as f64,
            xent: loss_sum / batches.len() as f64,
        });
        for &alpha in &cfg.alpha_eval_grid {
            let (accuracy, xent) = evaluate(&model, &data.val, alpha)?;
            history.push(HistoryRow {
                epoch,
                split: Split::Val,
                alpha: Some(alpha),
                accuracy,
                xent,
            });
        }
    }
    Ok(TrainOutput {
        model,
        history,
        ranges,
    })
}

/// Decoupled decay after the optimizer step: mixing and classifier
/// weights shrink toward 0, normalization parameters toward their
/// targets. Biases are left alone.
fn apply_weight_decay(model: &mut Model, wd: &WeightDecayConfig) {
    for block in &mut model.blocks {
        block.weight = decay_weights(&block.weight, wd);
        block.norm = decay_step(&block.norm, wd);
    }
    model.cls_weight = decay_weights(&model.cls_weight, wd);
}

/// Accuracy and mean cross-entropy of inference at example weight
/// `alpha` over a whole dataset.
pub fn evaluate(model: &Model, dataset: &Dataset, alpha: f64) -> HarnessResult<(f64, f64)> {
    evaluate_inner(model, dataset, alpha, None)
}

/// [`evaluate`] that also folds each layer's outputs into a tracker.
pub fn evaluate_tracked(
    model: &Model,
    dataset: &Dataset,
    alpha: f64,
    tracker: &mut RangeTracker,
) -> HarnessResult<(f64, f64)> {
    evaluate_inner(model, dataset, alpha, Some(tracker))
}

fn evaluate_inner(
    model: &Model,
    dataset: &Dataset,
    alpha: f64,
    mut tracker: Option<&mut RangeTracker>,
) -> HarnessResult<(f64, f64)> {
    if dataset.is_empty() {
        return Err(HarnessError::Config("cannot evaluate on an empty dataset".into()));
    }
    let k = model.spec.n_classes;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0;
    let mut loss_sum = 0.0;
    // Chunk size is irrelevant to the results: inference is invariant to
    // batch composition.
    for chunk in indices.chunks(64) {
        let (x, labels) = dataset.batch(chunk)?;
        let trace = model.forward_infer(&x, Some(alpha))?;
        if let Some(tracker) = tracker.as_deref_mut() {
            for (layer, y) in trace.norm_outputs.iter().enumerate() {
                tracker.record(layer, Mode::Infer, y);
            }
        }
        correct += batch_accuracy(&trace.logits, &labels, k);
        for (i, &label) in labels.iter().enumerate() {
            loss_sum += softmax_xent(&trace.logits[i * k..(i + 1) * k], label)?.0;
        }
    }
    Ok((
        correct as f64 / dataset.len() as f64,
        loss_sum / dataset.len() as f64,
    ))
}

/// Picks the grid alpha with the best validation metric; ties keep the
/// earliest grid point. `by_accuracy` selects on accuracy (maximized),
/// otherwise on cross-entropy (minimized).
pub fn tune_alpha(
    model: &Model,
    val: &Dataset,
    grid: &[f64],
    by_accuracy: bool,
) -> HarnessResult<(f64, f64, f64)> {
    if grid.is_empty() {
        return Err(HarnessError::Config("alpha grid is empty".into()));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &alpha in grid {
        let (acc, xent) = evaluate(model, val, alpha)?;
        let better = match &best {
            None => true,
            Some((_, best_acc, best_xent)) => {
                if by_accuracy {
                    acc > *best_acc
                } else {
                    xent < *best_xent
                }
            }
        };
        if better {
            best = Some((alpha, acc, xent));
        }
    }
    Ok(best.unwrap())
}

/// Writes `epoch,split,alpha,accuracy,xent` rows; train-mode rows leave
/// the alpha field empty.
pub fn write_history_csv<W: Write>(rows: &[HistoryRow], mut out: W) -> io::Result<()> {
    writeln!(out, "epoch,split,alpha,accuracy,xent")?;
    for r in rows {
        let alpha = r.alpha.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{alpha},{},{}",
            r.epoch,
            r.split.as_str(),
            r.accuracy,
            r.xent
        )?;
    }
    Ok(())
}
