//! The five experiment commands behind the CLI.
//!
//! Each command validates the full configuration before any training
//! starts, computes every result row in memory, and only then writes its
//! CSV files, in deterministic grid order. Sweep points are independent
//! jobs seeded from (master seed, point index), so results do not depend
//! on the worker count.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use normlab_core::{tightness_value, NormKind, NormScheme, TightnessProbe};
use rayon::prelude::*;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ExperimentSpec, SelectMetric};
use crate::dataset::{make_dataset, DataBundle};
use crate::derive_seed;
use crate::error::{HarnessError, HarnessResult};
use crate::model::{scheme_valid_for, Model, ModelSpec};
use crate::train::{
    evaluate, evaluate_tracked, train, tune_alpha, validate_train, write_history_csv, SamplerKind,
    TrainOutput,
};

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SweepAlpha,
    SweepGhost,
    Compare,
    NonIid,
    Bounds,
}

/// A fully resolved invocation: config, output directory, seed, workers.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub spec: ExperimentSpec,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
}

struct CmdOutput {
    files: Vec<(String, String)>,
    checkpoint: Option<Model>,
}

const RUN_SALT: u64 = 1000;

/// Seed of sweep point `point` under master seed `master`; sweep points
/// are numbered in grid order from 0.
pub fn point_seed(master: u64, point: u64) -> u64 {
    derive_seed(master, RUN_SALT + point)
}

/// Runs a command and returns the paths written.
pub fn run(cmd: Command, ctx: &RunContext) -> HarnessResult<Vec<PathBuf>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let output = pool.install(|| match cmd {
        Command::SweepAlpha => cmd_sweep_alpha(ctx),
        Command::SweepGhost => cmd_sweep_ghost(ctx),
        Command::Compare => cmd_compare_schemes(ctx),
        Command::NonIid => cmd_non_iid(ctx),
        Command::Bounds => cmd_bounds(ctx),
    })?;
    fs::create_dir_all(&ctx.out_dir)?;
    let mut written = Vec::new();
    for (name, contents) in &output.files {
        let path = ctx.out_dir.join(name);
        fs::write(&path, contents)?;
        written.push(path);
    }
    if let Some(model) = &output.checkpoint {
        let dir = ctx.out_dir.join("checkpoint");
        save_checkpoint(model, &dir)?;
        written.push(dir);
    }
    Ok(written)
}

fn check_alphas(alphas: &[f64]) -> HarnessResult<()> {
    if alphas.is_empty() {
        return Err(HarnessError::Config("sweep.alphas must be non-empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(HarnessError::Config(format!(
            "sweep alpha must be finite and >= 0, got {a}"
        )));
    }
    Ok(())
}

fn build_data(ctx: &RunContext) -> HarnessResult<(DataBundle, ModelSpec)> {
    let data = make_dataset(&ctx.spec.dataset_spec(ctx.seed))?;
    let model_spec = ctx.spec.model_spec();
    model_spec.validate()?;
    Ok((data, model_spec))
}

fn run_point(
    ctx: &RunContext,
    model_spec: &ModelSpec,
    data: &DataBundle,
    scheme: NormScheme,
    batch_size: usize,
    sampler: SamplerKind,
    point: u64,
    track_ranges: bool,
) -> HarnessResult<TrainOutput> {
    let mut cfg = ctx.spec.train_config(
        scheme,
        batch_size,
        sampler,
        point_seed(ctx.seed, point),
    )?;
    cfg.track_ranges = track_ranges;
    train(model_spec, data, &cfg)
}

/// Tuned-alpha metrics of one trained model: the alpha chosen on
/// validation, test metrics there, and test metrics at alpha = 0.
struct TunedMetrics {
    alpha: f64,
    val_accuracy: f64,
    test_accuracy: f64,
    test_xent: f64,
    test_accuracy_alpha0: f64,
    test_xent_alpha0: f64,
}

fn tuned_metrics(
    model: &Model,
    data: &DataBundle,
    alphas: &[f64],
    metric: SelectMetric,
) -> HarnessResult<TunedMetrics> {
    let (alpha, val_accuracy, _) =
        tune_alpha(model, &data.val, alphas, metric == SelectMetric::Accuracy)?;
    let (test_accuracy, test_xent) = evaluate(model, &data.test, alpha)?;
    let (test_accuracy_alpha0, test_xent_alpha0) = evaluate(model, &data.test, 0.0)?;
    Ok(TunedMetrics {
        alpha,
        val_accuracy,
        test_accuracy,
        test_xent,
        test_accuracy_alpha0,
        test_xent_alpha0,
    })
}

/// Retroactive example-weight sweep on a trained model: one row per
/// alpha, no retraining between rows, checkpoint never mutated.
fn cmd_sweep_alpha(ctx: &RunContext) -> HarnessResult<CmdOutput> {
    check_alphas(&ctx.spec.sweep.alphas)?;
    let (data, model_spec) = build_data(ctx)?;
    let scheme = ctx.spec.scheme()?;

    let mut files = Vec::new();
    let model = match &ctx.spec.checkpoint {
        Some(dir) => {
            let model = load_checkpoint(dir)?;
            if model.spec.in_channels != model_spec.in_channels
                || model.spec.height != model_spec.height
                || model.spec.width != model_spec.width
                || model.spec.n_classes != model_spec.n_classes
            {
                return Err(HarnessError::Config(format!(
                    "checkpoint shape {:?} does not fit the configured dataset",
                    model.spec
                )));
            }
            model
        }
        None => {
            let cfg = ctx.spec.train_config(
                scheme,
                ctx.spec.train.batch_size,
                SamplerKind::Iid,
                point_seed(ctx.seed, 0),
            )?;
            let out = train(&model_spec, &data, &cfg)?;
            let mut history = Vec::new();
            write_history_csv(&out.history, &mut history)?;
            files.push(("history.csv".to_string(), String::from_utf8(history).unwrap()));
            out.model
        }
    };

    let rows: Vec<String> = ctx
        .spec
        .sweep
        .alphas
        .par_iter()
        .map(|&alpha| -> HarnessResult<String> {
            let (va, vx) = evaluate(&model, &data.val, alpha)?;
            let (ta, tx) = evaluate(&model, &data.test, alpha)?;
            Ok(format!("{alpha},{va},{vx},{ta},{tx}"))
        })
        .collect::<HarnessResult<_>>()?;
    let mut csv = String::from("alpha,val_accuracy,val_xent,test_accuracy,test_xent\n");
    for row in rows {
        let _ = writeln!(csv, "{row}");
    }
    files.insert(0, ("alpha_sweep.csv".to_string(), csv));
    Ok(CmdOutput {
        files,
        checkpoint: ctx.spec.save_checkpoint.then_some(model),
    })
}

/// One full training run per ghost size; reports tuned-alpha and
/// alpha = 0 test metrics per size.
fn cmd_sweep_ghost(ctx: &RunContext) -> HarnessResult<CmdOutput> {
    check_alphas(&ctx.spec.sweep.alphas)?;
    if ctx.spec.sweep.ghost_sizes.is_empty() {
        return Err(HarnessError::Config("sweep.ghost_sizes must be non-empty".into()));
    }
    let (data, model_spec) = build_data(ctx)?;
    let batch = ctx.spec.train.batch_size;
    // Full-grid validation before any run starts.
    let mut schemes = Vec::new();
    for &b_prime in &ctx.spec.sweep.ghost_sizes {
        let scheme = NormScheme::ghost(b_prime)
            .with_alpha(ctx.spec.train.alpha)
            .map_err(HarnessError::from)?;
        let cfg = ctx.spec.train_config(scheme, batch, SamplerKind::Iid, 0)?;
        validate_train(&model_spec, &data, &cfg)?;
        schemes.push(scheme);
    }

    let metric = ctx.spec.eval.select_metric;
    let rows: Vec<String> = schemes
        .par_iter()
        .enumerate()
        .map(|(i, &scheme)| -> HarnessResult<String> {
            let out = run_point(
                ctx,
                &model_spec,
                &data,
                scheme,
                batch,
                SamplerKind::Iid,
                i as u64,
                false,
            )?;
            let m = tuned_metrics(&out.model, &data, &ctx.spec.sweep.alphas, metric)?;
            Ok(format!(
                "{},{},{},{},{},{},{}",
                ctx.spec.sweep.ghost_sizes[i],
                m.alpha,
                m.val_accuracy,
                m.test_accuracy,
                m.test_xent,
                m.test_accuracy_alpha0,
                m.test_xent_alpha0
            ))
        })
        .collect::<HarnessResult<_>>()?;
    let mut csv = String::from(
        "ghost_size,alpha_tuned,val_accuracy_tuned,test_accuracy_tuned,test_xent_tuned,test_accuracy_alpha0,test_xent_alpha0\n",
    );
    for row in rows {
        let _ = writeln!(csv, "{row}");
    }
    Ok(CmdOutput {
        files: vec![("ghost_sweep.csv".to_string(), csv)],
        checkpoint: None,
    })
}

/// Grid over batch sizes and schemes; invalid combinations are dropped
/// from the grid up front.
fn cmd_compare_schemes(ctx: &RunContext) -> HarnessResult<CmdOutput> {
    check_alphas(&ctx.spec.sweep.alphas)?;
    if ctx.spec.sweep.batch_sizes.is_empty() || ctx.spec.sweep.schemes.is_empty() {
        return Err(HarnessError::Config(
            "compare needs non-empty sweep.batch_sizes and sweep.schemes".into(),
        ));
    }
    let (data, model_spec) = build_data(ctx)?;
    let mut grid = Vec::new();
    for &batch in &ctx.spec.sweep.batch_sizes {
        for text in &ctx.spec.sweep.schemes {
            // Parse errors are config errors even for combinations that
            // end up dropped.
            let kind: NormKind = text.parse().map_err(HarnessError::from)?;
            let scheme = NormScheme::new(kind)
                .with_alpha(ctx.spec.train.alpha)
                .map_err(HarnessError::from)?;
            // Plain batch statistics need at least two examples.
            let cross_example_degenerate = matches!(kind, NormKind::Batch) && batch < 2;
            if cross_example_degenerate
                || batch > data.train.len()
                || scheme_valid_for(&scheme, batch, &model_spec.block_widths).is_err()
            {
                continue;
            }
            let cfg = ctx.spec.train_config(scheme, batch, SamplerKind::Iid, 0)?;
            validate_train(&model_spec, &data, &cfg)?;
            grid.push((batch, text.clone(), scheme));
        }
    }
    if grid.is_empty() {
        return Err(HarnessError::Config(
            "no valid (batch size, scheme) combination in the grid".into(),
        ));
    }

    let metric = ctx.spec.eval.select_metric;
    let rows: Vec<String> = grid
        .par_iter()
        .enumerate()
        .map(|(i, (batch, text, scheme))| -> HarnessResult<String> {
            let out = run_point(
                ctx,
                &model_spec,
                &data,
                *scheme,
                *batch,
                SamplerKind::Iid,
                i as u64,
                false,
            )?;
            let m = tuned_metrics(&out.model, &data, &ctx.spec.sweep.alphas, metric)?;
            Ok(format!(
                "{batch},{text},{},{},{},{},{}",
                m.alpha, m.test_accuracy, m.test_xent, m.test_accuracy_alpha0, m.test_xent_alpha0
            ))
        })
        .collect::<HarnessResult<_>>()?;
    let mut csv = String::from(
        "batch_size,scheme,alpha_tuned,test_accuracy_tuned,test_xent_tuned,test_accuracy_alpha0,test_xent_alpha0\n",
    );
    for row in rows {
        let _ = writeln!(csv, "{row}");
    }
    Ok(CmdOutput {
        files: vec![("scheme_compare.csv".to_string(), csv)],
        checkpoint: None,
    })
}

/// Trains each scheme under class-stratified batches (plus an i.i.d.
/// control) and reports alpha = 0 vs tuned-alpha test accuracy.
fn cmd_non_iid(ctx: &RunContext) -> HarnessResult<CmdOutput> {
    check_alphas(&ctx.spec.sweep.alphas)?;
    if ctx.spec.sweep.schemes.is_empty() {
        return Err(HarnessError::Config("non-iid needs non-empty sweep.schemes".into()));
    }
    let classes_per_batch = ctx.spec.sweep.classes_per_batch.ok_or_else(|| {
        HarnessError::Config("non-iid needs sweep.classes_per_batch".into())
    })?;
    let (data, model_spec) = build_data(ctx)?;
    let batch = ctx.spec.train.batch_size;
    let iid_control = ctx.spec.sweep.iid_control.unwrap_or(true);

    let mut samplers = vec![(SamplerKind::NonIid { classes_per_batch }, "non_iid")];
    if iid_control {
        samplers.push((SamplerKind::Iid, "iid"));
    }
    let mut points = Vec::new();
    for (si, text) in ctx.spec.sweep.schemes.iter().enumerate() {
        let scheme = crate::config::parse_scheme(text, ctx.spec.train.alpha)?;
        for &(sampler, sampler_name) in &samplers {
            let cfg = ctx.spec.train_config(scheme, batch, sampler, 0)?;
            validate_train(&model_spec, &data, &cfg)?;
            // Both sampler variants of a scheme share a model-init seed.
            points.push((text.clone(), scheme, sampler, sampler_name, si as u64));
        }
    }

    let metric = ctx.spec.eval.select_metric;
    let rows: Vec<String> = points
        .par_iter()
        .map(|(text, scheme, sampler, sampler_name, point)| -> HarnessResult<String> {
            let out = run_point(ctx, &model_spec, &data, *scheme, batch, *sampler, *point, false)?;
            let m = tuned_metrics(&out.model, &data, &ctx.spec.sweep.alphas, metric)?;
            Ok(format!(
                "{text},{sampler_name},{},{},{},{},{}",
                m.alpha, m.test_accuracy_alpha0, m.test_accuracy, m.test_xent_alpha0, m.test_xent
            ))
        })
        .collect::<HarnessResult<_>>()?;
    let mut csv = String::from(
        "scheme,sampler,alpha_tuned,test_accuracy_alpha0,test_accuracy_tuned,test_xent_alpha0,test_xent_tuned\n",
    );
    for row in rows {
        let _ = writeln!(csv, "{row}");
    }
    Ok(CmdOutput {
        files: vec![("non_iid.csv".to_string(), csv)],
        checkpoint: None,
    })
}

/// Trains over a ghost-size grid recording per-layer output ranges and
/// bound envelopes, then emits the tightness closed-form sweep.
fn cmd_bounds(ctx: &RunContext) -> HarnessResult<CmdOutput> {
    if ctx.spec.sweep.ghost_sizes.is_empty() {
        return Err(HarnessError::Config("bounds needs non-empty sweep.ghost_sizes".into()));
    }
    let tightness = ctx
        .spec
        .sweep
        .tightness
        .clone()
        .unwrap_or_default();
    if tightness.magnitudes.is_empty() {
        return Err(HarnessError::Config("tightness magnitudes must be non-empty".into()));
    }
    for &a in &tightness.magnitudes {
        TightnessProbe::new(tightness.group_size, a, tightness.epsilon)
            .map_err(HarnessError::from)?;
    }
    let (data, model_spec) = build_data(ctx)?;
    let batch = ctx.spec.train.batch_size;
    let mut schemes = Vec::new();
    for &b_prime in &ctx.spec.sweep.ghost_sizes {
        let scheme = NormScheme::ghost(b_prime)
            .with_alpha(ctx.spec.train.alpha)
            .map_err(HarnessError::from)?;
        let cfg = ctx.spec.train_config(scheme, batch, SamplerKind::Iid, 0)?;
        validate_train(&model_spec, &data, &cfg)?;
        schemes.push(scheme);
    }

    let mut files: Vec<(String, String)> = schemes
        .par_iter()
        .enumerate()
        .map(|(i, &scheme)| -> HarnessResult<(String, String)> {
            let out = run_point(
                ctx,
                &model_spec,
                &data,
                scheme,
                batch,
                SamplerKind::Iid,
                i as u64,
                true,
            )?;
            let mut tracker = out.ranges.expect("range tracking requested");
            evaluate_tracked(&out.model, &data.test, 0.0, &mut tracker)?;
            let mut buf = Vec::new();
            tracker.write_csv(&mut buf)?;
            Ok((
                format!("range_b{}.csv", ctx.spec.sweep.ghost_sizes[i]),
                String::from_utf8(buf).unwrap(),
            ))
        })
        .collect::<HarnessResult<_>>()?;

    let mut csv = String::from("group_size,magnitude,value\n");
    for &a in &tightness.magnitudes {
        let probe = TightnessProbe::new(tightness.group_size, a, tightness.epsilon)
            .map_err(HarnessError::from)?;
        let _ = writeln!(csv, "{},{a},{}", tightness.group_size, tightness_value(&probe));
    }
    files.push(("tightness.csv".to_string(), csv));
    Ok(CmdOutput {
        files,
        checkpoint: None,
    })
}
