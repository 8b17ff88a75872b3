//! Model checkpoints: one directory of CSVs plus a JSON manifest.
//!
//! The manifest records shapes and the scheme string; parameters, moving
//! moments, and the classifier live in per-block CSV files. Round trips
//! are exact: floats are written in shortest round-trip form.

use std::fs;
use std::io::Write;
use std::path::Path;

use normlab_core::{MovingMoments, NormKind, NormParams, NormScheme};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};
use crate::model::{Block, Model, ModelSpec};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    in_channels: usize,
    height: usize,
    width: usize,
    block_widths: Vec<usize>,
    n_classes: usize,
    scheme: String,
    alpha: f64,
    epsilon: f64,
}

fn write_matrix(path: &Path, rows: usize, cols: usize, values: &[f64]) -> HarnessResult<()> {
    let mut out = String::new();
    out.push_str(&format!("{rows},{cols}\n"));
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_matrix(path: &Path) -> HarnessResult<(usize, usize, Vec<f64>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Input(format!("{}: empty file", path.display())))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Input(format!("{}: bad header: {e}", path.display())))?;
    let [rows, cols] = dims[..] else {
        return Err(HarnessError::Input(format!(
            "{}: header must be rows,cols",
            path.display()
        )));
    };
    let mut values = Vec::with_capacity(rows * cols);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        values.push(line.trim().parse::<f64>().map_err(|e| {
            HarnessError::Input(format!("{}: bad value {line:?}: {e}", path.display()))
        })?);
    }
    if values.len() != rows * cols {
        return Err(HarnessError::Input(format!(
            "{}: expected {} values, found {}",
            path.display(),
            rows * cols,
            values.len()
        )));
    }
    Ok((rows, cols, values))
}

fn write_norm(path: &Path, norm: &NormParams) -> HarnessResult<()> {
    let mut out = String::new();
    out.push_str(&format!("epsilon,{}\n", norm.epsilon));
    out.push_str("channel,gamma,beta\n");
    for (ci, (g, b)) in norm.gamma.iter().zip(&norm.beta).enumerate() {
        out.push_str(&format!("{ci},{g},{b}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_norm(path: &Path) -> HarnessResult<NormParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let bad = |msg: &str| HarnessError::Input(format!("{}: {msg}", path.display()));
    let epsilon: f64 = lines
        .next()
        .and_then(|l| l.strip_prefix("epsilon,"))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad("missing epsilon header"))?;
    if lines.next().map(str::trim) != Some("channel,gamma,beta") {
        return Err(bad("missing column header"));
    }
    let mut gamma = Vec::new();
    let mut beta = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [_, g, b] = fields[..] else {
            return Err(bad("rows must be channel,gamma,beta"));
        };
        gamma.push(g.trim().parse().map_err(|_| bad("bad gamma"))?);
        beta.push(b.trim().parse().map_err(|_| bad("bad beta"))?);
    }
    Ok(NormParams {
        gamma,
        beta,
        epsilon,
    })
}

/// Saves a model into `dir` (created if missing).
pub fn save_checkpoint(model: &Model, dir: &Path) -> HarnessResult<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        in_channels: model.spec.in_channels,
        height: model.spec.height,
        width: model.spec.width,
        block_widths: model.spec.block_widths.clone(),
        n_classes: model.spec.n_classes,
        scheme: model.scheme.kind.to_string(),
        alpha: model.scheme.alpha(),
        epsilon: model.blocks[0].norm.epsilon,
    };
    let mut manifest_file = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut manifest_file, &manifest)
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    manifest_file.write_all(b"\n")?;

    let mut c_in = model.spec.in_channels;
    for (i, block) in model.blocks.iter().enumerate() {
        let width = model.spec.block_widths[i];
        write_matrix(&dir.join(format!("block{i}_weight.csv")), width, c_in, &block.weight)?;
        write_matrix(&dir.join(format!("block{i}_bias.csv")), width, 1, &block.bias)?;
        write_norm(&dir.join(format!("block{i}_norm.csv")), &block.norm)?;
        let mut buf = Vec::new();
        block.moving.write_csv(&mut buf)?;
        fs::write(dir.join(format!("block{i}_moving.csv")), buf)?;
        c_in = width;
    }
    let feat = model.spec.n_features();
    write_matrix(
        &dir.join("classifier_weight.csv"),
        model.spec.n_classes,
        feat,
        &model.cls_weight,
    )?;
    write_matrix(&dir.join("classifier_bias.csv"), model.spec.n_classes, 1, &model.cls_bias)?;
    Ok(())
}

/// Loads a model saved by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> HarnessResult<Model> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", manifest_path.display())))?;
    let kind: NormKind = manifest
        .scheme
        .parse()
        .map_err(|e: normlab_core::Error| HarnessError::Input(e.to_string()))?;
    let scheme = NormScheme::new(kind)
        .with_alpha(manifest.alpha)
        .map_err(HarnessError::from)?;
    let spec = ModelSpec {
        in_channels: manifest.in_channels,
        height: manifest.height,
        width: manifest.width,
        block_widths: manifest.block_widths.clone(),
        n_classes: manifest.n_classes,
    };
    spec.validate()?;

    let mut blocks = Vec::with_capacity(spec.block_widths.len());
    let mut c_in = spec.in_channels;
    for (i, &width) in spec.block_widths.iter().enumerate() {
        let (rows, cols, weight) = read_matrix(&dir.join(format!("block{i}_weight.csv")))?;
        if rows != width || cols != c_in {
            return Err(HarnessError::Input(format!(
                "block {i} weight is {rows}x{cols}, expected {width}x{c_in}"
            )));
        }
        let (_, _, bias) = read_matrix(&dir.join(format!("block{i}_bias.csv")))?;
        let norm = read_norm(&dir.join(format!("block{i}_norm.csv")))?;
        if bias.len() != width || norm.gamma.len() != width {
            return Err(HarnessError::Input(format!("block {i} has inconsistent widths")));
        }
        let moving_text = fs::read(dir.join(format!("block{i}_moving.csv")))
            .map_err(|e| HarnessError::Input(format!("block {i} moving moments: {e}")))?;
        let moving = MovingMoments::read_csv(moving_text.as_slice()).map_err(HarnessError::from)?;
        if moving.n_channels() != width {
            return Err(HarnessError::Input(format!(
                "block {i} moving moments track {} channels, expected {width}",
                moving.n_channels()
            )));
        }
        blocks.push(Block {
            weight,
            bias,
            norm,
            moving,
        });
        c_in = width;
    }
    let (rows, cols, cls_weight) = read_matrix(&dir.join("classifier_weight.csv"))?;
    if rows != spec.n_classes || cols != spec.n_features() {
        return Err(HarnessError::Input(format!(
            "classifier weight is {rows}x{cols}, expected {}x{}",
            spec.n_classes,
            spec.n_features()
        )));
    }
    let (_, _, cls_bias) = read_matrix(&dir.join("classifier_bias.csv"))?;
    if cls_bias.len() != spec.n_classes {
        return Err(HarnessError::Input("classifier bias length mismatch".into()));
    }
    Ok(Model {
        spec,
        scheme,
        blocks,
        cls_weight,
        cls_bias,
    })
}
