//! Small fixed-architecture host network for the normalization layers.
//!
//! Blocks are pointwise channel-mixing affines (1x1 receptive field)
//! followed by a normalization layer and a rectifier, so spatial extent
//! exists for convolutional normalization semantics while every backward
//! step stays a per-position linear map. A global average pool and a
//! linear classifier sit on top. All gradients are written by hand and
//! held to the finite-difference oracle.

use normlab_core::{
    backward, forward_infer, forward_train, ForwardCache, MovingMoments, NormParams, NormScheme,
    Tensor4,
};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HarnessError, HarnessResult};
use crate::rng_from;

/// Architecture description: input grid, block widths, class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub block_widths: Vec<usize>,
    pub n_classes: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> HarnessResult<()> {
        if self.in_channels == 0
            || self.height == 0
            || self.width == 0
            || self.n_classes < 2
            || self.block_widths.is_empty()
            || self.block_widths.contains(&0)
        {
            return Err(HarnessError::Config(format!("invalid model spec {self:?}")));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        *self.block_widths.last().unwrap()
    }
}

/// One channel-mixing block with its own normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Mixing matrix, `[out][in]` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub norm: NormParams,
    pub moving: MovingMoments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub scheme: NormScheme,
    pub blocks: Vec<Block>,
    /// Classifier matrix, `[class][feature]` row-major.
    pub cls_weight: Vec<f64>,
    pub cls_bias: Vec<f64>,
}

/// Checks a scheme against a batch size and every block width.
pub fn scheme_valid_for(
    scheme: &NormScheme,
    batch_size: usize,
    widths: &[usize],
) -> HarnessResult<()> {
    for &w in widths {
        scheme
            .validate((batch_size.max(1), w, 1, 1))
            .map_err(HarnessError::from)?;
    }
    Ok(())
}

/// Per-block state kept by a training forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    input: Tensor4,
    cache: ForwardCache,
    norm_out: Tensor4,
    relu_out: Tensor4,
}

impl BlockTrace {
    /// Output of the block's normalization layer (pre-rectifier).
    pub fn norm_out(&self) -> &Tensor4 {
        &self.norm_out
    }

    pub fn cache(&self) -> &ForwardCache {
        &self.cache
    }
}

/// Everything a training forward produces.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub blocks: Vec<BlockTrace>,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
    pub batch: usize,
}

/// Inference forward output: logits plus each normalization layer's
/// output (for range tracking).
#[derive(Debug, Clone)]
pub struct InferTrace {
    pub logits: Vec<f64>,
    pub norm_outputs: Vec<Tensor4>,
    pub batch: usize,
}

/// Gradients of one block's parameters.
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub d_weight: Vec<f64>,
    pub d_bias: Vec<f64>,
    pub d_gamma: Vec<f64>,
    pub d_beta: Vec<f64>,
}

/// Gradients of all trainable parameters.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub blocks: Vec<BlockGrads>,
    pub d_cls_weight: Vec<f64>,
    pub d_cls_bias: Vec<f64>,
}

fn pointwise_affine(x: &Tensor4, weight: &[f64], bias: &[f64], out_ch: usize) -> HarnessResult<Tensor4> {
    let (n, c_in, h, w) = x.shape();
    let spatial = h * w;
    let values = x.values();
    let mut out = vec![0.0; n * out_ch * spatial];
    for ni in 0..n {
        for o in 0..out_ch {
            let row = &weight[o * c_in..(o + 1) * c_in];
            let dst = (ni * out_ch + o) * spatial;
            for (i, &wv) in row.iter().enumerate() {
                let src = (ni * c_in + i) * spatial;
                for p in 0..spatial {
                    out[dst + p] += wv * values[src + p];
                }
            }
            for v in &mut out[dst..dst + spatial] {
                *v += bias[o];
            }
        }
    }
    Tensor4::from_values(n, out_ch, h, w, out).map_err(HarnessError::from)
}

/// Gradients of the pointwise affine: weights, bias, and input.
fn pointwise_affine_backward(
    x: &Tensor4,
    weight: &[f64],
    dz: &Tensor4,
) -> (Vec<f64>, Vec<f64>, Tensor4) {
    let (n, c_in, h, w) = x.shape();
    let out_ch = dz.n_channels();
    let spatial = h * w;
    let xv = x.values();
    let dzv = dz.values();
    let mut d_weight = vec![0.0; out_ch * c_in];
    let mut d_bias = vec![0.0; out_ch];
    let mut d_input = vec![0.0; xv.len()];
    for ni in 0..n {
        for o in 0..out_ch {
            let dz_start = (ni * out_ch + o) * spatial;
            let dz_slice = &dzv[dz_start..dz_start + spatial];
            d_bias[o] += dz_slice.iter().sum::<f64>();
            for i in 0..c_in {
                let x_start = (ni * c_in + i) * spatial;
                let mut acc = 0.0;
                let wv = weight[o * c_in + i];
                for p in 0..spatial {
                    acc += dz_slice[p] * xv[x_start + p];
                    d_input[x_start + p] += wv * dz_slice[p];
                }
                d_weight[o * c_in + i] += acc;
            }
        }
    }
    let d_input = Tensor4::from_values(n, c_in, h, w, d_input).expect("gradient shape");
    (d_weight, d_bias, d_input)
}

impl Model {
    /// Fresh model with scaled-Gaussian mixing weights; deterministic in
    /// the seed.
    pub fn init(
        spec: ModelSpec,
        scheme: NormScheme,
        rho: f64,
        epsilon: f64,
        seed: u64,
    ) -> HarnessResult<Self> {
        spec.validate()?;
        let mut rng = rng_from(seed);
        let mut gaussian_matrix = |rows: usize, cols: usize| -> Vec<f64> {
            let scale = (1.0 / cols as f64).sqrt();
            (0..rows * cols)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let mut blocks = Vec::with_capacity(spec.block_widths.len());
        let mut c_in = spec.in_channels;
        for &width in &spec.block_widths {
            let mut norm = NormParams::init(width);
            norm.epsilon = epsilon;
            blocks.push(Block {
                weight: gaussian_matrix(width, c_in),
                bias: vec![0.0; width],
                norm,
                moving: MovingMoments::new(width, rho).map_err(HarnessError::from)?,
            });
            c_in = width;
        }
        let cls_weight = gaussian_matrix(spec.n_classes, spec.n_features());
        let cls_bias = vec![0.0; spec.n_classes];
        Ok(Self {
            spec,
            scheme,
            blocks,
            cls_weight,
            cls_bias,
        })
    }

    pub fn n_norm_layers(&self) -> usize {
        self.blocks.len()
    }

    fn pool_and_classify(&self, last: &Tensor4) -> (Vec<f64>, Vec<f64>) {
        let (n, c, h, w) = last.shape();
        let spatial = (h * w) as f64;
        let values = last.values();
        let mut pooled = vec![0.0; n * c];
        for ni in 0..n {
            for ci in 0..c {
                let start = (ni * c + ci) * h * w;
                pooled[ni * c + ci] =
                    values[start..start + h * w].iter().sum::<f64>() / spatial;
            }
        }
        let k = self.spec.n_classes;
        let mut logits = vec![0.0; n * k];
        for ni in 0..n {
            for ki in 0..k {
                let row = &self.cls_weight[ki * c..(ki + 1) * c];
                logits[ni * k + ki] = self.cls_bias[ki]
                    + row
                        .iter()
                        .zip(&pooled[ni * c..(ni + 1) * c])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
        }
        (pooled, logits)
    }

    /// Training-mode forward; updates every block's moving moments.
    pub fn forward_train(&mut self, x: &Tensor4) -> HarnessResult<TrainTrace> {
        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut current = x.clone();
        for block in &mut self.blocks {
            let z = pointwise_affine(&current, &block.weight, &block.bias, block.norm.n_channels())?;
            let (norm_out, cache) =
                forward_train(&z, &block.norm, &self.scheme, &mut block.moving)?;
            let relu_out = norm_out.map_cells(|v| v.max(0.0))?;
            traces.push(BlockTrace {
                input: current,
                cache,
                norm_out,
                relu_out: relu_out.clone(),
            });
            current = relu_out;
        }
        let (pooled, logits) = self.pool_and_classify(&current);
        Ok(TrainTrace {
            blocks: traces,
            pooled,
            logits,
            batch: x.n_examples(),
        })
    }

    /// Inference-mode forward at example weight `alpha` (`None` uses the
    /// scheme's weight). Output is independent of batch composition.
    pub fn forward_infer(&self, x: &Tensor4, alpha: Option<f64>) -> HarnessResult<InferTrace> {
        let mut norm_outputs = Vec::with_capacity(self.blocks.len());
        let mut current = x.clone();
        for block in &self.blocks {
            let z = pointwise_affine(&current, &block.weight, &block.bias, block.norm.n_channels())?;
            let norm_out = forward_infer(&z, &block.norm, &self.scheme, &block.moving, alpha)?;
            current = norm_out.map_cells(|v| v.max(0.0))?;
            norm_outputs.push(norm_out);
        }
        let (_, logits) = self.pool_and_classify(&current);
        Ok(InferTrace {
            logits,
            norm_outputs,
            batch: x.n_examples(),
        })
    }

    /// Backpropagates `d_logits` (batch-major, one row per example)
    /// through the classifier, pool, and every block.
    pub fn backward(&self, trace: &TrainTrace, d_logits: &[f64]) -> HarnessResult<ModelGrads> {
        let n = trace.batch;
        let k = self.spec.n_classes;
        let feat = self.spec.n_features();
        if d_logits.len() != n * k {
            return Err(HarnessError::Config(format!(
                "expected {} logit gradients, got {}",
                n * k,
                d_logits.len()
            )));
        }
        let mut d_cls_weight = vec![0.0; k * feat];
        let mut d_cls_bias = vec![0.0; k];
        let mut d_pooled = vec![0.0; n * feat];
        for ni in 0..n {
            for ki in 0..k {
                let g = d_logits[ni * k + ki];
                d_cls_bias[ki] += g;
                for ci in 0..feat {
                    d_cls_weight[ki * feat + ci] += g * trace.pooled[ni * feat + ci];
                    d_pooled[ni * feat + ci] += g * self.cls_weight[ki * feat + ci];
                }
            }
        }

        let last = trace.blocks.last().expect("at least one block");
        let (_, _, h, w) = last.relu_out.shape();
        let spatial = (h * w) as f64;
        let mut d_current = Tensor4::from_fn(n, feat, h, w, |ni, ci, _, _| {
            d_pooled[ni * feat + ci] / spatial
        })
        .map_err(HarnessError::from)?;

        let mut block_grads = vec![None; self.blocks.len()];
        for (i, (block, bt)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            // Rectifier gate, then the normalization layer's gradients.
            let gated = {
                let mask = bt.norm_out.values();
                let dv = d_current.values();
                let vals = dv
                    .iter()
                    .zip(mask)
                    .map(|(&d, &m)| if m > 0.0 { d } else { 0.0 })
                    .collect();
                let (bn, bc, bh, bw) = bt.norm_out.shape();
                Tensor4::from_values(bn, bc, bh, bw, vals).map_err(HarnessError::from)?
            };
            let norm_grads = backward(&bt.cache, &gated)?;
            let (d_weight, d_bias, d_input) =
                pointwise_affine_backward(&bt.input, &block.weight, &norm_grads.d_input);
            block_grads[i] = Some(BlockGrads {
                d_weight,
                d_bias,
                d_gamma: norm_grads.d_gamma,
                d_beta: norm_grads.d_beta,
            });
            d_current = d_input;
        }
        Ok(ModelGrads {
            blocks: block_grads.into_iter().map(Option::unwrap).collect(),
            d_cls_weight,
            d_cls_bias,
        })
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.weight.len() + b.bias.len() + b.norm.gamma.len() + b.norm.beta.len())
            .sum::<usize>()
            + self.cls_weight.len()
            + self.cls_bias.len()
    }

    /// Trainable parameters flattened in canonical order: per block
    /// (weight, bias, gamma, beta), then classifier weight and bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            out.extend_from_slice(&b.weight);
            out.extend_from_slice(&b.bias);
            out.extend_from_slice(&b.norm.gamma);
            out.extend_from_slice(&b.norm.beta);
        }
        out.extend_from_slice(&self.cls_weight);
        out.extend_from_slice(&self.cls_bias);
        out
    }

    /// Writes back parameters flattened by [`Model::params_flat`].
    pub fn set_params_flat(&mut self, values: &[f64]) -> HarnessResult<()> {
        if values.len() != self.param_count() {
            return Err(HarnessError::Config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&values[at..at + dst.len()]);
            at += dst.len();
        };
        for b in &mut self.blocks {
            take(&mut b.weight);
            take(&mut b.bias);
            take(&mut b.norm.gamma);
            take(&mut b.norm.beta);
        }
        take(&mut self.cls_weight);
        take(&mut self.cls_bias);
        Ok(())
    }
}

impl ModelGrads {
    /// Gradients flattened in the same order as [`Model::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend_from_slice(&b.d_weight);
            out.extend_from_slice(&b.d_bias);
            out.extend_from_slice(&b.d_gamma);
            out.extend_from_slice(&b.d_beta);
        }
        out.extend_from_slice(&self.d_cls_weight);
        out.extend_from_slice(&self.d_cls_bias);
        out
    }
}
