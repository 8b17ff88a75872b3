//! Forward and backward passes of the unified normalization layer.
//!
//! Training normalizes with the statistics of the scheme's train-mode
//! partition and folds the batch into the moving moments. Inference
//! normalizes every example from its own cells only, blended with the
//! moving moments by the example weight `alpha`, so the output of an
//! example never depends on the rest of the inference batch.

use crate::error::{Error, Result};
use crate::moments::{blend, compute_moments, Moments, MovingMoments};
use crate::partition::{partition_of, Mode, NormScheme, StatPartition};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Default variance stabilizer.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel scale (`gamma`), shift (`beta`), and stabilizer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<S = f64> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub epsilon: S,
}

impl<S: Scalar> NormParams<S> {
    /// Standard initialization: scale 1, shift 0, default stabilizer.
    pub fn init(n_channels: usize) -> Self {
        Self {
            gamma: vec![S::one(); n_channels],
            beta: vec![S::zero(); n_channels],
            epsilon: S::from_f64(DEFAULT_EPSILON),
        }
    }

    pub fn new(gamma: Vec<S>, beta: Vec<S>, epsilon: S) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::Dimension(format!(
                "gamma and beta lengths differ: {} vs {}",
                gamma.len(),
                beta.len()
            )));
        }
        if !(epsilon > S::zero() && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        let params = Self { gamma, beta, epsilon };
        params.check(params.gamma.len())?;
        Ok(params)
    }

    pub fn n_channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, n_channels: usize) -> Result<()> {
        if self.gamma.len() != n_channels || self.beta.len() != n_channels {
            return Err(Error::Dimension(format!(
                "params cover {} channels, input has {n_channels}",
                self.gamma.len()
            )));
        }
        if self
            .gamma
            .iter()
            .chain(&self.beta)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numeric("non-finite gamma/beta".into()));
        }
        if !(self.epsilon >= S::zero() && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Everything the backward pass needs from a training forward.
#[derive(Debug, Clone)]
pub struct ForwardCache<S = f64> {
    input: Tensor4<S>,
    partition: StatPartition,
    moments: Moments<S>,
    x_hat: Tensor4<S>,
    gamma: Vec<S>,
    inv_std: Vec<S>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.input.shape()
    }

    /// Per-group moments the forward actually normalized with.
    pub fn moments(&self) -> &Moments<S> {
        &self.moments
    }

    pub fn partition(&self) -> &StatPartition {
        &self.partition
    }

    /// Normalized pre-affine values.
    pub fn normalized(&self) -> &Tensor4<S> {
        &self.x_hat
    }
}

/// Gradients of one normalization layer.
#[derive(Debug, Clone)]
pub struct GradientBundle<S = f64> {
    pub d_input: Tensor4<S>,
    pub d_gamma: Vec<S>,
    pub d_beta: Vec<S>,
}

/// Applies the normalization given already-chosen per-group moments.
fn apply_norm<S: Scalar>(
    x: &Tensor4<S>,
    params: &NormParams<S>,
    p: &StatPartition,
    m: &Moments<S>,
) -> Result<(Tensor4<S>, Tensor4<S>, Vec<S>)> {
    let (n, c, h, w) = x.shape();
    let inv_std: Vec<S> = m
        .var
        .iter()
        .map(|&v| (v + params.epsilon).sqrt().recip())
        .collect();
    let spatial = h * w;
    let values = x.values();
    let mut x_hat = Vec::with_capacity(values.len());
    let mut y = Vec::with_capacity(values.len());
    for ni in 0..n {
        for ci in 0..c {
            let g = p.group_of(ni, ci);
            let (mu, is) = (m.mean[g], inv_std[g]);
            let (ga, be) = (params.gamma[ci], params.beta[ci]);
            let start = (ni * c + ci) * spatial;
            for &v in &values[start..start + spatial] {
                let xh = (v - mu) * is;
                x_hat.push(xh);
                y.push(ga * xh + be);
            }
        }
    }
    let wrap = |e: Error| match e {
        Error::Numeric(_) => Error::Numeric("normalization produced non-finite output".into()),
        other => other,
    };
    let x_hat = Tensor4::from_values(n, c, h, w, x_hat).map_err(wrap)?;
    let y = Tensor4::from_values(n, c, h, w, y).map_err(wrap)?;
    Ok((y, x_hat, inv_std))
}

/// Training forward without the moving-moment update; shared with the
/// finite-difference oracle, which must not advance the averages.
fn forward_train_stats<S: Scalar>(
    x: &Tensor4<S>,
    params: &NormParams<S>,
    scheme: &NormScheme,
) -> Result<(Tensor4<S>, ForwardCache<S>)> {
    params.check(x.n_channels())?;
    let p = partition_of(scheme, x.shape(), Mode::Train)?;
    let m = compute_moments(x, &p)?;
    let (y, x_hat, inv_std) = apply_norm(x, params, &p, &m)?;
    let cache = ForwardCache {
        input: x.clone(),
        partition: p,
        moments: m,
        x_hat,
        gamma: params.gamma.clone(),
        inv_std,
    };
    Ok((y, cache))
}

/// Training-mode forward: normalizes with the scheme's train partition
/// and folds the batch into `moving`.
pub fn forward_train<S: Scalar>(
    x: &Tensor4<S>,
    params: &NormParams<S>,
    scheme: &NormScheme,
    moving: &mut MovingMoments<S>,
) -> Result<(Tensor4<S>, ForwardCache<S>)> {
    let out = forward_train_stats(x, params, scheme)?;
    moving.update(x)?;
    Ok(out)
}

/// Inference-mode forward with example weight `alpha` (`None` uses the
/// scheme's configured weight).
pub fn forward_infer<S: Scalar>(
    x: &Tensor4<S>,
    params: &NormParams<S>,
    scheme: &NormScheme,
    moving: &MovingMoments<S>,
    alpha: Option<f64>,
) -> Result<Tensor4<S>> {
    params.check(x.n_channels())?;
    let alpha = alpha.unwrap_or_else(|| scheme.alpha());
    let p = partition_of(scheme, x.shape(), Mode::Infer)?;
    let example = compute_moments(x, &p)?;
    let blended = blend(&example, &p, moving, alpha)?;
    let (y, _, _) = apply_norm(x, params, &p, &blended)?;
    Ok(y)
}

/// Gradients of the training forward with respect to input, scale, and
/// shift, given the upstream gradient `dy`.
pub fn backward<S: Scalar>(cache: &ForwardCache<S>, dy: &Tensor4<S>) -> Result<GradientBundle<S>> {
    let (n, c, h, w) = cache.input.shape();
    if dy.shape() != cache.input.shape() {
        return Err(Error::Dimension(format!(
            "upstream gradient shape {:?} does not match cache shape {:?}",
            dy.shape(),
            cache.input.shape()
        )));
    }
    let p = &cache.partition;
    let spatial = h * w;
    let dy_values = dy.values();
    let xh_values = cache.x_hat.values();

    let mut d_gamma = vec![S::zero(); c];
    let mut d_beta = vec![S::zero(); c];
    // Per-group sums of the gradient reaching x_hat (gamma folded in) and
    // of its product with x_hat; both feed the within-group projection.
    let mut sum_g = vec![S::zero(); p.n_groups()];
    let mut sum_g_xh = vec![S::zero(); p.n_groups()];
    for ni in 0..n {
        for ci in 0..c {
            let g = p.group_of(ni, ci);
            let ga = cache.gamma[ci];
            let start = (ni * c + ci) * spatial;
            for i in start..start + spatial {
                let (d, xh) = (dy_values[i], xh_values[i]);
                d_beta[ci] += d;
                d_gamma[ci] += d * xh;
                sum_g[g] += ga * d;
                sum_g_xh[g] += ga * d * xh;
            }
        }
    }

    let mut d_input = Vec::with_capacity(dy_values.len());
    for ni in 0..n {
        for ci in 0..c {
            let g = p.group_of(ni, ci);
            let count = S::from_count(p.cell_count(g));
            let (mean_g, mean_g_xh) = (sum_g[g] / count, sum_g_xh[g] / count);
            let start = (ni * c + ci) * spatial;
            for i in start..start + spatial {
                // Project out the components that shift the group mean
                // and variance; what remains passes through 1/std.
                d_input.push(
                    cache.inv_std[g]
                        * (cache.gamma[ci] * dy_values[i] - mean_g - xh_values[i] * mean_g_xh),
                );
            }
        }
    }
    Ok(GradientBundle {
        d_input: Tensor4::from_values(n, c, h, w, d_input)?,
        d_gamma,
        d_beta,
    })
}

/// Central-finite-difference check of [`backward`].
///
/// Perturbs every input cell, every `gamma`, and every `beta` by
/// `±step`, differentiates the scalar loss `<y, dy>` numerically, and
/// returns the worst relative error against the analytic gradients
/// (relative error uses `max(1, |analytic|, |numeric|)` as denominator).
pub fn finite_diff_check<S: Scalar>(
    x: &Tensor4<S>,
    params: &NormParams<S>,
    scheme: &NormScheme,
    dy: &Tensor4<S>,
    step: f64,
) -> Result<f64> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    let (y0, cache) = forward_train_stats(x, params, scheme)?;
    if dy.shape() != y0.shape() {
        return Err(Error::Dimension("dy shape mismatch".into()));
    }
    let grads = backward(&cache, dy)?;
    let loss = |y: &Tensor4<S>| -> f64 {
        y.values()
            .iter()
            .zip(dy.values())
            .map(|(&a, &b)| (a * b).as_f64())
            .sum()
    };
    let h = S::from_f64(step);
    let mut worst = 0.0f64;
    let mut record = |analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs());
        if rel > worst {
            worst = rel;
        }
    };

    let (n, c, hh, ww) = x.shape();
    for i in 0..x.n_cells() {
        let probe = |sign: S| -> Result<f64> {
            let mut values = x.values().to_vec();
            values[i] += sign * h;
            let shifted = Tensor4::from_values(n, c, hh, ww, values)?;
            Ok(loss(&forward_train_stats(&shifted, params, scheme)?.0))
        };
        let numeric = (probe(S::one())? - probe(-S::one())?) / (2.0 * step);
        record(grads.d_input.values()[i].as_f64(), numeric);
    }
    for ci in 0..c {
        for gamma_axis in [true, false] {
            let probe = |sign: S| -> Result<f64> {
                let mut shifted = params.clone();
                let slot = if gamma_axis {
                    &mut shifted.gamma[ci]
                } else {
                    &mut shifted.beta[ci]
                };
                *slot += sign * h;
                Ok(loss(&forward_train_stats(x, &shifted, scheme)?.0))
            };
            let numeric = (probe(S::one())? - probe(-S::one())?) / (2.0 * step);
            let analytic = if gamma_axis {
                grads.d_gamma[ci]
            } else {
                grads.d_beta[ci]
            };
            record(analytic.as_f64(), numeric);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn column(values: Vec<f64>) -> Tensor4<f64> {
        let n = values.len();
        Tensor4::from_values(n, 1, 1, 1, values).unwrap()
    }

    fn random_tensor(rng: &mut StdRng, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
        Tensor4::from_fn(n, c, h, w, |_, _, _, _| rng.random_range(-2.0..2.0)).unwrap()
    }

    fn params_eps(c: usize, epsilon: f64) -> NormParams<f64> {
        NormParams {
            epsilon,
            ..NormParams::init(c)
        }
    }

    #[test]
    fn pair_normalizes_to_unit_values() {
        // Tightness of the output bound at B = 2: exactly +-sqrt(B-1).
        let x = column(vec![0.0, 2.0]);
        let mut moving = MovingMoments::new(1, 0.99).unwrap();
        let (y, _) =
            forward_train(&x, &params_eps(1, 0.0), &NormScheme::batch(), &mut moving).unwrap();
        assert_eq!(y.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_input_returns_beta() {
        // Dyadic constant so the group mean is exact and x_hat is 0.
        let x = Tensor4::from_values(4, 6, 2, 2, vec![3.75; 96]).unwrap();
        let mut params = NormParams::init(6);
        params.beta = (0..6).map(|c| c as f64 * 0.5 - 1.0).collect();
        for scheme in [
            NormScheme::batch(),
            NormScheme::ghost(2),
            NormScheme::group(3),
            NormScheme::batch_group(2, 2),
        ] {
            let mut moving = MovingMoments::new(6, 0.99).unwrap();
            let (y, _) = forward_train(&x, &params, &scheme, &mut moving).unwrap();
            for ni in 0..4 {
                for ci in 0..6 {
                    for hi in 0..2 {
                        for wi in 0..2 {
                            assert_eq!(y.get(ni, ci, hi, wi), params.beta[ci]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ghost_blocks_normalize_independently() {
        // Oracle: plain batch normalization applied separately per block.
        let x = column(vec![0.0, 2.0, 10.0, 14.0]);
        let mut moving = MovingMoments::new(1, 0.99).unwrap();
        let (y, _) =
            forward_train(&x, &params_eps(1, 0.0), &NormScheme::ghost(2), &mut moving).unwrap();
        assert_eq!(y.values(), &[-1.0, 1.0, -1.0, 1.0]);

        let mut oracle = Vec::new();
        for block in [vec![0.0, 2.0], vec![10.0, 14.0]] {
            let mut mv = MovingMoments::new(1, 0.99).unwrap();
            let (yb, _) = forward_train(
                &column(block),
                &params_eps(1, 0.0),
                &NormScheme::batch(),
                &mut mv,
            )
            .unwrap();
            oracle.extend_from_slice(yb.values());
        }
        assert_eq!(y.values(), &oracle[..]);
    }

    #[test]
    fn forward_updates_moving_moments() {
        let x = column(vec![1.0, 3.0]);
        let mut moving = MovingMoments::new(1, 0.9).unwrap();
        forward_train(&x, &NormParams::init(1), &NormScheme::batch(), &mut moving).unwrap();
        assert_abs_diff_eq!(moving.first()[0], 0.1 * 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(moving.second()[0], 0.9 + 0.1 * 5.0, epsilon = 1e-15);
    }

    #[test]
    fn normalized_groups_have_zero_mean_unit_variance() {
        let mut rng = StdRng::seed_from_u64(11);
        for scheme in [
            NormScheme::batch(),
            NormScheme::ghost(2),
            NormScheme::group(2),
            NormScheme::batch_group(2, 3),
        ] {
            let x = random_tensor(&mut rng, 4, 6, 3, 2);
            let mut moving = MovingMoments::new(6, 0.99).unwrap();
            let (_, cache) =
                forward_train(&x, &params_eps(6, 1e-12), &scheme, &mut moving).unwrap();
            let p = cache.partition();
            let m = compute_moments(cache.normalized(), p).unwrap();
            for g in 0..p.n_groups() {
                if cache.moments().var[g] > 1e-8 {
                    assert!(m.mean[g].abs() <= 1e-9, "{} group {g} mean", scheme.kind);
                    assert!((m.var[g] - 1.0).abs() <= 1e-6, "{} group {g} var", scheme.kind);
                }
            }
        }
    }

    #[test]
    fn train_outputs_respect_group_size_bound() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..200 {
            let x = random_tensor(&mut rng, 4, 4, 2, 2);
            let mut params = NormParams::init(4);
            for ci in 0..4 {
                params.gamma[ci] = rng.random_range(-2.0..2.0);
                params.beta[ci] = rng.random_range(-2.0..2.0);
            }
            let scheme = match rng.random_range(0..4) {
                0 => NormScheme::batch(),
                1 => NormScheme::ghost(2),
                2 => NormScheme::group(2),
                _ => NormScheme::batch_group(2, 2),
            };
            let mut moving = MovingMoments::new(4, 0.99).unwrap();
            let (y, cache) = forward_train(&x, &params, &scheme, &mut moving).unwrap();
            let p = cache.partition();
            for ni in 0..4 {
                for ci in 0..4 {
                    let half = params.gamma[ci].abs()
                        * ((p.cell_count(p.group_of(ni, ci)) - 1) as f64).sqrt();
                    for hi in 0..2 {
                        for wi in 0..2 {
                            let v = y.get(ni, ci, hi, wi);
                            assert!(
                                v >= params.beta[ci] - half - 1e-9
                                    && v <= params.beta[ci] + half + 1e-9,
                                "{} out of range",
                                scheme.kind
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reduction_pairs_forward_identically() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = random_tensor(&mut rng, 4, 6, 2, 2);
        let mut params = NormParams::init(6);
        for ci in 0..6 {
            params.gamma[ci] = rng.random_range(0.5..1.5);
            params.beta[ci] = rng.random_range(-0.5..0.5);
        }
        let pairs = [
            (NormScheme::ghost(4), NormScheme::batch()),
            (NormScheme::batch_group(1, 3), NormScheme::group(3)),
            (NormScheme::batch_group(4, 6), NormScheme::batch()),
        ];
        for (a, b) in pairs {
            let mut mv_a = MovingMoments::new(6, 0.99).unwrap();
            let mut mv_b = MovingMoments::new(6, 0.99).unwrap();
            let (ya, _) = forward_train(&x, &params, &a, &mut mv_a).unwrap();
            let (yb, _) = forward_train(&x, &params, &b, &mut mv_b).unwrap();
            assert_eq!(ya.values(), yb.values(), "{} vs {}", a.kind, b.kind);
        }
    }

    #[test]
    fn inference_ignores_batch_composition() {
        let mut rng = StdRng::seed_from_u64(7);
        let x = random_tensor(&mut rng, 4, 6, 2, 2);
        let params = NormParams::init(6);
        let mut moving = MovingMoments::new(6, 0.99).unwrap();
        moving.update(&random_tensor(&mut rng, 8, 6, 2, 2)).unwrap();
        for scheme in [NormScheme::batch(), NormScheme::ghost(2), NormScheme::group(3)] {
            let y = forward_infer(&x, &params, &scheme, &moving, Some(0.3)).unwrap();
            // Swap examples 0 and 2, replace example 3 with noise.
            let swapped = Tensor4::from_fn(4, 6, 2, 2, |n, c, h, w| {
                let src = match n {
                    0 => 2,
                    2 => 0,
                    3 => return rng.random_range(-5.0..5.0),
                    other => other,
                };
                x.get(src, c, h, w)
            })
            .unwrap();
            let y2 = forward_infer(&swapped, &params, &scheme, &moving, Some(0.3)).unwrap();
            for ci in 0..6 {
                for hi in 0..2 {
                    for wi in 0..2 {
                        assert_eq!(y.get(0, ci, hi, wi), y2.get(2, ci, hi, wi));
                        assert_eq!(y.get(1, ci, hi, wi), y2.get(1, ci, hi, wi));
                    }
                }
            }
        }
    }

    #[test]
    fn alpha_zero_matches_classical_inference() {
        let mut rng = StdRng::seed_from_u64(9);
        let x = random_tensor(&mut rng, 3, 4, 2, 2);
        let mut params = NormParams::init(4);
        for ci in 0..4 {
            params.gamma[ci] = rng.random_range(0.5..1.5);
            params.beta[ci] = rng.random_range(-0.5..0.5);
        }
        let mut moving = MovingMoments::new(4, 0.99).unwrap();
        for _ in 0..3 {
            moving.update(&random_tensor(&mut rng, 4, 4, 2, 2)).unwrap();
        }
        let y = forward_infer(&x, &params, &NormScheme::batch(), &moving, Some(0.0)).unwrap();
        // Classical moving-average inference, channel by channel.
        for ni in 0..3 {
            for ci in 0..4 {
                let mu = moving.first()[ci];
                let var = (moving.second()[ci] - mu * mu).max(0.0);
                let inv = 1.0 / (var + params.epsilon).sqrt();
                for hi in 0..2 {
                    for wi in 0..2 {
                        let expect = params.gamma[ci] * ((x.get(ni, ci, hi, wi) - mu) * inv)
                            + params.beta[ci];
                        assert_eq!(y.get(ni, ci, hi, wi), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn alpha_one_group_norm_matches_training() {
        let mut rng = StdRng::seed_from_u64(13);
        let x = random_tensor(&mut rng, 1, 6, 3, 3);
        let params = NormParams::init(6);
        let scheme = NormScheme::group(3);
        let moving = MovingMoments::new(6, 0.99).unwrap();
        let infer = forward_infer(&x, &params, &scheme, &moving, Some(1.0)).unwrap();
        let mut mv = MovingMoments::new(6, 0.99).unwrap();
        let (train, _) = forward_train(&x, &params, &scheme, &mut mv).unwrap();
        assert_eq!(infer.values(), train.values());
    }

    #[test]
    fn alpha_one_pointwise_input_collapses_to_beta() {
        // H = W = 1 with per-channel groups: the example's own variance
        // is exactly zero, so the output is pure shift.
        let x = column(vec![4.2, -1.3, 0.0]);
        let mut params = NormParams::init(1);
        params.beta = vec![0.75];
        let moving = MovingMoments::new(1, 0.99).unwrap();
        let y = forward_infer(&x, &params, &NormScheme::batch(), &moving, Some(1.0)).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn backward_hand_case() {
        let x = column(vec![0.0, 2.0]);
        let mut moving = MovingMoments::new(1, 0.99).unwrap();
        let (_, cache) =
            forward_train(&x, &params_eps(1, 0.0), &NormScheme::batch(), &mut moving).unwrap();
        let grads = backward(&cache, &column(vec![1.0, 1.0])).unwrap();
        assert_eq!(grads.d_beta, vec![2.0]);
        assert_eq!(grads.d_gamma, vec![0.0]);
        assert_eq!(grads.d_input.values(), &[0.0, 0.0]);
    }

    #[test]
    fn constant_upstream_gradient_vanishes_within_group() {
        let mut rng = StdRng::seed_from_u64(17);
        let x = random_tensor(&mut rng, 4, 4, 2, 2);
        let dy = Tensor4::from_values(4, 4, 2, 2, vec![0.8; 64]).unwrap();
        // Uniform gamma keeps dy constant after folding.
        let mut params = NormParams::init(4);
        params.gamma = vec![1.3; 4];
        let mut moving = MovingMoments::new(4, 0.99).unwrap();
        let (_, cache) = forward_train(&x, &params, &NormScheme::group(2), &mut moving).unwrap();
        let grads = backward(&cache, &dy).unwrap();
        for &v in grads.d_input.values() {
            assert!(v.abs() <= 1e-12, "expected vanishing gradient, got {v}");
        }
    }

    #[test]
    fn gamma_gradient_zero_on_constant_input() {
        let x = Tensor4::from_values(4, 2, 1, 1, vec![5.0; 8]).unwrap();
        let mut rng = StdRng::seed_from_u64(19);
        let dy = random_tensor(&mut rng, 4, 2, 1, 1);
        let mut moving = MovingMoments::new(2, 0.99).unwrap();
        let (_, cache) =
            forward_train(&x, &NormParams::init(2), &NormScheme::batch(), &mut moving).unwrap();
        let grads = backward(&cache, &dy).unwrap();
        assert_eq!(grads.d_gamma, vec![0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(29);
        for scheme in [
            NormScheme::batch(),
            NormScheme::ghost(2),
            NormScheme::group(2),
            NormScheme::batch_group(2, 2),
        ] {
            let x = random_tensor(&mut rng, 4, 4, 2, 2);
            let dy = random_tensor(&mut rng, 4, 4, 2, 2);
            let mut params = NormParams::init(4);
            for ci in 0..4 {
                params.gamma[ci] = rng.random_range(0.5..1.5);
                params.beta[ci] = rng.random_range(-0.5..0.5);
            }
            let err = finite_diff_check(&x, &params, &scheme, &dy, 1e-5).unwrap();
            assert!(err <= 1e-6, "{}: relative error {err}", scheme.kind);
        }
    }

    #[test]
    fn large_epsilon_approaches_affine_map() {
        let mut rng = StdRng::seed_from_u64(31);
        let x = random_tensor(&mut rng, 4, 2, 1, 1);
        let dy = random_tensor(&mut rng, 4, 2, 1, 1);
        let epsilon = 1e12;
        let mut params = params_eps(2, epsilon);
        params.gamma = vec![1.5, 0.7];
        let mut moving = MovingMoments::new(2, 0.99).unwrap();
        let (_, cache) = forward_train(&x, &params, &NormScheme::batch(), &mut moving).unwrap();
        let grads = backward(&cache, &dy).unwrap();
        // Expected limit: gamma * (dy - group mean of dy) / sqrt(epsilon).
        for ci in 0..2 {
            let mean: f64 = (0..4).map(|ni| dy.get(ni, ci, 0, 0)).sum::<f64>() / 4.0;
            for ni in 0..4 {
                let limit = params.gamma[ci] * (dy.get(ni, ci, 0, 0) - mean) / epsilon.sqrt();
                assert_abs_diff_eq!(grads.d_input.get(ni, ci, 0, 0), limit, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        let x = column(vec![0.0, 1.0]);
        let dy = column(vec![1.0, 1.0]);
        assert!(
            finite_diff_check(&x, &NormParams::init(1), &NormScheme::batch(), &dy, 0.0).is_err()
        );
    }
}
