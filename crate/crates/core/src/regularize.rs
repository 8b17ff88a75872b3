//! Weight decay as an explicit post-step parameter shrink.
//!
//! Decay is decoupled from the optimizer: after each update step the
//! scale parameters move toward a configurable target (0 or 1) and the
//! shift parameters and ordinary weights shrink toward 0.

use crate::error::{Error, Result};
use crate::layers::NormParams;
use crate::scalar::Scalar;

/// Where the scale parameter is pulled: its zero or its identity value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaTarget {
    Zero,
    One,
}

impl GammaTarget {
    pub fn value<S: Scalar>(self) -> S {
        match self {
            GammaTarget::Zero => S::zero(),
            GammaTarget::One => S::one(),
        }
    }

    /// Parses the config spelling `0` or `1`.
    pub fn from_config(v: f64) -> Result<Self> {
        if v == 0.0 {
            Ok(GammaTarget::Zero)
        } else if v == 1.0 {
            Ok(GammaTarget::One)
        } else {
            Err(Error::Config(format!("gamma target must be 0 or 1, got {v}")))
        }
    }
}

/// Per-step decay rate and what it applies to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDecayConfig {
    pub delta: f64,
    pub gamma_target: GammaTarget,
    pub apply_to_norm_params: bool,
    pub apply_to_weights: bool,
}

impl WeightDecayConfig {
    pub fn new(
        delta: f64,
        gamma_target: GammaTarget,
        apply_to_norm_params: bool,
        apply_to_weights: bool,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::Config(format!(
                "decay rate must lie in [0, 1), got {delta}"
            )));
        }
        Ok(Self {
            delta,
            gamma_target,
            apply_to_norm_params,
            apply_to_weights,
        })
    }

    /// No-op configuration.
    pub fn disabled() -> Self {
        Self {
            delta: 0.0,
            gamma_target: GammaTarget::One,
            apply_to_norm_params: false,
            apply_to_weights: false,
        }
    }
}

/// One decay step on normalization parameters:
/// `gamma <- gamma - delta * (gamma - target)`, `beta <- (1 - delta) * beta`.
pub fn decay_step<S: Scalar>(params: &NormParams<S>, cfg: &WeightDecayConfig) -> NormParams<S> {
    if !cfg.apply_to_norm_params {
        return params.clone();
    }
    let delta = S::from_f64(cfg.delta);
    let target: S = cfg.gamma_target.value();
    NormParams {
        gamma: params
            .gamma
            .iter()
            .map(|&g| g - delta * (g - target))
            .collect(),
        beta: params.beta.iter().map(|&b| (S::one() - delta) * b).collect(),
        epsilon: params.epsilon,
    }
}

/// One decay step on a flat weight set: `w <- (1 - delta) * w`.
pub fn decay_weights<S: Scalar>(weights: &[S], cfg: &WeightDecayConfig) -> Vec<S> {
    if !cfg.apply_to_weights {
        return weights.to_vec();
    }
    let keep = S::one() - S::from_f64(cfg.delta);
    weights.iter().map(|&w| keep * w).collect()
}
