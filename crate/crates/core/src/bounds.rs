//! Output-range bound of training-mode normalization, its tightness
//! construction, and a train/inference range tracker.
//!
//! A cell normalized with statistics that include itself cannot leave
//! `beta ± |gamma| * sqrt(n - 1)` where `n` is its group's cell count.
//! Inference statistics come from moving averages instead, so inference
//! outputs are unbounded; the tracker exists to exhibit that discrepancy.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::layers::NormParams;
use crate::partition::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Training-output range `beta ± |gamma| * sqrt(n_g - 1)` for a group of
/// `n_g` cells.
pub fn output_bound<S: Scalar>(gamma: S, beta: S, n_g: usize) -> Result<(S, S)> {
    if n_g < 2 {
        return Err(Error::Domain(format!(
            "output bound needs a group of at least 2 cells, got {n_g}"
        )));
    }
    let half = gamma.abs() * S::from_count(n_g - 1).sqrt();
    Ok((beta - half, beta + half))
}

/// Tightest interval containing [`output_bound`] of every channel of a
/// layer, for group cell count `n_g`.
pub fn layer_bound<S: Scalar>(params: &NormParams<S>, n_g: usize) -> Result<(S, S)> {
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    for (&g, &b) in params.gamma.iter().zip(&params.beta) {
        let (l, h) = output_bound(g, b, n_g)?;
        lo = lo.min(l);
        hi = hi.max(h);
    }
    Ok((lo, hi))
}

/// The batch that attains the output bound in the limit: one cell at 0,
/// the remaining `group_size - 1` cells at `magnitude`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightnessProbe<S = f64> {
    pub group_size: usize,
    pub magnitude: S,
    pub epsilon: S,
}

impl<S: Scalar> TightnessProbe<S> {
    pub fn new(group_size: usize, magnitude: S, epsilon: S) -> Result<Self> {
        if group_size < 2 {
            return Err(Error::Domain(format!(
                "probe group size must be at least 2, got {group_size}"
            )));
        }
        if magnitude < S::zero() || !magnitude.is_finite() {
            return Err(Error::Domain(format!(
                "probe magnitude must be finite and non-negative, got {magnitude}"
            )));
        }
        if !(epsilon > S::zero() && epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "probe epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            group_size,
            magnitude,
            epsilon,
        })
    }

    /// Materializes the probe as a `(group_size, 1, 1, 1)` tensor, for
    /// cross-checking the closed form against an actual forward pass.
    pub fn batch(&self) -> Result<Tensor4<S>> {
        let a = self.magnitude;
        Tensor4::from_fn(self.group_size, 1, 1, 1, |n, _, _, _| {
            if n == 0 {
                S::zero()
            } else {
                a
            }
        })
    }
}

/// Minimum normalized value of the probe batch:
/// `-(B - 1) * a / sqrt(a^2 * (B - 1) + epsilon)`.
///
/// Monotone decreasing in `a`, approaching `-sqrt(B - 1)` as `a` grows.
pub fn tightness_value<S: Scalar>(probe: &TightnessProbe<S>) -> S {
    let b_minus_1 = S::from_count(probe.group_size - 1);
    let a = probe.magnitude;
    -(b_minus_1 * a) / (a * a * b_minus_1 + probe.epsilon).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Range<S> {
    min: S,
    max: S,
}

/// Running min/max of normalization outputs per layer and mode, plus the
/// accumulated training-time bound envelope.
///
/// The bound of a layer moves as its parameters are trained, so the
/// envelope keeps the widest interval seen; every training-mode output
/// is guaranteed to lie inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeTracker<S = f64> {
    train: Vec<Option<Range<S>>>,
    infer: Vec<Option<Range<S>>>,
    bound: Vec<Option<Range<S>>>,
}

impl<S: Scalar> RangeTracker<S> {
    pub fn new(n_layers: usize) -> Self {
        Self {
            train: vec![None; n_layers],
            infer: vec![None; n_layers],
            bound: vec![None; n_layers],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.train.len()
    }

    /// Folds a layer output into the tracked range for `mode`.
    pub fn record(&mut self, layer: usize, mode: Mode, y: &Tensor4<S>) {
        let slot = match mode {
            Mode::Train => &mut self.train[layer],
            Mode::Infer => &mut self.infer[layer],
        };
        for &v in y.values() {
            match slot {
                Some(r) => {
                    r.min = r.min.min(v);
                    r.max = r.max.max(v);
                }
                None => *slot = Some(Range { min: v, max: v }),
            }
        }
    }

    /// Widens the layer's bound envelope with the current-step bound.
    pub fn record_bound(&mut self, layer: usize, lo: S, hi: S) {
        let slot = &mut self.bound[layer];
        match slot {
            Some(r) => {
                r.min = r.min.min(lo);
                r.max = r.max.max(hi);
            }
            None => *slot = Some(Range { min: lo, max: hi }),
        }
    }

    pub fn range(&self, layer: usize, mode: Mode) -> Option<(S, S)> {
        let slot = match mode {
            Mode::Train => &self.train[layer],
            Mode::Infer => &self.infer[layer],
        };
        slot.map(|r| (r.min, r.max))
    }

    pub fn bound(&self, layer: usize) -> Option<(S, S)> {
        self.bound[layer].map(|r| (r.min, r.max))
    }

    /// Writes `layer,mode,min,max,bound_lo,bound_hi` rows for every
    /// recorded (layer, mode) pair.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "layer,mode,min,max,bound_lo,bound_hi")?;
        for layer in 0..self.n_layers() {
            let bound = self.bound[layer];
            let (blo, bhi) = match bound {
                Some(r) => (r.min.as_f64().to_string(), r.max.as_f64().to_string()),
                None => (String::new(), String::new()),
            };
            for (mode, slot) in [("train", &self.train[layer]), ("infer", &self.infer[layer])] {
                if let Some(r) = slot {
                    writeln!(
                        out,
                        "{layer},{mode},{},{},{blo},{bhi}",
                        r.min.as_f64(),
                        r.max.as_f64()
                    )?;
                }
            }
        }
        Ok(())
    }
}
