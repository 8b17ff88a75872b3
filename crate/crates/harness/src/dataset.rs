//! Synthetic class-conditional image data.
//!
//! Each class gets a fixed Gaussian pattern scaled by the separation
//! knob; examples are that pattern plus per-cell Gaussian noise. The
//! ratio of separation to noise controls task difficulty, which is all
//! the desk-scale experiments need from data.

use normlab_core::Tensor4;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HarnessError, HarnessResult};
use crate::{derive_seed, rng_from};

/// Shape, split sizes, and difficulty of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> HarnessResult<()> {
        let counts = [
            self.n_classes,
            self.train_per_class,
            self.val_per_class,
            self.test_per_class,
            self.channels,
            self.height,
            self.width,
        ];
        if counts.contains(&0) {
            return Err(HarnessError::Config(
                "dataset counts and dimensions must all be >= 1".into(),
            ));
        }
        for (name, v) in [("separation", self.separation), ("noise", self.noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(HarnessError::Config(format!(
                    "dataset {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One labeled split, examples stored flat in channel-major cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub examples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Gathers the given examples into a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> HarnessResult<(Tensor4, Vec<usize>)> {
        let cells = self.channels * self.height * self.width;
        let mut values = Vec::with_capacity(indices.len() * cells);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(&self.examples[i]);
            labels.push(self.labels[i]);
        }
        let x = Tensor4::from_values(indices.len(), self.channels, self.height, self.width, values)?;
        Ok((x, labels))
    }

    /// Example indices per class label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.n_classes];
        for (i, &label) in self.labels.iter().enumerate() {
            by_class[label].push(i);
        }
        by_class
    }
}

/// Train/validation/test splits drawn from the same class patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Generates the dataset; bit-identical for equal specs.
pub fn make_dataset(spec: &SyntheticSpec) -> HarnessResult<DataBundle> {
    spec.validate()?;
    let cells = spec.channels * spec.height * spec.width;
    let mut rng = rng_from(spec.seed);
    // Class patterns carry signal at two scales: a per-channel offset
    // (visible to channel statistics) and per-cell detail (survives any
    // normalization). Both share the separation knob.
    let patterns: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            let channel_shift: Vec<f64> = (0..spec.channels)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut pattern = Vec::with_capacity(cells);
            for &shift in &channel_shift {
                for _ in 0..spec.height * spec.width {
                    let detail: f64 = rng.sample(StandardNormal);
                    pattern.push(spec.separation * (shift + detail) * std::f64::consts::FRAC_1_SQRT_2);
                }
            }
            pattern
        })
        .collect();
    let split = |per_class: usize, salt: u64| -> Dataset {
        let mut rng = rng_from(derive_seed(spec.seed, salt));
        let mut examples = Vec::with_capacity(per_class * spec.n_classes);
        let mut labels = Vec::with_capacity(per_class * spec.n_classes);
        for (k, pattern) in patterns.iter().enumerate() {
            for _ in 0..per_class {
                // Example noise mirrors the pattern structure: a
                // per-channel fingerprint plus per-cell noise, so example
                // identity is as readable to channel statistics as class
                // identity is.
                let fingerprint: Vec<f64> = (0..spec.channels)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let mut values = Vec::with_capacity(cells);
                for (c, &shift) in fingerprint.iter().enumerate() {
                    for p in 0..spec.height * spec.width {
                        let cell: f64 = rng.sample(StandardNormal);
                        values.push(
                            pattern[c * spec.height * spec.width + p]
                                + spec.noise * (shift + cell) * std::f64::consts::FRAC_1_SQRT_2,
                        );
                    }
                }
                examples.push(values);
                labels.push(k);
            }
        }
        Dataset {
            channels: spec.channels,
            height: spec.height,
            width: spec.width,
            n_classes: spec.n_classes,
            examples,
            labels,
        }
    };
    Ok(DataBundle {
        train: split(spec.train_per_class, 1),
        val: split(spec.val_per_class, 2),
        test: split(spec.test_per_class, 3),
    })
}
