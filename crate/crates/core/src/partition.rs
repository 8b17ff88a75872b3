//! Statistics partitions: one abstraction for every normalizer.
//!
//! Batch, ghost-batch, group, and batch-group normalization differ only
//! in how they assign tensor cells to statistics groups. Each scheme maps
//! to a pair (example-block size `E`, channel-group count `G`): cells of
//! examples `[k*E, (k+1)*E)` and channels `[j*C/G, (j+1)*C/G)` share one
//! group. Inference collapses cross-example schemes to `E = 1` so each
//! example is normalized from its own cells only.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Whether statistics come from the current batch or from the
/// per-example inference grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Which normalizer to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// One group per channel, spanning every example and spatial cell.
    Batch,
    /// Batch statistics over disjoint example blocks of `ghost_size`.
    Ghost { ghost_size: usize },
    /// Per-example statistics over `n_channel_groups` channel blocks.
    Group { n_channel_groups: usize },
    /// Statistics over example blocks of `example_group_size` crossed
    /// with `n_channel_groups` channel blocks.
    BatchGroup {
        example_group_size: usize,
        n_channel_groups: usize,
    },
}

impl NormKind {
    /// True when the scheme draws statistics across examples in training.
    pub fn is_cross_example(&self) -> bool {
        !matches!(self, NormKind::Group { .. })
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::Batch => write!(f, "batch"),
            NormKind::Ghost { ghost_size } => write!(f, "ghost:{ghost_size}"),
            NormKind::Group { n_channel_groups } => write!(f, "group:{n_channel_groups}"),
            NormKind::BatchGroup {
                example_group_size,
                n_channel_groups,
            } => write!(f, "batchgroup:{example_group_size}:{n_channel_groups}"),
        }
    }
}

impl FromStr for NormKind {
    type Err = Error;

    /// Parses the config spelling: `batch`, `ghost:B'`, `group:G`, or
    /// `batchgroup:E:G`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized scheme {s:?}"));
        let mut parts = s.split(':');
        let head = parts.next().ok_or_else(bad)?;
        let mut num = || -> Result<usize> {
            parts
                .next()
                .ok_or_else(bad)?
                .parse::<usize>()
                .map_err(|_| bad())
        };
        let kind = match head {
            "batch" => NormKind::Batch,
            "ghost" => NormKind::Ghost { ghost_size: num()? },
            "group" => NormKind::Group {
                n_channel_groups: num()?,
            },
            "batchgroup" => NormKind::BatchGroup {
                example_group_size: num()?,
                n_channel_groups: num()?,
            },
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(kind)
    }
}

/// A normalizer plus its inference example weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormScheme {
    pub kind: NormKind,
    alpha: f64,
}

impl NormScheme {
    /// Scheme with the classical inference weight `alpha = 0`.
    pub fn new(kind: NormKind) -> Self {
        Self { kind, alpha: 0.0 }
    }

    pub fn batch() -> Self {
        Self::new(NormKind::Batch)
    }

    pub fn ghost(ghost_size: usize) -> Self {
        Self::new(NormKind::Ghost { ghost_size })
    }

    pub fn group(n_channel_groups: usize) -> Self {
        Self::new(NormKind::Group { n_channel_groups })
    }

    pub fn batch_group(example_group_size: usize, n_channel_groups: usize) -> Self {
        Self::new(NormKind::BatchGroup {
            example_group_size,
            n_channel_groups,
        })
    }

    /// Sets the inference example weight; must lie in `[0, 1]`.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "scheme alpha must lie in [0, 1], got {alpha}"
            )));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Checks the scheme's training-time divisibility constraints
    /// against a shape.
    pub fn validate(&self, shape: (usize, usize, usize, usize)) -> Result<()> {
        self.validate_for(shape, Mode::Train)
    }

    /// Mode-aware constraint check. Inference collapses cross-example
    /// schemes to per-example groups, so example-block divisibility only
    /// binds in training; channel-group divisibility binds always.
    pub fn validate_for(&self, shape: (usize, usize, usize, usize), mode: Mode) -> Result<()> {
        let (n, c, _, _) = shape;
        let check_examples = |block: usize, what: &str| -> Result<()> {
            if block == 0 {
                return Err(Error::Config(format!("{what} must be at least 1")));
            }
            if mode == Mode::Train && n % block != 0 {
                return Err(Error::Config(format!(
                    "{what} {block} must divide the batch size {n}"
                )));
            }
            Ok(())
        };
        let check_channels = |groups: usize| -> Result<()> {
            if groups == 0 || c % groups != 0 {
                Err(Error::Config(format!(
                    "channel group count {groups} must divide the channel count {c}"
                )))
            } else {
                Ok(())
            }
        };
        match self.kind {
            NormKind::Batch => Ok(()),
            NormKind::Ghost { ghost_size } => check_examples(ghost_size, "ghost size"),
            NormKind::Group { n_channel_groups } => check_channels(n_channel_groups),
            NormKind::BatchGroup {
                example_group_size,
                n_channel_groups,
            } => {
                check_examples(example_group_size, "example group size")?;
                check_channels(n_channel_groups)
            }
        }
    }

    /// Effective (example-block size, channel-group count) for a shape.
    fn blocking(&self, shape: (usize, usize, usize, usize), mode: Mode) -> (usize, usize) {
        let (n, c, _, _) = shape;
        let (example_block, channel_groups) = match self.kind {
            NormKind::Batch => (n, c),
            NormKind::Ghost { ghost_size } => (ghost_size, c),
            NormKind::Group { n_channel_groups } => (1, n_channel_groups),
            NormKind::BatchGroup {
                example_group_size,
                n_channel_groups,
            } => (example_group_size, n_channel_groups),
        };
        match mode {
            Mode::Train => (example_block, channel_groups),
            // Inference statistics must come from the example itself.
            Mode::Infer => (1, channel_groups),
        }
    }
}

/// Assignment of every tensor cell to exactly one statistics group.
///
/// Groups never split spatial positions away from their (example,
/// channel) pair, so membership is stored per (example, channel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatPartition {
    shape: (usize, usize, usize, usize),
    group_of_nc: Vec<usize>,
    n_groups: usize,
    cells_per_group: Vec<usize>,
    channels_of_group: Vec<Vec<usize>>,
}

impl StatPartition {
    fn from_blocking(
        shape: (usize, usize, usize, usize),
        example_block: usize,
        channel_groups: usize,
    ) -> Self {
        let (n, c, h, w) = shape;
        let channels_per_group = c / channel_groups;
        let n_groups = (n / example_block) * channel_groups;
        let mut group_of_nc = Vec::with_capacity(n * c);
        for ni in 0..n {
            for ci in 0..c {
                group_of_nc.push((ni / example_block) * channel_groups + ci / channels_per_group);
            }
        }
        let channels_of_group = (0..n_groups)
            .map(|g| {
                let block = g % channel_groups;
                (block * channels_per_group..(block + 1) * channels_per_group).collect()
            })
            .collect();
        StatPartition {
            shape,
            group_of_nc,
            n_groups,
            cells_per_group: vec![example_block * channels_per_group * h * w; n_groups],
            channels_of_group,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.shape
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Group of every cell belonging to example `n`, channel `c`.
    #[inline]
    pub fn group_of(&self, n: usize, c: usize) -> usize {
        self.group_of_nc[n * self.shape.1 + c]
    }

    /// Group of the cell at flat layout index `idx`.
    #[inline]
    pub fn group_of_cell(&self, idx: usize) -> usize {
        let (_, c, h, w) = self.shape;
        self.group_of_nc[idx / (h * w) % c + (idx / (c * h * w)) * c]
    }

    /// Member cell count of group `g`.
    pub fn cell_count(&self, g: usize) -> usize {
        self.cells_per_group[g]
    }

    /// Channels contributing to group `g`, ascending.
    pub fn channels_of_group(&self, g: usize) -> &[usize] {
        &self.channels_of_group[g]
    }

    /// Group labels relabeled by first occurrence, for comparing
    /// partitions independently of labeling.
    fn canonical_map(&self) -> Vec<usize> {
        let mut relabel = vec![usize::MAX; self.n_groups];
        let mut next = 0;
        self.group_of_nc
            .iter()
            .map(|&g| {
                if relabel[g] == usize::MAX {
                    relabel[g] = next;
                    next += 1;
                }
                relabel[g]
            })
            .collect()
    }
}

/// Builds the statistics partition of `scheme` for a tensor shape.
pub fn partition_of(
    scheme: &NormScheme,
    shape: (usize, usize, usize, usize),
    mode: Mode,
) -> Result<StatPartition> {
    scheme.validate_for(shape, mode)?;
    let (example_block, channel_groups) = scheme.blocking(shape, mode);
    Ok(StatPartition::from_blocking(shape, example_block, channel_groups))
}

/// True when two schemes produce the same statistics groups on `shape`
/// in training mode.
pub fn reduces_to(
    scheme_a: &NormScheme,
    scheme_b: &NormScheme,
    shape: (usize, usize, usize, usize),
) -> Result<bool> {
    let a = partition_of(scheme_a, shape, Mode::Train)?;
    let b = partition_of(scheme_b, shape, Mode::Train)?;
    Ok(a.canonical_map() == b.canonical_map())
}
