//! Dense 4-axis value grid (examples, channels, height, width).
//!
//! Deliberately minimal: the engine only needs cellwise maps, per-group
//! reductions, and a fixed example-major memory layout so serialized
//! tensors are portable. No strided views, no lazy evaluation.

use std::io::{self, BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::partition::StatPartition;
use crate::scalar::Scalar;

/// Dense grid of `n_examples x n_channels x height x width` scalars,
/// stored example-major (then channel, row, column).
///
/// Values are immutable once constructed and guaranteed finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<S = f64> {
    n_examples: usize,
    n_channels: usize,
    height: usize,
    width: usize,
    values: Vec<S>,
}

/// Per-group sums produced by [`Tensor4::group_sums`]: plain sum, sum of
/// squares, and member cell count for each group of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSums<S = f64> {
    pub sum: Vec<S>,
    pub sum_sq: Vec<S>,
    pub count: Vec<usize>,
}

fn check_dims(n: usize, c: usize, h: usize, w: usize) -> Result<()> {
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!(
            "tensor dimensions must all be >= 1, got ({n},{c},{h},{w})"
        )));
    }
    Ok(())
}

impl<S: Scalar> Tensor4<S> {
    /// All-zero tensor of the given shape.
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        check_dims(n, c, h, w)?;
        Ok(Self {
            n_examples: n,
            n_channels: c,
            height: h,
            width: w,
            values: vec![S::zero(); n * c * h * w],
        })
    }

    /// Builds a tensor from a flat value vector in layout order.
    pub fn from_values(n: usize, c: usize, h: usize, w: usize, values: Vec<S>) -> Result<Self> {
        check_dims(n, c, h, w)?;
        if values.len() != n * c * h * w {
            return Err(Error::Dimension(format!(
                "expected {} values for shape ({n},{c},{h},{w}), got {}",
                n * c * h * w,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite tensor value {v}")));
        }
        Ok(Self {
            n_examples: n,
            n_channels: c,
            height: h,
            width: w,
            values,
        })
    }

    /// Builds a tensor by evaluating `f` at every cell, in layout order.
    pub fn from_fn(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> S,
    ) -> Result<Self> {
        check_dims(n, c, h, w)?;
        let mut values = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        values.push(f(ni, ci, hi, wi));
                    }
                }
            }
        }
        Self::from_values(n, c, h, w, values)
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n_examples, self.n_channels, self.height, self.width)
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Total cell count.
    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    /// Flat index of cell `(n, c, h, w)` in layout order.
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.n_channels + c) * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        self.values[self.index(n, c, h, w)]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// Channel index of the cell at flat index `idx`.
    #[inline]
    pub fn channel_of(&self, idx: usize) -> usize {
        (idx / (self.height * self.width)) % self.n_channels
    }

    /// Applies `f` to every cell, yielding a tensor of the same shape.
    pub fn map_cells(&self, mut f: impl FnMut(S) -> S) -> Result<Self> {
        let mut values = Vec::with_capacity(self.values.len());
        for &v in &self.values {
            let out = f(v);
            if !out.is_finite() {
                return Err(Error::Numeric(format!(
                    "map_cells produced non-finite value {out} from input {v}"
                )));
            }
            values.push(out);
        }
        Ok(Self {
            values,
            ..*self
        })
    }

    /// Sum, sum of squares, and cell count for every group of `p`.
    pub fn group_sums(&self, p: &StatPartition) -> Result<GroupSums<S>> {
        if p.shape() != self.shape() {
            return Err(Error::Dimension(format!(
                "partition shape {:?} does not cover tensor shape {:?}",
                p.shape(),
                self.shape()
            )));
        }
        let mut sums = GroupSums {
            sum: vec![S::zero(); p.n_groups()],
            sum_sq: vec![S::zero(); p.n_groups()],
            count: vec![0usize; p.n_groups()],
        };
        let spatial = self.height * self.width;
        let mut idx = 0;
        for n in 0..self.n_examples {
            for c in 0..self.n_channels {
                let g = p.group_of(n, c);
                let mut s = S::zero();
                let mut s2 = S::zero();
                for &v in &self.values[idx..idx + spatial] {
                    s += v;
                    s2 += v * v;
                }
                sums.sum[g] += s;
                sums.sum_sq[g] += s2;
                sums.count[g] += spatial;
                idx += spatial;
            }
        }
        Ok(sums)
    }

    /// Writes the CSV fixture form: a `n,c,h,w` header line, then one
    /// value per line in layout order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "{},{},{},{}",
            self.n_examples, self.n_channels, self.height, self.width
        )?;
        for v in &self.values {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    /// Reads the CSV fixture form written by [`Tensor4::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Io("empty tensor CSV".into()))?
            .map_err(|e| Error::Io(e.to_string()))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Io(format!("bad tensor CSV header {header:?}: {e}")))?;
        let [n, c, h, w] = dims[..] else {
            return Err(Error::Io(format!(
                "tensor CSV header must have 4 fields, got {header:?}"
            )));
        };
        let mut values = Vec::with_capacity(n * c * h * w);
        for line in lines {
            let line = line.map_err(|e| Error::Io(e.to_string()))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v: f64 = t
                .parse()
                .map_err(|e| Error::Io(format!("bad tensor CSV value {t:?}: {e}")))?;
            values.push(S::from_f64(v));
        }
        Self::from_values(n, c, h, w, values)
    }
}
