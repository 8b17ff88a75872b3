//! Group statistics, exponential moving raw moments, and the inference
//! example-weighted blend.
//!
//! Moving averages track the raw first and second moments per channel
//! rather than (mean, variance), so a convex blend of example and moving
//! statistics stays consistent: variance is recovered at the end as
//! `E[x^2] - E[x]^2`.

use std::io::{self, BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::partition::StatPartition;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Default decay factor for moving moments.
pub const DEFAULT_RHO: f64 = 0.99;

/// Per-group mean and maximum-likelihood variance (divisor `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<S = f64> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub count: Vec<usize>,
}

impl<S: Scalar> Moments<S> {
    pub fn n_groups(&self) -> usize {
        self.mean.len()
    }
}

/// Per-group statistics of `x` under partition `p`.
pub fn compute_moments<S: Scalar>(x: &Tensor4<S>, p: &StatPartition) -> Result<Moments<S>> {
    let sums = x.group_sums(p)?;
    let mut mean = Vec::with_capacity(p.n_groups());
    let mut var = Vec::with_capacity(p.n_groups());
    for g in 0..p.n_groups() {
        let n = S::from_count(sums.count[g]);
        let m = sums.sum[g] / n;
        // ML estimator; clamp absorbs rounding on near-constant groups.
        let v = (sums.sum_sq[g] / n - m * m).max(S::zero());
        mean.push(m);
        var.push(v);
    }
    Ok(Moments {
        mean,
        var,
        count: sums.count,
    })
}

/// Exponential moving averages of the per-channel raw moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingMoments<S = f64> {
    m_x: Vec<S>,
    m_x2: Vec<S>,
    rho: f64,
}

impl<S: Scalar> MovingMoments<S> {
    /// Fresh tracker: first moment 0, second moment 1.
    pub fn new(n_channels: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!(
                "moving-moment decay must lie in (0, 1), got {rho}"
            )));
        }
        Ok(Self {
            m_x: vec![S::zero(); n_channels],
            m_x2: vec![S::one(); n_channels],
            rho,
        })
    }

    /// Converts a conventional (mean, variance) checkpoint into raw
    /// moments: `m_x = mean`, `m_x2 = var + mean^2`.
    pub fn from_mean_var(mean: &[S], var: &[S], rho: f64) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Dimension(format!(
                "mean/var lengths differ: {} vs {}",
                mean.len(),
                var.len()
            )));
        }
        if let Some(v) = var.iter().find(|v| **v < S::zero()) {
            return Err(Error::Domain(format!("negative variance {v}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!(
                "moving-moment decay must lie in (0, 1), got {rho}"
            )));
        }
        Ok(Self {
            m_x: mean.to_vec(),
            m_x2: mean.iter().zip(var).map(|(&m, &v)| v + m * m).collect(),
            rho,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.m_x.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn first(&self) -> &[S] {
        &self.m_x
    }

    pub fn second(&self) -> &[S] {
        &self.m_x2
    }

    /// Variance implied by the raw moments, per channel (unclamped).
    pub fn implied_var(&self) -> Vec<S> {
        self.m_x
            .iter()
            .zip(&self.m_x2)
            .map(|(&m, &m2)| m2 - m * m)
            .collect()
    }

    /// Folds one batch into the averages: per channel,
    /// `m <- rho * m + (1 - rho) * batch_moment`.
    pub fn update(&mut self, x: &Tensor4<S>) -> Result<()> {
        let (n, c, h, w) = x.shape();
        if c != self.m_x.len() {
            return Err(Error::Dimension(format!(
                "moving moments track {} channels, batch has {c}",
                self.m_x.len()
            )));
        }
        let rho = S::from_f64(self.rho);
        let one_minus = S::one() - rho;
        let per_channel = S::from_count(n * h * w);
        let spatial = h * w;
        let values = x.values();
        for ci in 0..c {
            let mut s = S::zero();
            let mut s2 = S::zero();
            for ni in 0..n {
                let start = (ni * c + ci) * spatial;
                for &v in &values[start..start + spatial] {
                    s += v;
                    s2 += v * v;
                }
            }
            self.m_x[ci] = rho * self.m_x[ci] + one_minus * (s / per_channel);
            self.m_x2[ci] = rho * self.m_x2[ci] + one_minus * (s2 / per_channel);
        }
        Ok(())
    }

    /// Writes the checkpoint CSV: a `rho` header, then
    /// `channel,m_x,m_x2` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "rho,{}", self.rho)?;
        writeln!(out, "channel,m_x,m_x2")?;
        for (ci, (m, m2)) in self.m_x.iter().zip(&self.m_x2).enumerate() {
            writeln!(out, "{ci},{},{}", m.as_f64(), m2.as_f64())?;
        }
        Ok(())
    }

    /// Reads the CSV form written by [`MovingMoments::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let mut next_line = || -> Result<Option<String>> {
            match lines.next() {
                Some(Ok(l)) => Ok(Some(l)),
                Some(Err(e)) => Err(Error::Io(e.to_string())),
                None => Ok(None),
            }
        };
        let header = next_line()?.ok_or_else(|| Error::Io("empty moving-moment CSV".into()))?;
        let rho: f64 = header
            .strip_prefix("rho,")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Io(format!("bad rho header {header:?}")))?;
        let columns = next_line()?.unwrap_or_default();
        if columns.trim() != "channel,m_x,m_x2" {
            return Err(Error::Io(format!("bad column header {columns:?}")));
        }
        let mut m_x = Vec::new();
        let mut m_x2 = Vec::new();
        while let Some(line) = next_line()? {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [ch, m, m2] = fields[..] else {
                return Err(Error::Io(format!("bad moving-moment row {line:?}")));
            };
            let ch: usize = ch
                .trim()
                .parse()
                .map_err(|e| Error::Io(format!("bad channel {ch:?}: {e}")))?;
            if ch != m_x.len() {
                return Err(Error::Io(format!(
                    "moving-moment rows out of order at channel {ch}"
                )));
            }
            let parse = |t: &str| -> Result<S> {
                t.trim()
                    .parse::<f64>()
                    .map(S::from_f64)
                    .map_err(|e| Error::Io(format!("bad moment value {t:?}: {e}")))
            };
            m_x.push(parse(m)?);
            m_x2.push(parse(m2)?);
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!(
                "moving-moment decay must lie in (0, 1), got {rho}"
            )));
        }
        Ok(Self { m_x, m_x2, rho })
    }
}

/// Blends per-example group statistics with the moving averages using
/// example weight `alpha`.
///
/// The moving moments of a group are the plain average of its member
/// channels' moments. `alpha` must be finite and non-negative; values
/// above 1 extrapolate past the pure-example setting and are allowed for
/// wide sweeps. The endpoints are returned exactly: `alpha = 0` yields
/// pure moving statistics and `alpha = 1` pure example statistics.
pub fn blend<S: Scalar>(
    example: &Moments<S>,
    p: &StatPartition,
    moving: &MovingMoments<S>,
    alpha: f64,
) -> Result<Moments<S>> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Config(format!(
            "blend alpha must be finite and >= 0, got {alpha}"
        )));
    }
    if example.n_groups() != p.n_groups() {
        return Err(Error::Dimension(format!(
            "moments cover {} groups, partition has {}",
            example.n_groups(),
            p.n_groups()
        )));
    }
    if moving.n_channels() != p.shape().1 {
        return Err(Error::Dimension(format!(
            "moving moments track {} channels, partition expects {}",
            moving.n_channels(),
            p.shape().1
        )));
    }
    if alpha == 1.0 {
        return Ok(example.clone());
    }
    let a = S::from_f64(alpha);
    let one_minus = S::one() - a;
    let mut mean = Vec::with_capacity(p.n_groups());
    let mut var = Vec::with_capacity(p.n_groups());
    for g in 0..p.n_groups() {
        let channels = p.channels_of_group(g);
        let n_ch = S::from_count(channels.len());
        let mut mov_x = S::zero();
        let mut mov_x2 = S::zero();
        for &ci in channels {
            mov_x += moving.first()[ci];
            mov_x2 += moving.second()[ci];
        }
        mov_x /= n_ch;
        mov_x2 /= n_ch;
        let (mu, second) = if alpha == 0.0 {
            (mov_x, mov_x2)
        } else {
            let ex_mean = example.mean[g];
            let ex_second = example.var[g] + ex_mean * ex_mean;
            (
                a * ex_mean + one_minus * mov_x,
                a * ex_second + one_minus * mov_x2,
            )
        };
        mean.push(mu);
        var.push((second - mu * mu).max(S::zero()));
    }
    Ok(Moments {
        mean,
        var,
        count: example.count.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{partition_of, Mode, NormScheme};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn column(values: Vec<f64>) -> Tensor4 {
        let n = values.len();
        Tensor4::from_values(n, 1, 1, 1, values).unwrap()
    }

    #[test]
    fn single_group_moments() {
        let x = column(vec![1.0, 2.0, 3.0, 4.0]);
        let p = partition_of(&NormScheme::batch(), x.shape(), Mode::Train).unwrap();
        let m = compute_moments(&x, &p).unwrap();
        assert_eq!(m.mean, vec![2.5]);
        assert_eq!(m.var, vec![1.25]);
        assert_eq!(m.count, vec![4]);
    }

    #[test]
    fn constant_input_has_zero_variance() {
        let x = Tensor4::from_values(2, 3, 2, 2, vec![7.25; 24]).unwrap();
        for scheme in [NormScheme::batch(), NormScheme::ghost(2), NormScheme::group(3)] {
            let p = partition_of(&scheme, x.shape(), Mode::Train).unwrap();
            let m = compute_moments(&x, &p).unwrap();
            assert!(m.mean.iter().all(|&v| v == 7.25));
            assert!(m.var.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn singleton_groups_reproduce_values() {
        let x = column(vec![0.3, -1.7, 2.9]);
        let p = partition_of(&NormScheme::ghost(1), x.shape(), Mode::Train).unwrap();
        let m = compute_moments(&x, &p).unwrap();
        assert_eq!(m.mean, x.values());
        assert!(m.var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn update_examples() {
        let mut m = MovingMoments::<f64>::new(1, 0.9).unwrap();
        m.update(&column(vec![1.0])).unwrap();
        assert_abs_diff_eq!(m.first()[0], 0.1, epsilon = 1e-15);
        // Fixed point of the second moment: batch mean-square equals it.
        let mut m = MovingMoments::<f64>::new(1, 0.9).unwrap();
        m.update(&column(vec![1.0])).unwrap();
        assert_abs_diff_eq!(m.second()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn repeated_updates_converge_geometrically() {
        // Closed form after k constant batches: m_x = mu * (1 - rho^k).
        let rho = 0.9;
        let mu = 3.5;
        let batch = column(vec![mu; 4]);
        let mut m = MovingMoments::<f64>::new(1, rho).unwrap();
        for k in 1..=40 {
            m.update(&batch).unwrap();
            let expect = mu * (1.0 - rho.powi(k));
            assert_abs_diff_eq!(m.first()[0], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn update_rejects_channel_mismatch() {
        let mut m = MovingMoments::<f64>::new(2, 0.9).unwrap();
        assert!(matches!(
            m.update(&column(vec![1.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn from_mean_var_examples() {
        let m = MovingMoments::<f64>::from_mean_var(&[2.0], &[3.0], 0.99).unwrap();
        assert_eq!((m.first()[0], m.second()[0]), (2.0, 7.0));
        let m = MovingMoments::<f64>::from_mean_var(&[0.0], &[1.0], 0.99).unwrap();
        assert_eq!((m.first()[0], m.second()[0]), (0.0, 1.0));
        assert_eq!(m.implied_var(), vec![1.0]);
        assert!(matches!(
            MovingMoments::<f64>::from_mean_var(&[0.0], &[-0.5], 0.99),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn blend_mixes_moments() {
        // example mean 2, second moment 5; moving (4, 20); alpha 0.5:
        // mu = 3, second = 12.5, var = 3.5.
        let example = Moments {
            mean: vec![2.0],
            var: vec![1.0],
            count: vec![1],
        };
        let p = partition_of(&NormScheme::batch(), (1, 1, 1, 1), Mode::Infer).unwrap();
        let moving = MovingMoments::from_mean_var(&[4.0], &[4.0], 0.99).unwrap();
        let out = blend(&example, &p, &moving, 0.5).unwrap();
        assert_abs_diff_eq!(out.mean[0], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.var[0], 3.5, epsilon = 1e-15);
    }

    #[test]
    fn blend_endpoints_are_exact() {
        let example = Moments {
            mean: vec![0.37],
            var: vec![0.81],
            count: vec![4],
        };
        let p = partition_of(&NormScheme::batch(), (1, 1, 2, 2), Mode::Infer).unwrap();
        let moving = MovingMoments::from_mean_var(&[1.23], &[2.5], 0.99).unwrap();
        let at0 = blend(&example, &p, &moving, 0.0).unwrap();
        assert_eq!(at0.mean[0], 1.23);
        assert_eq!(at0.var[0], 2.5 + 1.23 * 1.23 - 1.23 * 1.23);
        let at1 = blend(&example, &p, &moving, 1.0).unwrap();
        assert_eq!(at1.mean, example.mean);
        assert_eq!(at1.var, example.var);
    }

    #[test]
    fn blend_averages_group_channels() {
        // Two channels in one group: moving moments are averaged.
        let example = Moments {
            mean: vec![0.0],
            var: vec![0.0],
            count: vec![2],
        };
        let p = partition_of(&NormScheme::group(1), (1, 2, 1, 1), Mode::Infer).unwrap();
        let moving = MovingMoments::from_mean_var(&[1.0, 3.0], &[0.0, 0.0], 0.99).unwrap();
        let out = blend(&example, &p, &moving, 0.0).unwrap();
        assert_eq!(out.mean[0], 2.0);
        // second moment (1 + 9) / 2 = 5, var = 5 - 4 = 1.
        assert_eq!(out.var[0], 1.0);
    }

    #[test]
    fn blend_rejects_bad_alpha() {
        let example = Moments {
            mean: vec![0.0],
            var: vec![0.0],
            count: vec![1],
        };
        let p = partition_of(&NormScheme::batch(), (1, 1, 1, 1), Mode::Infer).unwrap();
        let moving = MovingMoments::new(1, 0.99).unwrap();
        for alpha in [-0.1, f64::NAN, f64::INFINITY] {
            assert!(blend(&example, &p, &moving, alpha).is_err(), "{alpha}");
        }
        // Wide-sweep extrapolation beyond 1 stays available.
        assert!(blend(&example, &p, &moving, 1.5).is_ok());
    }

    #[test]
    fn moving_csv_round_trip() {
        let mut m = MovingMoments::<f64>::new(3, 0.97).unwrap();
        m.update(&Tensor4::from_fn(4, 3, 1, 1, |n, c, _, _| (n * 3 + c) as f64 * 0.31).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = MovingMoments::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    fn arb_tensor(max_n: usize) -> impl Strategy<Value = Tensor4> {
        (1..=max_n, 1usize..=8, 1usize..=4, 1usize..=4)
            .prop_flat_map(|(n, c, h, w)| {
                proptest::collection::vec(-10.0f64..10.0, n * c * h * w)
                    .prop_map(move |v| Tensor4::from_values(n, c, h, w, v).unwrap())
            })
    }

    proptest! {
        #[test]
        fn moments_match_two_pass_oracle(x in arb_tensor(8)) {
            // Independent oracle: gather members per group, then a naive
            // two-pass mean/variance.
            let (n, c, _, _) = x.shape();
            let scheme = if n % 2 == 0 { NormScheme::ghost(2) } else { NormScheme::group(1) };
            prop_assume!(scheme.validate(x.shape()).is_ok());
            let p = partition_of(&scheme, x.shape(), Mode::Train).unwrap();
            let m = compute_moments(&x, &p).unwrap();
            let mut members = vec![Vec::new(); p.n_groups()];
            for (idx, &v) in x.values().iter().enumerate() {
                members[p.group_of_cell(idx)].push(v);
            }
            let _ = c;
            for g in 0..p.n_groups() {
                let vals = &members[g];
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                prop_assert!((m.mean[g] - mean).abs() <= 1e-12, "group {} mean", g);
                prop_assert!((m.var[g] - var).abs() <= 1e-12, "group {} var", g);
            }
        }

        #[test]
        fn moving_implied_variance_stays_nonnegative(
            batches in proptest::collection::vec(
                proptest::collection::vec(-5.0f64..5.0, 8), 1..20),
            rho in 0.5f64..0.999,
        ) {
            let mut m = MovingMoments::<f64>::new(2, rho).unwrap();
            for b in batches {
                let x = Tensor4::from_values(2, 2, 1, 2, b).unwrap();
                m.update(&x).unwrap();
            }
            for v in m.implied_var() {
                prop_assert!(v >= -1e-12, "implied variance {v}");
            }
        }

        #[test]
        fn blend_variance_nonnegative(
            ex_mean in -5.0f64..5.0,
            ex_var in 0.0f64..10.0,
            mov_mean in -5.0f64..5.0,
            mov_var in 0.0f64..10.0,
            alpha in 0.0f64..=1.0,
        ) {
            let example = Moments { mean: vec![ex_mean], var: vec![ex_var], count: vec![4] };
            let p = partition_of(&NormScheme::batch(), (1, 1, 2, 2), Mode::Infer).unwrap();
            let moving = MovingMoments::from_mean_var(&[mov_mean], &[mov_var], 0.99).unwrap();
            let out = blend(&example, &p, &moving, alpha).unwrap();
            prop_assert!(out.var[0] >= 0.0);
        }

        #[test]
        fn from_mean_var_round_trip(mean in -1.5f64..1.5, var in 0.0f64..2.0) {
            let m = MovingMoments::from_mean_var(&[mean], &[var], 0.99).unwrap();
            prop_assert!((m.implied_var()[0] - var).abs() <= 1e-15);
        }
    }
}
