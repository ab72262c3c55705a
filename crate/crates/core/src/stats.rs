//! Monte Carlo estimates with batch-means error bars and jackknife
//! propagation for functions of several jointly sampled means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch count used unless a caller asks otherwise.
pub const DEFAULT_BATCHES: usize = 25;

/// Fewer batches than this make the error bar itself too noisy.
pub const MIN_BATCHES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub ess: f64,
    pub n_samples: usize,
}

impl MomentEstimate {
    /// A known value with no sampling error.
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_err: 0.0,
            ess: 1.0,
            n_samples: 1,
        }
    }

    pub fn from_series(series: &[f64]) -> Result<Self> {
        Self::with_batches(series, DEFAULT_BATCHES)
    }

    pub fn with_batches(series: &[f64], batches: usize) -> Result<Self> {
        let b = Batches::new(&[series], batches)?;
        let (mean, std_err) = b.jackknife(|m| m[0]);
        let n = series.len();
        let var = sample_variance(series);
        let ess = if std_err > 0.0 {
            (var / (std_err * std_err)).clamp(1.0, n as f64)
        } else {
            n as f64
        };
        Ok(Self {
            mean,
            std_err,
            ess,
            n_samples: n,
        })
    }

    /// Pools two estimates from independent runs, weighting by sample count.
    /// Associative and commutative up to round-off.
    pub fn merge(&self, other: &Self) -> Self {
        let (n1, n2) = (self.n_samples as f64, other.n_samples as f64);
        let n = n1 + n2;
        let mean = (n1 * self.mean + n2 * other.mean) / n;
        let var = (n1 * n1 * self.std_err * self.std_err + n2 * n2 * other.std_err * other.std_err)
            / (n * n);
        Self {
            mean,
            std_err: var.sqrt(),
            ess: self.ess + other.ess,
            n_samples: self.n_samples + other.n_samples,
        }
    }

    pub fn merge_all(items: &[Self]) -> Option<Self> {
        let (first, rest) = items.split_first()?;
        Some(rest.iter().fold(*first, |acc, x| acc.merge(x)))
    }

    /// (mean − value)/std_err; infinite for an exact mismatch.
    pub fn z_against(&self, value: f64) -> f64 {
        z_score(self.mean - value, self.std_err)
    }
}

pub fn z_score(residual: f64, err: f64) -> f64 {
    if err > 0.0 {
        residual / err
    } else if residual == 0.0 {
        0.0
    } else {
        f64::INFINITY * residual.signum()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Batch means of several series recorded at the same times.
#[derive(Clone, Debug)]
pub struct Batches {
    /// `means[b][k]`: mean of series k over batch b.
    means: Vec<Vec<f64>>,
    totals: Vec<f64>,
    used: usize,
}

impl Batches {
    /// Splits each series into `batches` consecutive blocks of equal length;
    /// a remainder at the end is dropped.
    pub fn new(series: &[&[f64]], batches: usize) -> Result<Self> {
        if batches < MIN_BATCHES {
            return Err(Error::InvalidArgument(format!(
                "{batches} batches requested, at least {MIN_BATCHES} needed"
            )));
        }
        let len = series.first().map_or(0, |s| s.len());
        if series.iter().any(|s| s.len() != len) {
            return Err(Error::InvalidArgument("series lengths differ".into()));
        }
        if len < batches {
            return Err(Error::TooFewSamples {
                needed: batches,
                got: len,
            });
        }
        let blen = len / batches;
        let used = blen * batches;
        let means: Vec<Vec<f64>> = (0..batches)
            .map(|b| {
                series
                    .iter()
                    .map(|s| s[b * blen..(b + 1) * blen].iter().sum::<f64>() / blen as f64)
                    .collect()
            })
            .collect();
        let totals = (0..series.len())
            .map(|k| means.iter().map(|m| m[k]).sum::<f64>() / batches as f64)
            .collect();
        Ok(Self {
            means,
            totals,
            used,
        })
    }

    /// Builds batch means from `len` samples of `width` observables each,
    /// written by `row(t, out)`, without storing the series.
    pub fn from_rows(
        len: usize,
        width: usize,
        batches: usize,
        mut row: impl FnMut(usize, &mut [f64]),
    ) -> Result<Self> {
        if batches < MIN_BATCHES {
            return Err(Error::InvalidArgument(format!(
                "{batches} batches requested, at least {MIN_BATCHES} needed"
            )));
        }
        if len < batches {
            return Err(Error::TooFewSamples {
                needed: batches,
                got: len,
            });
        }
        let blen = len / batches;
        let mut buf = vec![0.0; width];
        let means: Vec<Vec<f64>> = (0..batches)
            .map(|b| {
                let mut acc = vec![0.0; width];
                for t in b * blen..(b + 1) * blen {
                    row(t, &mut buf);
                    for (a, v) in acc.iter_mut().zip(&buf) {
                        *a += v;
                    }
                }
                acc.iter().map(|a| a / blen as f64).collect()
            })
            .collect();
        let totals = (0..width)
            .map(|k| means.iter().map(|m| m[k]).sum::<f64>() / batches as f64)
            .collect();
        Ok(Self {
            means,
            totals,
            used: blen * batches,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.means.len()
    }

    pub fn samples_used(&self) -> usize {
        self.used
    }

    /// Means of every series over the used samples.
    pub fn means(&self) -> &[f64] {
        &self.totals
    }

    /// Jackknife value and standard error of `f` applied to the vector of means.
    pub fn jackknife(&self, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        let b = self.means.len() as f64;
        let value = f(&self.totals);
        let leave_out: Vec<f64> = self
            .means
            .iter()
            .map(|row| {
                let m: Vec<f64> = self
                    .totals
                    .iter()
                    .zip(row)
                    .map(|(t, r)| (t * b - r) / (b - 1.0))
                    .collect();
                f(&m)
            })
            .collect();
        let avg = mean(&leave_out);
        let var = leave_out.iter().map(|x| (x - avg) * (x - avg)).sum::<f64>() * (b - 1.0) / b;
        (value, var.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iid_series_has_full_ess() {
        let mut rng = crate::rng::stream_rng(1, 0);
        let xs: Vec<f64> = (0..20_000)
            .map(|_| rand::Rng::sample(&mut rng, rand_distr::StandardNormal))
            .collect();
        let e = MomentEstimate::from_series(&xs).unwrap();
        assert!(e.mean.abs() < 4.0 / (20_000f64).sqrt());
        assert!((e.std_err * (20_000f64).sqrt() - 1.0).abs() < 0.35);
        assert!(e.ess <= 20_000.0 && e.ess > 5_000.0);
    }

    #[test]
    fn jackknife_of_linear_function_is_batch_error() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        let b = Batches::new(&[&xs], 20).unwrap();
        let (v, e) = b.jackknife(|m| m[0]);
        let bm: Vec<f64> = (0..20).map(|k| mean(&xs[k * 5..k * 5 + 5])).collect();
        let se = (sample_variance(&bm) / 20.0).sqrt();
        assert!((v - mean(&xs)).abs() < 1e-12);
        assert!((e - se).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        assert!(matches!(
            MomentEstimate::from_series(&[1.0; 10]),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(Batches::new(&[&[0.0; 100]], 5).is_err());
        let c = MomentEstimate::from_series(&[2.0; 100]).unwrap();
        assert_eq!((c.mean, c.std_err), (2.0, 0.0));
    }

    fn est() -> impl Strategy<Value = MomentEstimate> {
        (-10.0..10.0f64, 0.0..2.0f64, 1usize..1000).prop_map(|(m, s, n)| MomentEstimate {
            mean: m,
            std_err: s,
            ess: n as f64,
            n_samples: n,
        })
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_commutative(a in est(), b in est(), c in est()) {
            let l = a.merge(&b).merge(&c);
            let r = a.merge(&b.merge(&c));
            let s = c.merge(&a).merge(&b);
            for x in [r, s] {
                prop_assert!((l.mean - x.mean).abs() < 1e-12);
                prop_assert!((l.std_err - x.std_err).abs() < 1e-12);
                prop_assert_eq!(l.n_samples, x.n_samples);
            }
        }
    }
}
