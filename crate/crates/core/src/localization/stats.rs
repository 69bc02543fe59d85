use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Streaming per-channel mean and variance (Welford), mergeable across
/// chunks with Chan et al.'s pairwise update.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    count: usize,
    mean: Array2<f64>,
    m2: Array2<f64>,
}

impl RunningStats {
    pub fn new(layers: usize, width: usize) -> Self {
        RunningStats {
            count: 0,
            mean: Array2::zeros((layers, width)),
            m2: Array2::zeros((layers, width)),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, sample: ArrayView2<f64>) -> Result<()> {
        if sample.dim() != self.mean.dim() {
            return Err(Error::DimensionMismatch(format!(
                "sample shape {:?} vs statistics shape {:?}",
                sample.dim(),
                self.mean.dim()
            )));
        }
        if sample.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("baseline activation".into()));
        }
        self.count += 1;
        let n = self.count as f64;
        Zip::from(&mut self.mean)
            .and(&mut self.m2)
            .and(&sample)
            .for_each(|mean, m2, &x| {
                let delta = x - *mean;
                *mean += delta / n;
                *m2 += delta * (x - *mean);
            });
        Ok(())
    }

    pub fn merge(&mut self, other: &RunningStats) -> Result<()> {
        if other.mean.dim() != self.mean.dim() {
            return Err(Error::DimensionMismatch("merging statistics of different shapes".into()));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        Zip::from(&mut self.mean)
            .and(&mut self.m2)
            .and(&other.mean)
            .and(&other.m2)
            .for_each(|ma, m2a, &mb, &m2b| {
                let delta = mb - *ma;
                *ma += delta * nb / n;
                *m2a += m2b + delta * delta * na * nb / n;
            });
        self.count += other.count;
        Ok(())
    }

    /// Population statistics.
    pub fn finish(&self, epsilon: f64) -> Result<BaselineStats> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.count,
            });
        }
        let n = self.count as f64;
        Ok(BaselineStats {
            mean: self.mean.clone(),
            std: self.m2.mapv(|m2| (m2 / n).max(0.0).sqrt()),
            sample_count: self.count,
            epsilon,
        })
    }
}

/// Per-channel baseline mean and population standard deviation, L × M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
    pub sample_count: usize,
    pub epsilon: f64,
}

impl BaselineStats {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = ArrayView2<'a, f64>>, epsilon: f64) -> Result<Self> {
        let mut iter = samples.into_iter().peekable();
        let (l, m) = iter.peek().map(|s| s.dim()).unwrap_or((0, 0));
        let mut running = RunningStats::new(l, m);
        for s in iter {
            running.push(s)?;
        }
        running.finish(epsilon)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mean.dim()
    }
}

/// `(a - μ) / (σ + ε)`
#[inline]
pub fn zscore(a: f64, mu: f64, sigma: f64, epsilon: f64) -> f64 {
    (a - mu) / (sigma + epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_samples_population_std() {
        let a = arr2(&[[1.0]]);
        let b = arr2(&[[3.0]]);
        let stats = BaselineStats::from_samples([a.view(), b.view()], DEFAULT_EPSILON).unwrap();
        assert_eq!(stats.mean[[0, 0]], 2.0);
        assert_eq!(stats.std[[0, 0]], 1.0);
    }

    #[test]
    fn identical_samples_have_zero_std() {
        let a = arr2(&[[1.5, -2.0], [0.25, 7.0]]);
        let stats = BaselineStats::from_samples([a.view(), a.view(), a.view()], DEFAULT_EPSILON).unwrap();
        assert!(stats.std.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn fewer_than_two_samples_rejected() {
        let a = arr2(&[[1.0]]);
        assert!(matches!(
            BaselineStats::from_samples([a.view()], DEFAULT_EPSILON),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn chunked_merge_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array3::from_shape_fn((50, 3, 4), |_| rng.random_range(-5.0..5.0) * 10f64.powi(rng.random_range(-2..3)));
        let single = BaselineStats::from_samples(data.axis_iter(Axis(0)), DEFAULT_EPSILON).unwrap();

        let mut merged = RunningStats::new(3, 4);
        for chunk in data.axis_chunks_iter(Axis(0), 10) {
            let mut part = RunningStats::new(3, 4);
            for s in chunk.axis_iter(Axis(0)) {
                part.push(s).unwrap();
            }
            merged.merge(&part).unwrap();
        }
        let merged = merged.finish(DEFAULT_EPSILON).unwrap();

        // Oracle: two-pass textbook formulas.
        for l in 0..3 {
            for j in 0..4 {
                let xs: Vec<f64> = (0..50).map(|i| data[[i, l, j]]).collect();
                let mean = xs.iter().sum::<f64>() / 50.0;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
                for s in [&single, &merged] {
                    assert!((s.mean[[l, j]] - mean).abs() <= 1e-9 * mean.abs().max(1.0));
                    assert!((s.std[[l, j]] - var.sqrt()).abs() <= 1e-9 * var.sqrt().max(1.0));
                }
            }
        }
    }

    #[test]
    fn zscore_cases() {
        assert!((zscore(5.0, 3.0, 2.0, 1e-6) - 2.0 / (2.0 + 1e-6)).abs() < 1e-15);
        assert_eq!(zscore(3.0, 3.0, 0.0, 1e-6), 0.0);
        assert!((zscore(4.0, 3.0, 0.0, 1e-6) - 1e6).abs() < 1e-6);
    }
}
