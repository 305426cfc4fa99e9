//! Seeded percentile-bootstrap machinery shared by the Elo and statistics
//! modules.
//!
//! Each replicate draws from its own ChaCha stream derived from
//! `(seed, stream)`, so results do not depend on execution order and
//! replicates can run on any number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("bootstrap needs at least one sample")]
    Empty,
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(f64),
    #[error("n_boot must be positive")]
    NoReplicates,
}

/// Random stream for replicate `stream` of a computation seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn check_level(level: f64) -> Result<(), BootstrapError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(BootstrapError::BadLevel(level))
    }
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Equal-tailed percentile interval of `values` at `level`. Non-finite
/// values are discarded; returns `None` when nothing finite remains.
pub fn percentile_interval(values: &[f64], level: f64) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Some((quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail)))
}

/// Draws `n` indices uniformly with replacement from `0..n`.
pub fn resample_indices(rng: &mut impl Rng, n: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..n).map(|_| rng.random_range(0..n)));
}

/// Runs `n_boot` replicates of `statistic` over resampled index sets and
/// returns the replicate values in replicate order.
pub fn replicate<F>(n: usize, n_boot: usize, seed: u64, statistic: F) -> Vec<f64>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    (0..n_boot as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, r| {
            let mut rng = substream(seed, r);
            resample_indices(&mut rng, n, buf);
            statistic(buf)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub confidence_level: f64,
}

impl MeanCi {
    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

/// Percentile bootstrap interval for the mean of `samples`.
pub fn bootstrap_mean_ci(samples: &[f64], level: f64, n_boot: usize, seed: u64) -> Result<MeanCi, BootstrapError> {
    if samples.is_empty() {
        return Err(BootstrapError::Empty);
    }
    check_level(level)?;
    if n_boot == 0 {
        return Err(BootstrapError::NoReplicates);
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let reps = replicate(n, n_boot, seed, |idx| idx.iter().map(|&i| samples[i]).sum::<f64>() / n as f64);
    let (lo, hi) = percentile_interval(&reps, level).expect("finite replicate means");
    Ok(MeanCi { mean, ci_low: lo, ci_high: hi, n, confidence_level: level })
}

/// Same as [`bootstrap_mean_ci`] over 0/1 outcomes.
pub fn bootstrap_proportion_ci(outcomes: &[bool], level: f64, n_boot: usize, seed: u64) -> Result<MeanCi, BootstrapError> {
    let xs: Vec<f64> = outcomes.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    bootstrap_mean_ci(&xs, level, n_boot, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 0.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert!((quantile_sorted(&v, 0.1) - 0.4).abs() < 1e-12);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn constant_samples_give_zero_width() {
        let ci = bootstrap_mean_ci(&[0.7; 40], 0.95, 200, 1).unwrap();
        assert_eq!(ci.ci_low, ci.mean);
        assert_eq!(ci.ci_high, ci.mean);
        assert!((ci.mean - 0.7).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let xs: Vec<f64> = (0..50).map(|i| (i * 37 % 11) as f64).collect();
        let a = bootstrap_mean_ci(&xs, 0.9, 300, 42).unwrap();
        let b = bootstrap_mean_ci(&xs, 0.9, 300, 42).unwrap();
        let c = bootstrap_mean_ci(&xs, 0.9, 300, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(bootstrap_mean_ci(&[], 0.95, 10, 0), Err(BootstrapError::Empty));
        assert_eq!(bootstrap_mean_ci(&[1.0], 1.0, 10, 0), Err(BootstrapError::BadLevel(1.0)));
        assert_eq!(bootstrap_mean_ci(&[1.0], 0.5, 0, 0), Err(BootstrapError::NoReplicates));
    }

    #[test]
    fn substreams_differ() {
        let mut a = substream(5, 0);
        let mut b = substream(5, 1);
        let xa: u64 = a.random();
        let xb: u64 = b.random();
        assert_ne!(xa, xb);
    }

    #[test]
    fn bernoulli_width_matches_binomial() {
        // 586 successes out of 1000
        let outcomes: Vec<bool> = (0..1000).map(|i| i < 586).collect();
        let ci = bootstrap_proportion_ci(&outcomes, 0.95, 2000, 11).unwrap();
        let analytic = 2.0 * 1.959964 * (0.586f64 * 0.414 / 1000.0).sqrt();
        let width = ci.ci_high - ci.ci_low;
        assert!((ci.mean - 0.586).abs() < 1e-12);
        assert!(((width - analytic) / analytic).abs() < 0.15, "width {width} vs {analytic}");
    }
}
