//! Percentile bootstrap over whole estimation pipelines.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::rng::keyed_stream;

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub point_estimate: f64,
    /// Successful replicate estimates, in replicate order.
    pub replicates: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub failed: usize,
    pub seed: u64,
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn percentile_quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: "values",
            index: i,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Unit indices of bootstrap resample `replicate`; depends only on
/// `(seed, replicate)`.
pub fn resample_indices(n: usize, seed: u64, replicate: u64) -> Vec<usize> {
    let mut rng = keyed_stream(seed, &[0xB007, replicate]);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Nonparametric bootstrap: `b` resamples of the units with replacement,
/// the full `estimator` pipeline rerun on each.
///
/// Replicates whose resample or estimator fails are skipped and counted;
/// more than 5% failures is an error.
pub fn bootstrap<F>(data: &ObservationSet, estimator: F, b: usize, seed: u64) -> Result<BootstrapReport>
where
    F: Fn(&ObservationSet) -> Result<f64> + Sync,
{
    let n = data.n();
    let sets: Vec<Vec<usize>> = (0..b as u64).map(|r| resample_indices(n, seed, r)).collect();
    bootstrap_from_indices(data, estimator, &sets, seed)
}

/// Bootstrap over explicit resample index sets.
pub fn bootstrap_from_indices<F>(
    data: &ObservationSet,
    estimator: F,
    index_sets: &[Vec<usize>],
    seed: u64,
) -> Result<BootstrapReport>
where
    F: Fn(&ObservationSet) -> Result<f64> + Sync,
{
    let b = index_sets.len();
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap needs B >= 2".into()));
    }
    let point_estimate = estimator(data)?;
    let outcomes: Vec<Option<f64>> = index_sets
        .par_iter()
        .map(|idx| {
            data.resample(idx)
                .and_then(|set| estimator(&set))
                .ok()
                .filter(|v| v.is_finite())
        })
        .collect();
    let replicates: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let failed = b - replicates.len();
    if replicates.is_empty() {
        return Err(Error::AllReplicatesFailed { failed });
    }
    if failed as f64 > MAX_FAILURE_SHARE * b as f64 {
        return Err(Error::TooManyFailures { failed, total: b });
    }
    let (mean, sd) = mean_sd(&replicates);
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapReport {
        point_estimate,
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
        replicates,
        mean,
        sd,
        b,
        failed,
        seed,
    })
}

/// Mean and sample standard deviation (divisor `n - 1`).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ObservationSet {
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let d: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let y: Vec<f64> = x.iter().zip(&d).map(|(v, &t)| v + if t { 1.0 } else { 0.0 }).collect();
        ObservationSet::from_parts(y, d, x, 1).unwrap()
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(percentile_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.5);
        assert_eq!(percentile_quantile(&[5.0], 0.3).unwrap(), 5.0);
        let values: Vec<f64> = (0..100).map(f64::from).collect();
        // h = 99 * 0.025 = 2.475
        assert!((percentile_quantile(&values, 0.025).unwrap() - 2.475).abs() < 1e-12);
        assert_eq!(percentile_quantile(&[], 0.5), Err(Error::EmptyInput));
        assert!(percentile_quantile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn constant_estimator_has_zero_spread() {
        let report = bootstrap(&toy(), |_| Ok(3.5), 50, 1).unwrap();
        assert_eq!(report.sd, 0.0);
        assert_eq!((report.q025, report.q975), (3.5, 3.5));
        assert_eq!(report.replicates.len(), 50);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let mean_y = |s: &ObservationSet| Ok(s.y().iter().sum::<f64>() / s.n() as f64);
        let a = bootstrap(&toy(), mean_y, 200, 9).unwrap();
        let b = bootstrap(&toy(), mean_y, 200, 9).unwrap();
        assert_eq!(a, b);
        let c = bootstrap(&toy(), mean_y, 200, 10).unwrap();
        assert_ne!(a.replicates, c.replicates);
        assert!(a.q025 <= a.q975 && a.sd > 0.0);
    }

    #[test]
    fn failures_are_counted_and_capped() {
        let mut calls = std::sync::atomic::AtomicUsize::new(0);
        let flaky = |s: &ObservationSet| {
            let k = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if k % 50 == 7 {
                Err(Error::NoDescent)
            } else {
                Ok(s.y()[0])
            }
        };
        let report = bootstrap(&toy(), flaky, 100, 3).unwrap();
        assert_eq!(report.failed, 2);
        assert_eq!(report.replicates.len(), 98);
        *calls.get_mut() = 0;

        let always = |_: &ObservationSet| -> Result<f64> { Err(Error::NoDescent) };
        let data = toy();
        let sets: Vec<Vec<usize>> = (0..10).map(|r| resample_indices(data.n(), 1, r)).collect();
        // point estimate fails first
        assert_eq!(bootstrap_from_indices(&data, always, &sets, 1), Err(Error::NoDescent));
        let mostly = |s: &ObservationSet| {
            if s.n() == data.n() && s == &data {
                Ok(0.0)
            } else {
                Err(Error::NoDescent)
            }
        };
        assert_eq!(
            bootstrap_from_indices(&data, mostly, &sets, 1),
            Err(Error::AllReplicatesFailed { failed: 10 })
        );
    }
}
