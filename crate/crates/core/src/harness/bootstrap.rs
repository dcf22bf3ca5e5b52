//! Percentile bootstrap confidence intervals for means.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    /// True when the intervals share no interior point.
    pub fn separated_from(&self, other: &Self) -> bool {
        self.upper <= other.lower || other.upper <= self.lower
    }
}

/// Percentile bootstrap of the sample mean.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    samples: &[f64],
    confidence: f64,
    n_resamples: usize,
    rng: &mut R,
) -> Result<ConfidenceInterval> {
    stratified_bootstrap_ci(&[samples], confidence, n_resamples, rng)
}

/// Percentile bootstrap of the mean of stratum means, resampling within each
/// stratum. A single stratum is the plain bootstrap.
pub fn stratified_bootstrap_ci<R: Rng + ?Sized, S: AsRef<[f64]>>(
    strata: &[S],
    confidence: f64,
    n_resamples: usize,
    rng: &mut R,
) -> Result<ConfidenceInterval> {
    if strata.is_empty() {
        return Err(Error::TooFewSamples { needed: 2, got: 0 });
    }
    for stratum in strata {
        let len = stratum.as_ref().len();
        if len < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: len });
        }
        if stratum.as_ref().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bootstrap sample".into()));
        }
    }
    if !(confidence > 0.0 && confidence < 1.0) || n_resamples == 0 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < confidence < 1 and resamples > 0, got {confidence} and {n_resamples}"
        )));
    }
    let statistic = |means: &mut dyn Iterator<Item = f64>| means.sum::<f64>() / strata.len() as f64;
    let mean = statistic(&mut strata.iter().map(|s| mean_of(s.as_ref())));

    let mut resampled: Vec<f64> = (0..n_resamples)
        .map(|_| {
            statistic(&mut strata.iter().map(|s| {
                let s = s.as_ref();
                let total: f64 = (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).sum();
                total / s.len() as f64
            }))
        })
        .collect();
    resampled.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    Ok(ConfidenceInterval {
        mean,
        lower: quantile(&resampled, alpha / 2.0),
        upper: quantile(&resampled, 1.0 - alpha / 2.0),
    })
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn constant_samples_give_degenerate_interval() {
        let ci = bootstrap_ci(&[2.5; 10], 0.95, 1000, &mut stream(0)).unwrap();
        assert_eq!(ci, ConfidenceInterval { mean: 2.5, lower: 2.5, upper: 2.5 });
    }

    #[test]
    fn half_ones_matches_binomial_interval() {
        let samples: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let ci = bootstrap_ci(&samples, 0.95, 10_000, &mut stream(1)).unwrap();
        // normal approximation 0.5 ± 1.96 · sqrt(0.25 / 1000)
        let half_width = 1.96 * (0.25f64 / 1000.0).sqrt();
        assert_eq!(ci.mean, 0.5);
        assert!((ci.lower - (0.5 - half_width)).abs() < 0.01);
        assert!((ci.upper - (0.5 + half_width)).abs() < 0.01);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            bootstrap_ci(&[1.0], 0.95, 10, &mut stream(0)),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn stratified_mean_is_mean_of_stratum_means() {
        let strata = [vec![0.0, 0.0, 0.0, 0.0], vec![10.0, 10.0]];
        let ci = stratified_bootstrap_ci(&strata, 0.95, 100, &mut stream(2)).unwrap();
        assert_eq!(ci, ConfidenceInterval { mean: 5.0, lower: 5.0, upper: 5.0 });
    }

    #[test]
    fn seeded_runs_agree() {
        let samples = [0.3, 1.2, -0.4, 2.2, 0.9];
        let a = bootstrap_ci(&samples, 0.9, 500, &mut stream(5)).unwrap();
        let b = bootstrap_ci(&samples, 0.9, 500, &mut stream(5)).unwrap();
        assert_eq!(a, b);
    }
}
