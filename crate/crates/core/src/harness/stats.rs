//! Means and Student-t confidence intervals over independent runs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("paired samples differ in length ({0} vs {1})")]
    Unpaired(usize, usize),
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

/// Two-sided Student-t quantile for the given confidence level.
pub fn t_quantile(level: f64, dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("dof is positive")
        .inverse_cdf(0.5 + level / 2.0)
}

/// Mean with a two-sided `level` confidence interval. Values are summed in
/// sorted order so the result does not depend on input order.
pub fn mean_ci_at(values: &[f64], level: f64) -> Result<Summary, StatsError> {
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / n as f64;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let std = (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt();
    let h = t_quantile(level, n - 1) * std / (n as f64).sqrt();
    Ok(Summary { n, mean, std, ci_low: mean - h, ci_high: mean + h })
}

pub fn mean_ci(values: &[f64]) -> Result<Summary, StatsError> {
    mean_ci_at(values, 0.95)
}

/// Confidence interval of the mean of `a[i] - b[i]`.
pub fn paired_diff_ci(a: &[f64], b: &[f64]) -> Result<Summary, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Unpaired(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_ci(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_runs_have_zero_width() {
        let s = mean_ci(&[0.7; 5]).unwrap();
        assert_eq!(s.mean, 0.7);
        assert_eq!(s.half_width(), 0.0);
    }

    #[test]
    fn two_runs() {
        let s = mean_ci(&[0.9, 1.0]).unwrap();
        assert!((s.mean - 0.95).abs() < 1e-15);
        // sd = 0.05 * sqrt 2, so the half width is t(0.975, 1) * 0.05.
        assert!((s.half_width() - 12.7062 * 0.05).abs() < 1e-4);
        assert_eq!(mean_ci(&[1.0]), Err(StatsError::TooFew(1)));
    }

    #[test]
    fn t_quantiles() {
        assert!((t_quantile(0.95, 1) - 12.7062).abs() < 1e-3);
        assert!((t_quantile(0.95, 9) - 2.2622).abs() < 1e-3);
        assert!((t_quantile(0.95, 39) - 2.0227).abs() < 1e-3);
    }

    #[test]
    fn permutation_invariant() {
        let a = [0.3, 0.1, 0.7, 0.25, 0.9];
        let b = [0.9, 0.25, 0.1, 0.7, 0.3];
        assert_eq!(mean_ci(&a), mean_ci(&b));
    }

    #[test]
    fn coverage_near_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = Normal::new(3.0, 2.0).unwrap();
        let mut hits = 0;
        for _ in 0..1000 {
            let xs: Vec<f64> = (0..40).map(|_| dist.sample(&mut rng)).collect();
            let s = mean_ci(&xs).unwrap();
            if s.ci_low <= 3.0 && 3.0 <= s.ci_high {
                hits += 1;
            }
        }
        // Binomial(1000, 0.95) has sd ~6.9; allow about 3.5 sd.
        assert!((926..=974).contains(&hits), "{hits}");
    }

    #[test]
    fn paired() {
        let s = paired_diff_ci(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5]).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-15 && s.half_width() < 1e-12);
        assert_eq!(paired_diff_ci(&[1.0], &[1.0, 2.0]), Err(StatsError::Unpaired(1, 2)));
    }
}
