//! Batch-means output analysis.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Point estimate with a 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn contains(&self, x: f64, widths: f64) -> bool {
        (self.mean - x).abs() <= widths * self.half_width
    }

    /// `a + b * self`.
    pub fn affine(self, a: f64, b: f64) -> Self {
        Self { mean: a + b * self.mean, half_width: b.abs() * self.half_width }
    }
}

/// Two-sided 97.5% quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

pub fn sample_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean of the batch values with a Student-t half-width. Needs at least two
/// batches.
pub fn batch_means(batches: &[f64]) -> Estimate {
    assert!(batches.len() >= 2, "batch means need at least two batches");
    let n = batches.len();
    let mean = sample_mean(batches);
    let se = (sample_variance(batches, mean) / n as f64).sqrt();
    Estimate { mean, half_width: t_quantile_975(n - 1) * se }
}

/// t-statistic of the least-squares slope of the batch values against the
/// batch index. Zero when the values are constant.
pub fn drift_t_statistic(batches: &[f64]) -> f64 {
    let n = batches.len();
    if n < 3 {
        return 0.0;
    }
    let xm = (n - 1) as f64 / 2.0;
    let ym = sample_mean(batches);
    let sxx: f64 = (0..n).map(|i| (i as f64 - xm).powi(2)).sum();
    let sxy: f64 = batches.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let rss: f64 = batches
        .iter()
        .enumerate()
        .map(|(i, y)| (y - ym - slope * (i as f64 - xm)).powi(2))
        .sum();
    let se = (rss / (n - 2) as f64 / sxx).sqrt();
    if se == 0.0 {
        if slope == 0.0 {
            0.0
        } else {
            slope.signum() * f64::INFINITY
        }
    } else {
        slope / se
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantiles() {
        assert!((t_quantile_975(19) - 2.093024).abs() < 1e-5);
        assert!((t_quantile_975(1) - 12.7062).abs() < 1e-3);
    }

    #[test]
    fn known_batches() {
        let e = batch_means(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let se = (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((e.half_width - t_quantile_975(3) * se).abs() < 1e-12);
        assert_eq!(batch_means(&[2.0, 2.0]).half_width, 0.0);
    }

    #[test]
    fn drift() {
        assert_eq!(drift_t_statistic(&[1.0; 10]), 0.0);
        let rising: Vec<f64> = (0..20).map(|i| i as f64 + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        assert!(drift_t_statistic(&rising) > 50.0);
        let flat = [1.0, 1.2, 0.9, 1.1, 1.0, 0.95, 1.05, 1.0];
        assert!(drift_t_statistic(&flat).abs() < 2.0);
    }

    proptest! {
        #[test]
        fn affine_scales_half_width(xs in proptest::collection::vec(-10.0f64..10.0, 2..30), a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let e = batch_means(&xs);
            let mapped: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
            let f = batch_means(&mapped);
            let g = e.affine(a, b);
            prop_assert!((f.mean - g.mean).abs() < 1e-9);
            prop_assert!((f.half_width - g.half_width).abs() < 1e-9);
        }
    }
}
