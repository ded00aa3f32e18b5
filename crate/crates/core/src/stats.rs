//! Small statistics toolkit: least squares with confidence intervals,
//! binomial score intervals, isotonic smoothing.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% interval for the slope.
    pub slope_ci: (f64, f64),
    pub r_squared: f64,
    pub points: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

fn t_quantile(dof: f64, level: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .map(|t| t.inverse_cdf(0.5 + level / 2.0))
        .unwrap_or(f64::INFINITY)
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(LabError::invalid("x and y differ in length"));
    }
    if n < 2 {
        return Err(LabError::InsufficientData(format!("line fit needs 2 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(LabError::InsufficientData("non-finite value in fit input".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::InsufficientData("all x values coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let (slope_se, half) = if n > 2 {
        let se = (sse / (nf - 2.0) / sxx).sqrt();
        (se, se * t_quantile(nf - 2.0, 0.95))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        slope_ci: (slope - half, slope + half),
        r_squared,
        points: n,
    })
}

/// Least squares for `y = s x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginFit {
    pub slope: f64,
    pub slope_se: f64,
    pub slope_ci: (f64, f64),
    pub points: usize,
}

pub fn fit_through_origin(x: &[f64], y: &[f64]) -> Result<OriginFit> {
    let n = x.len();
    if n != y.len() || n == 0 {
        return Err(LabError::InsufficientData("origin fit needs matching, non-empty input".into()));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(LabError::InsufficientData("all x values are zero".into()));
    }
    let slope = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let (se, half) = if n > 1 {
        let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
        let se = (sse / (n as f64 - 1.0) / sxx).sqrt();
        (se, se * t_quantile(n as f64 - 1.0, 0.95))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(OriginFit {
        slope,
        slope_se: se,
        slope_ci: (slope - half, slope + half),
        points: n,
    })
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

/// 95% Wilson score interval for `k` successes in `n` trials; for `k = 0`
/// the upper end is the rule-of-three bound `3/n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    if k == 0 {
        return (0.0, (3.0 / n as f64).min(1.0));
    }
    let z = normal_quantile(0.975);
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Weighted isotonic regression onto nonincreasing sequences (pool adjacent
/// violators).
pub fn isotonic_nonincreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (v2, w2, c2) = blocks[blocks.len() - 1];
            let (v1, w1, c1) = blocks[blocks.len() - 2];
            if v1 >= v2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            let v = if w > 0.0 { (v1 * w1 + v2 * w2) / w } else { 0.5 * (v1 + v2) };
            *blocks.last_mut().expect("nonempty") = (v, w, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, c)| std::iter::repeat_n(v, c))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl MeanEstimate {
    /// Two-sided interval at the given level (normal approximation).
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let z = normal_quantile(0.5 + level / 2.0);
        (self.mean - z * self.std_error, self.mean + z * self.std_error)
    }
}

pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let var = sample_variance(values);
    MeanEstimate {
        mean,
        std_error: (var / n.max(1) as f64).sqrt(),
        count: n,
    }
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line_is_recovered() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert!(f.slope_ci.0 <= f.slope && f.slope <= f.slope_ci.1);
        assert!(fit_line(&[1.0], &[1.0]).is_err());
        assert!(fit_line(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn slope_interval_matches_textbook_case() {
        // Hand-checkable case: slope 0.8, sxx = 10.
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 0.0, 2.0, 4.0, 3.0];
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope - 0.8).abs() < 1e-12);
        let sse: f64 = x.iter().zip(&y).map(|(a, b)| (b - f.predict(*a)).powi(2)).sum();
        let se = (sse / 3.0 / 10.0).sqrt();
        assert!((f.slope_se - se).abs() < 1e-12);
        assert!((f.slope_ci.1 - f.slope - 3.182446305284263 * se).abs() < 1e-9);
    }

    #[test]
    fn wilson_cases() {
        assert_eq!(wilson_interval(0, 100), (0.0, 0.03));
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        let (lo, hi) = wilson_interval(100, 100);
        assert!(hi == 1.0 && lo < 1.0);
    }

    #[test]
    fn quantiles() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!((2.0 * (1.0 - normal_cdf(1.0)) - 0.31731050786291415).abs() < 1e-9);
    }

    #[test]
    fn isotonic_pools_violators() {
        let out = isotonic_nonincreasing(&[0.5, 0.7, 0.2, 0.3, 0.1], &[1.0; 5]);
        assert_eq!(out, vec![0.6, 0.6, 0.25, 0.25, 0.1]);
    }

    proptest! {
        #[test]
        fn isotonic_output_is_monotone(v in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let w = vec![1.0; v.len()];
            let out = isotonic_nonincreasing(&v, &w);
            prop_assert_eq!(out.len(), v.len());
            prop_assert!(out.windows(2).all(|p| p[0] >= p[1] - 1e-15));
            let s1: f64 = v.iter().sum();
            let s2: f64 = out.iter().sum();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }

        #[test]
        fn wilson_contains_estimate(n in 1usize..500, frac in 0.0f64..1.0) {
            let k = ((n as f64) * frac).floor() as usize;
            let (lo, hi) = wilson_interval(k, n);
            let p = k as f64 / n as f64;
            prop_assert!(lo <= p + 1e-15 && p <= hi + 1e-15);
            prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }
}
