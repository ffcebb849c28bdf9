//! Convergence-order fitting and Monte Carlo summary statistics.

use crate::error::{Error, Result};
use serde::Serialize;

/// Least-squares fit of log residual against log step size.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// (ln dt, ln residual) points that entered the fit.
    pub points: Vec<(f64, f64)>,
    /// Levels dropped because the residual was exactly zero.
    pub excluded_exact: usize,
}

/// Fit the convergence order from (dt, residual) pairs.
///
/// Zero residuals mean the identity held exactly at that level; they are
/// excluded from the fit and counted, since exactness is a stronger pass
/// than any power law.
pub fn fit_rate(levels: &[(f64, f64)]) -> Result<RateFit> {
    let mut excluded = 0usize;
    let mut pts = Vec::with_capacity(levels.len());
    for &(dt, res) in levels {
        if !(dt > 0.0) || !res.is_finite() || res < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "bad rate point (dt = {dt}, residual = {res})"
            )));
        }
        if res == 0.0 {
            excluded += 1;
        } else {
            pts.push((dt.ln(), res.ln()));
        }
    }
    if pts.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 4 nonzero levels, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let sum_x: f64 = pts.iter().map(|p| p.0).sum();
    let sum_y: f64 = pts.iter().map(|p| p.1).sum();
    let sum_xx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sum_xy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sum_xx - sum_x * sum_x;
    if denom.abs() < 1e-12 {
        return Err(Error::InvalidArgument(
            "rate fit requires at least two distinct step sizes".into(),
        ));
    }
    let slope = (n * sum_xy - sum_x * sum_y) / denom;
    let intercept = (sum_y - slope * sum_x) / n;
    let y_mean = sum_y / n;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - y_mean) * (p.1 - y_mean)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let fit = slope * p.0 + intercept;
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    let r_squared = if ss_tot <= 1e-30 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: pts,
        excluded_exact: excluded,
    })
}

/// Sample mean with a 95% normal-theory confidence half-width.
#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// 1.96 * sd / sqrt(n).
    pub half_width: f64,
}

impl McEstimate {
    pub fn stderr(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }
}

pub fn mc_estimate(samples: &[f64]) -> Result<McEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo estimate needs at least 2 samples, got {n}"
        )));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    let half_width = 1.96 * sd / (n as f64).sqrt();
    Ok(McEstimate {
        mean,
        sd,
        n,
        half_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise;

    #[test]
    fn exact_half_order_power_law() {
        let levels: Vec<(f64, f64)> = (6..12)
            .map(|l| {
                let dt = 1.0 / (1u64 << l) as f64;
                (dt, 3.0 * dt.sqrt())
            })
            .collect();
        let fit = fit_rate(&levels).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12, "slope {}", fit.slope);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_first_order_power_law() {
        let levels: Vec<(f64, f64)> = (4..9)
            .map(|l| {
                let dt = 1.0 / (1u64 << l) as f64;
                (dt, 0.7 * dt)
            })
            .collect();
        let fit = fit_rate(&levels).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_levels_rejected() {
        let levels = vec![(0.5, 1.0), (0.25, 0.7), (0.125, 0.5)];
        assert!(fit_rate(&levels).is_err());
    }

    #[test]
    fn zero_residuals_excluded_and_flagged() {
        let mut levels: Vec<(f64, f64)> = (4..9)
            .map(|l| {
                let dt = 1.0 / (1u64 << l) as f64;
                (dt, dt)
            })
            .collect();
        levels.push((1.0 / 512.0, 0.0));
        let fit = fit_rate(&levels).unwrap();
        assert_eq!(fit.excluded_exact, 1);
        assert!((fit.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_invariant_under_residual_rescaling() {
        let levels: Vec<(f64, f64)> = (5..10)
            .map(|l| {
                let dt = 1.0 / (1u64 << l) as f64;
                (dt, dt.powf(0.53) * 2.3)
            })
            .collect();
        let scaled: Vec<(f64, f64)> = levels.iter().map(|&(d, r)| (d, 17.0 * r)).collect();
        let a = fit_rate(&levels).unwrap();
        let b = fit_rate(&scaled).unwrap();
        assert!((a.slope - b.slope).abs() < 1e-12);
    }

    #[test]
    fn constant_samples_have_zero_spread() {
        let est = mc_estimate(&[2.5; 40]).unwrap();
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.sd, 0.0);
        assert_eq!(est.half_width, 0.0);
    }

    #[test]
    fn two_point_sample() {
        let est = mc_estimate(&[0.0, 2.0]).unwrap();
        assert!((est.mean - 1.0).abs() < 1e-15);
        assert!((est.sd - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn single_sample_rejected() {
        assert!(mc_estimate(&[1.0]).is_err());
    }

    #[test]
    fn clt_oracle_standard_normals() {
        let n = 10_000usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| noise::standard_normal(99, 0, i as u64))
            .collect();
        let est = mc_estimate(&samples).unwrap();
        assert!(est.mean.abs() < 0.05, "mean {}", est.mean);
        assert!((est.sd - 1.0).abs() < 0.05, "sd {}", est.sd);
    }

    #[test]
    fn half_width_shrinks_like_inverse_sqrt_n() {
        let n = 40_000usize;
        let samples: Vec<f64> = (0..n)
            .map(|i| noise::standard_normal(7, 1, i as u64))
            .collect();
        let full = mc_estimate(&samples).unwrap();
        let quarter = mc_estimate(&samples[..n / 4]).unwrap();
        let ratio = quarter.half_width / full.half_width;
        assert!(
            (ratio - 2.0).abs() < 0.2,
            "half-width ratio {ratio} should be near 2"
        );
    }
}
