use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dist::{inverse_gamma, ChainRng};

/// Residual variance with its scaled-inverse-χ²(ν, λ) prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaState {
    pub sigma2: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl SigmaState {
    /// Prior with ν degrees of freedom and λ chosen so that the prior puts
    /// `mass` (0.9 by default) below `sigma2_hat`. The chain starts at
    /// `sigma2_hat`.
    pub fn calibrated(sigma2_hat: f64, nu: f64, mass: f64) -> Self {
        let q = ChiSquared::new(nu)
            .expect("positive degrees of freedom")
            .inverse_cdf(1.0 - mass);
        Self {
            sigma2: sigma2_hat,
            nu,
            lambda: sigma2_hat * q / nu,
        }
    }

    pub fn default_for(sigma2_hat: f64) -> Self {
        Self::calibrated(sigma2_hat, 3.0, 0.9)
    }

    /// Posterior shape and rate of the inverse-gamma conditional.
    pub fn posterior_params(&self, residuals: &[f64]) -> (f64, f64) {
        let ss: f64 = residuals.iter().map(|r| r * r).sum();
        let n = residuals.len() as f64;
        ((self.nu + n) / 2.0, (self.nu * self.lambda + ss) / 2.0)
    }
}

/// Draw σ² from its conjugate conditional given the full residual vector.
pub fn update_sigma2(residuals: &[f64], s: &SigmaState, rng: &mut ChainRng) -> SigmaState {
    let (shape, rate) = s.posterior_params(residuals);
    SigmaState {
        sigma2: inverse_gamma(rng, shape, rate),
        ..*s
    }
}

/// Residual variance of an ordinary least-squares fit of `y` on the columns
/// of `x` plus an intercept; falls back to the sample variance of `y` when
/// there are too few rows or the system is singular.
pub fn least_squares_sigma2(x_cols: &[&[f64]], y: &[f64]) -> f64 {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n.max(1) as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
    let p = x_cols.len() + 1;
    if n <= p + 1 {
        return var.max(1e-8);
    }
    let xm = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x_cols[j - 1][i] });
    let yv = DVector::from_column_slice(y);
    let mut xtx = xm.transpose() * &xm;
    for j in 0..p {
        xtx[(j, j)] += 1e-10;
    }
    let Some(chol) = xtx.cholesky() else {
        return var.max(1e-8);
    };
    let beta = chol.solve(&(xm.transpose() * &yv));
    let resid = &yv - &xm * beta;
    (resid.norm_squared() / (n - p) as f64).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{std_normal, substream};

    #[test]
    fn calibration_puts_ninety_percent_below_estimate() {
        let s = SigmaState::default_for(2.0);
        let mut rng = substream(11, 0);
        let n = 100_000;
        let below = (0..n)
            .filter(|_| update_sigma2(&[], &s, &mut rng).sigma2 < 2.0)
            .count();
        assert!((below as f64 / n as f64 - 0.9).abs() < 0.01);
    }

    #[test]
    fn prior_dominated_when_residuals_vanish() {
        let s = SigmaState {
            sigma2: 1.0,
            nu: 10_000.0,
            lambda: 0.25,
        };
        let mut rng = substream(12, 0);
        let draws: Vec<f64> = (0..2000)
            .map(|_| update_sigma2(&[0.0; 5], &s, &mut rng).sigma2)
            .collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((m - 0.25).abs() < 0.01, "{m}");
    }

    #[test]
    fn recovers_noise_variance_and_scales_quadratically() {
        let mut rng = substream(13, 0);
        let r: Vec<f64> = (0..10_000).map(|_| 2.0 * std_normal(&mut rng)).collect();
        let s = SigmaState::default_for(1.0);
        let draws = 2000;
        let m: f64 = (0..draws)
            .map(|_| update_sigma2(&r, &s, &mut rng).sigma2)
            .sum::<f64>()
            / draws as f64;
        assert!((3.8..=4.2).contains(&m), "{m}");
        let r2: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let m2: f64 = (0..draws)
            .map(|_| update_sigma2(&r2, &s, &mut rng).sigma2)
            .sum::<f64>()
            / draws as f64;
        assert!((m2 / m - 4.0).abs() < 0.05, "{}", m2 / m);
    }

    #[test]
    fn least_squares_removes_linear_signal() {
        let mut rng = substream(14, 0);
        let x: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 0.5 * std_normal(&mut rng)).collect();
        let s2 = least_squares_sigma2(&[&x], &y);
        assert!((s2 - 0.25).abs() < 0.05, "{s2}");
    }
}
