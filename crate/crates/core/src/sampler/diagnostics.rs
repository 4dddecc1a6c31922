//! Convergence summaries: trace series, running means and a split-chain
//! effective sample size.

use serde::Serialize;

use super::PosteriorDraws;
use crate::dist::{mean, quantile_sorted};
use crate::error::{Error, Result};

/// Effective sample size of one scalar series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EssEstimate {
    Value(f64),
    /// Zero variance; no meaningful estimate.
    Degenerate,
}

impl EssEstimate {
    pub fn value(&self) -> Option<f64> {
        match *self {
            EssEstimate::Value(v) => Some(v),
            EssEstimate::Degenerate => None,
        }
    }
}

/// Split the series in half and combine within- and between-half variance
/// with autocorrelations truncated by Geyer's initial monotone sequence.
pub fn effective_sample_size(x: &[f64]) -> EssEstimate {
    let n = x.len() / 2;
    if n < 2 {
        return EssEstimate::Degenerate;
    }
    let halves = [&x[..n], &x[x.len() - n..]];
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let acov: Vec<Vec<f64>> = halves
        .iter()
        .zip(&means)
        .map(|(h, &m)| autocovariance(h, m))
        .collect();
    let nf = n as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / 2.0;
    let grand = (means[0] + means[1]) / 2.0;
    let b = nf * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if !(var_plus > 0.0) || !(w > 0.0) {
        return EssEstimate::Degenerate;
    }
    let rho = |t: usize| 1.0 - (w - (acov[0][t] + acov[1][t]) / 2.0) / var_plus;

    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / (2.0 * nf).log10());
    EssEstimate::Value(2.0 * nf / tau)
}

fn autocovariance(x: &[f64], m: f64) -> Vec<f64> {
    let n = x.len();
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..n)
        .map(|t| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSeries {
    pub name: String,
    pub values: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub ess: EssEstimate,
}

impl TraceSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let running_mean = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                acc += v;
                acc / (i + 1) as f64
            })
            .collect();
        let ess = effective_sample_size(&values);
        Self {
            name: name.into(),
            values,
            running_mean,
            ess,
        }
    }
}

/// Posterior mean and central 95% interval of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            mean: mean(values),
            lo: quantile_sorted(&s, 0.025),
            hi: quantile_sorted(&s, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub n_draws: usize,
    pub traces: Vec<TraceSeries>,
    /// Per-subject (intercept, slope) summaries.
    pub alpha: Vec<[Interval; 2]>,
    /// Per-row summaries when fits were stored, else means only.
    pub mu: Vec<Interval>,
    pub tau: Vec<Interval>,
}

/// Number of per-subject λ traces exported.
const LAMBDA_TRACES: usize = 3;

pub fn summarize_chain(draws: &PosteriorDraws) -> Result<ChainSummary> {
    let k = draws.n_retained();
    if k < 2 {
        return Err(Error::EmptyChain);
    }
    let mut traces = vec![TraceSeries::new("sigma2", draws.sigma2.clone())];
    if !draws.rho.is_empty() {
        for d in 0..2 {
            traces.push(TraceSeries::new(
                format!("rho{}", d + 1),
                draws.rho.iter().map(|r| r[d]).collect(),
            ));
        }
    }
    if !draws.sigma_b.is_empty() {
        for (name, i, j) in [("sigma_b11", 0, 0), ("sigma_b12", 0, 1), ("sigma_b22", 1, 1)] {
            traces.push(TraceSeries::new(name, draws.sigma_b.iter().map(|m| m[i][j]).collect()));
        }
    }
    if let Some(l) = &draws.lambda {
        for s in 0..draws.n_subjects().min(LAMBDA_TRACES) {
            for d in 0..2 {
                traces.push(TraceSeries::new(
                    format!("lambda{}_{}", d + 1, draws.subject_ids[s]),
                    l.iter().map(|a| a[s][d]).collect(),
                ));
            }
        }
    }

    let alpha = (0..draws.n_subjects())
        .map(|s| {
            let col = |d: usize| draws.alpha.iter().map(|a| a[s][d]).collect::<Vec<_>>();
            [Interval::of(&col(0)), Interval::of(&col(1))]
        })
        .collect();
    let per_row = |stored: &Option<Vec<Vec<f64>>>, means: &[f64]| -> Vec<Interval> {
        match stored {
            Some(v) => (0..draws.n_rows)
                .map(|i| Interval::of(&v.iter().map(|d| d[i]).collect::<Vec<_>>()))
                .collect(),
            None => means
                .iter()
                .map(|&m| Interval {
                    mean: m,
                    lo: f64::NAN,
                    hi: f64::NAN,
                })
                .collect(),
        }
    };
    Ok(ChainSummary {
        n_draws: k,
        traces,
        alpha,
        mu: per_row(&draws.mu, &draws.mu_mean),
        tau: per_row(&draws.tau, &draws.tau_mean),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{std_normal, substream};

    #[test]
    fn white_noise_ess_near_length() {
        let mut rng = substream(21, 0);
        for rep in 0..5 {
            let x: Vec<f64> = (0..1000).map(|_| std_normal(&mut rng)).collect();
            let e = effective_sample_size(&x).value().unwrap();
            assert!((700.0..=1300.0).contains(&e), "rep {rep}: {e}");
        }
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert_eq!(effective_sample_size(&[2.0; 100]), EssEstimate::Degenerate);
    }

    #[test]
    fn autocorrelated_series_has_smaller_ess() {
        let mut rng = substream(22, 0);
        let mut x = vec![0.0; 2000];
        for i in 1..x.len() {
            x[i] = 0.9 * x[i - 1] + std_normal(&mut rng);
        }
        // AR(1) with φ = 0.9 has ESS ≈ n (1 − φ)/(1 + φ) ≈ 105.
        let e = effective_sample_size(&x).value().unwrap();
        assert!((50.0..250.0).contains(&e), "{e}");
    }

    #[test]
    fn running_mean_shape() {
        let t = TraceSeries::new("x", vec![1.0, 3.0, 5.0]);
        assert_eq!(t.running_mean, vec![1.0, 2.0, 3.0]);
    }
}
