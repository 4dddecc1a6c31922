//! Causal quantities computed from retained draws: time-specific and
//! longitudinal treatment effects, per-subject effects, counterfactual
//! trajectories and prognostic-effect harmonization.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::dist::{mean, quantile_sorted};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::sampler::{EnsembleDraws, PosteriorDraws};

/// Posterior mean with an equal-tailed credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_draws: usize,
}

impl EffectSummary {
    /// 95% interval from the 2.5% and 97.5% empirical quantiles.
    pub fn from_draws(values: &[f64]) -> Result<Self> {
        Self::with_level(values, 0.95)
    }

    pub fn with_level(values: &[f64], level: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyChain);
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!("interval level {level} not in (0,1)")));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let a = (1.0 - level) / 2.0;
        let lower = quantile_sorted(&s, a);
        let upper = quantile_sorted(&s, 1.0 - a);
        // Clamp against rounding when every draw is equal.
        let m = mean(values).clamp(lower, upper);
        Ok(Self {
            mean: m,
            lower,
            upper,
            n_draws: values.len(),
        })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Two-decimal "mean [lower, upper]".
impl fmt::Display for EffectSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} [{:.2}, {:.2}]", self.mean, self.lower, self.upper)
    }
}

/// Baseline moderators and evaluation time for an effect query.
#[derive(Debug, Clone, PartialEq)]
pub struct CateQuery {
    pub w: Vec<f64>,
    pub t: f64,
}

fn ensembles(draws: &PosteriorDraws) -> Result<&EnsembleDraws> {
    draws
        .tau_forests
        .as_ref()
        .ok_or_else(|| Error::Invalid("treatment ensembles were not retained".into()))
}

/// τ(W, t) for every retained draw.
pub fn tau_draws(draws: &PosteriorDraws, w: &[f64], t: f64) -> Result<Vec<f64>> {
    let ens = ensembles(draws)?;
    if w.len() + 1 != ens.n_covariates() {
        return Err(Error::Dimension {
            expected: ens.n_covariates().saturating_sub(1),
            got: w.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Invalid(format!("evaluation time {t} must be finite and >= 0")));
    }
    let sc = &ens.template.scaler;
    let j = sc.min.len() - 1;
    let (lo, hi) = (sc.min[j], sc.min[j] + sc.range[j]);
    let slack = 0.1 * (hi - lo);
    if t < lo - slack || t > hi + slack {
        log::warn!("time {t} lies outside the training range [{lo}, {hi}]; extrapolating");
    }
    let mut row = w.to_vec();
    row.push(t);
    ens.predict_all(&row)
}

pub fn cate_at_time(draws: &PosteriorDraws, q: &CateQuery) -> Result<EffectSummary> {
    EffectSummary::from_draws(&tau_draws(draws, &q.w, q.t)?)
}

/// τ(W, t2) − τ(W, t1) per draw; exactly zero when t1 = t2.
pub fn longitudinal_draws(draws: &PosteriorDraws, w: &[f64], t1: f64, t2: f64) -> Result<Vec<f64>> {
    let a = tau_draws(draws, w, t1)?;
    if t1 == t2 {
        return Ok(vec![0.0; a.len()]);
    }
    let b = tau_draws(draws, w, t2)?;
    Ok(b.iter().zip(&a).map(|(x, y)| x - y).collect())
}

pub fn longitudinal_effect(draws: &PosteriorDraws, w: &[f64], t1: f64, t2: f64) -> Result<EffectSummary> {
    EffectSummary::from_draws(&longitudinal_draws(draws, w, t1, t2)?)
}

fn check_alignment(draws: &PosteriorDraws, d: &PanelDataset) -> Result<()> {
    let ids: Vec<i64> = d.subjects().iter().map(|s| s.id).collect();
    if ids != draws.subject_ids {
        return Err(Error::Invalid(
            "dataset subjects do not match the fitted subjects".into(),
        ));
    }
    Ok(())
}

/// Per draw, the average over subjects of τ(W_i, t).
pub fn average_effect_draws(draws: &PosteriorDraws, d: &PanelDataset, t: f64) -> Result<Vec<f64>> {
    check_alignment(draws, d)?;
    let n = d.n_subjects();
    let mut acc = vec![0.0; draws.n_retained()];
    for s in 0..n {
        for (a, v) in acc.iter_mut().zip(tau_draws(draws, d.subject_w(s), t)?) {
            *a += v / n as f64;
        }
    }
    Ok(acc)
}

/// Population effect at time t (averaged over the observed moderators).
pub fn average_effect(draws: &PosteriorDraws, d: &PanelDataset, t: f64) -> Result<EffectSummary> {
    EffectSummary::from_draws(&average_effect_draws(draws, d, t)?)
}

/// Population effect on the change in outcome between t1 and t2.
pub fn average_longitudinal_effect(
    draws: &PosteriorDraws,
    d: &PanelDataset,
    t1: f64,
    t2: f64,
) -> Result<EffectSummary> {
    let a = average_effect_draws(draws, d, t1)?;
    if t1 == t2 {
        return EffectSummary::from_draws(&vec![0.0; a.len()]);
    }
    let b = average_effect_draws(draws, d, t2)?;
    EffectSummary::from_draws(&b.iter().zip(&a).map(|(x, y)| x - y).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectEffect {
    pub subject: i64,
    /// Observed treatment code.
    pub z: f64,
    pub effect: EffectSummary,
}

/// One effect per subject at time t, sorted by posterior mean.
pub fn icate_summary(draws: &PosteriorDraws, d: &PanelDataset, t: f64) -> Result<Vec<SubjectEffect>> {
    check_alignment(draws, d)?;
    let z = d.subject_z();
    let mut out = (0..d.n_subjects())
        .map(|s| {
            Ok(SubjectEffect {
                subject: d.subjects()[s].id,
                z: z[s],
                effect: cate_at_time(
                    draws,
                    &CateQuery {
                        w: d.subject_w(s).to_vec(),
                        t,
                    },
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.effect.mean.total_cmp(&b.effect.mean).then(a.subject.cmp(&b.subject)));
    Ok(out)
}

/// Outcome draws `[time][draw]` for `subject` under treatment code `z_cf`:
/// μ at the subject's last observed row + τ(W, t) z_cf + α_i1 + α_i2 t.
pub fn counterfactual_draws(
    draws: &PosteriorDraws,
    d: &PanelDataset,
    subject: i64,
    z_cf: f64,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_alignment(draws, d)?;
    if z_cf != 0.5 && z_cf != -0.5 {
        return Err(Error::BadTreatment(z_cf));
    }
    let s = draws.subject_position(subject).ok_or(Error::UnknownSubject(subject))?;
    let w = d.subject_w(s);
    times
        .iter()
        .map(|&t| {
            let tau = tau_draws(draws, w, t)?;
            Ok((0..draws.n_retained())
                .map(|k| {
                    let a = draws.alpha[k][s];
                    draws.mu_last[k][s] + tau[k] * z_cf + a[0] + a[1] * t
                })
                .collect())
        })
        .collect()
}

pub fn predict_counterfactual(
    draws: &PosteriorDraws,
    d: &PanelDataset,
    subject: i64,
    z_cf: f64,
    times: &[f64],
) -> Result<Vec<EffectSummary>> {
    counterfactual_draws(draws, d, subject, z_cf, times)?
        .iter()
        .map(|v| EffectSummary::from_draws(v))
        .collect()
}

/// Outcome with the estimated prognostic (scanner) component removed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonizedOutcome {
    pub y: Vec<f64>,
    pub y_harm: Vec<f64>,
    /// Posterior-mean prognostic effect per row.
    pub mu_hat: Vec<f64>,
    /// Per-subject mean of the prognostic covariates.
    pub k_bar: Vec<Vec<f64>>,
    pub slope_before: f64,
    pub slope_after: f64,
}

/// y_harm = y − μ̂ + mean(μ̂).
pub fn harmonize(draws: &PosteriorDraws, d: &PanelDataset) -> Result<HarmonizedOutcome> {
    check_alignment(draws, d)?;
    if d.n_rows() != draws.mu_mean.len() {
        return Err(Error::Dimension {
            expected: draws.mu_mean.len(),
            got: d.n_rows(),
        });
    }
    let mu_hat = draws.mu_mean.clone();
    let grand = mean(&mu_hat);
    let y_harm: Vec<f64> = d.y.iter().zip(&mu_hat).map(|(y, m)| y - m + grand).collect();
    Ok(HarmonizedOutcome {
        slope_before: ols_slope(&mu_hat, &d.y),
        slope_after: ols_slope(&mu_hat, &y_harm),
        k_bar: (0..d.n_subjects()).map(|s| d.subject_k_mean(s)).collect(),
        y: d.y.clone(),
        y_harm,
        mu_hat,
    })
}

/// Least-squares slope of `y` on `x`; zero when `x` is constant.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx
}

/// One labelled row of an effect table.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectRow {
    pub estimand: String,
    pub summary: EffectSummary,
}

/// Effect table with columns estimand, mean, lo95, hi95.
pub fn write_effect_table(path: &Path, rows: &[EffectRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["estimand", "mean", "lo95", "hi95"])?;
    for r in rows {
        w.write_record([
            r.estimand.clone(),
            r.summary.mean.to_string(),
            r.summary.lower.to_string(),
            r.summary.upper.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-subject effects with columns subject, z, mean, lo95, hi95.
pub fn write_icate_table(path: &Path, rows: &[SubjectEffect]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject", "z", "mean", "lo95", "hi95"])?;
    for r in rows {
        w.write_record([
            r.subject.to_string(),
            r.z.to_string(),
            r.effect.mean.to_string(),
            r.effect.lower.to_string(),
            r.effect.upper.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::ForestConfig;
    use crate::panel::PanelRow;
    use crate::sampler::{run_gibbs, SamplerConfig};

    fn data() -> PanelDataset {
        let mut rows = vec![];
        for s in 0..12 {
            let z = if s % 2 == 0 { 1.0 } else { 0.0 };
            for j in 0..3 {
                let t = j as f64;
                rows.push(PanelRow {
                    subject: s,
                    t,
                    y: (s as f64) * 0.1 + t * (0.5 + z) + 0.05 * ((s * 7 + j) % 5) as f64,
                    z,
                    k: vec![((s * 3 + j as i64) % 7) as f64],
                    w: vec![s as f64 / 12.0],
                    pi: None,
                });
            }
        }
        PanelDataset::from_rows(rows, vec!["K1".into()], vec!["W1".into()]).unwrap()
    }

    fn fit(d: &PanelDataset, tau_trees: usize) -> PosteriorDraws {
        run_gibbs(
            d,
            &SamplerConfig {
                max_iter: 60,
                burn_in: 20,
                seed: 1,
                mu_forest: ForestConfig::prognostic().with_trees(10),
                tau_forest: ForestConfig::treatment().with_trees(tau_trees),
                store_fits: true,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn summary_format_and_order() {
        let s = EffectSummary {
            mean: 0.26,
            lower: 0.09,
            upper: 0.44,
            n_draws: 10,
        };
        assert_eq!(s.to_string(), "0.26 [0.09, 0.44]");
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let a = EffectSummary::with_level(&v, 0.5).unwrap();
        let b = EffectSummary::with_level(&v, 0.95).unwrap();
        assert!(b.lower <= a.lower && b.upper >= a.upper);
        assert!(b.lower <= b.mean && b.mean <= b.upper);
    }

    #[test]
    fn null_treatment_forest_gives_zero_effect() {
        let d = data();
        let p = fit(&d, 0);
        let s = cate_at_time(&p, &CateQuery { w: vec![0.3], t: 1.0 }).unwrap();
        assert_eq!((s.mean, s.lower, s.upper), (0.0, 0.0, 0.0));
    }

    #[test]
    fn longitudinal_identities() {
        let d = data();
        let p = fit(&d, 5);
        let z = longitudinal_draws(&p, &[0.4], 1.3, 1.3).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let a = tau_draws(&p, &[0.4], 0.5).unwrap();
        let b = tau_draws(&p, &[0.4], 2.0).unwrap();
        let l = longitudinal_draws(&p, &[0.4], 0.5, 2.0).unwrap();
        for k in 0..l.len() {
            assert_eq!(l[k], b[k] - a[k]);
        }
        assert!(matches!(
            tau_draws(&p, &[0.4, 1.0], 1.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn counterfactual_contrast_is_tau() {
        let d = data();
        let p = fit(&d, 5);
        let times = [0.0, 0.7, 2.0, 3.5];
        let up = counterfactual_draws(&p, &d, 3, 0.5, &times).unwrap();
        let down = counterfactual_draws(&p, &d, 3, -0.5, &times).unwrap();
        let s = p.subject_position(3).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let tau = tau_draws(&p, d.subject_w(s), t).unwrap();
            for k in 0..tau.len() {
                assert!((up[i][k] - down[i][k] - tau[k]).abs() < 1e-10);
            }
        }
        assert!(matches!(
            counterfactual_draws(&p, &d, 99, 0.5, &times),
            Err(Error::UnknownSubject(99))
        ));
    }

    #[test]
    fn counterfactual_at_observed_last_row_matches_fit() {
        let d = data();
        let p = fit(&d, 5);
        let s = 4;
        let row = d.subjects()[s].start + d.subjects()[s].len - 1;
        let id = d.subjects()[s].id;
        let cf = counterfactual_draws(&p, &d, id, d.z[row], &[d.t[row]]).unwrap();
        let mu = p.mu.as_ref().unwrap();
        let tau = p.tau.as_ref().unwrap();
        for k in 0..p.n_retained() {
            let a = p.alpha[k][s];
            let fitted = mu[k][row] + tau[k][row] * d.z[row] + a[0] + a[1] * d.t[row];
            assert!((cf[0][k] - fitted).abs() < 1e-9);
        }
    }

    #[test]
    fn icate_shape_and_sorting() {
        let d = data();
        let p = fit(&d, 5);
        let r = icate_summary(&p, &d, 1.0).unwrap();
        assert_eq!(r.len(), d.n_subjects());
        assert!(r.windows(2).all(|w| w[0].effect.mean <= w[1].effect.mean));
    }

    #[test]
    fn harmonization_preserves_mean() {
        let d = data();
        let p = fit(&d, 5);
        let h = harmonize(&p, &d).unwrap();
        assert!((mean(&h.y_harm) - mean(&d.y)).abs() < 1e-8);
        assert!((h.slope_after - (h.slope_before - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn ols_slope_values() {
        assert_eq!(ols_slope(&[1.0, 1.0], &[0.0, 3.0]), 0.0);
        assert!((ols_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
    }
}
