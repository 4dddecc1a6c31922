//! Accuracy metrics and the replication harness comparing model variants
//! over repeated simulated datasets.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{derive_seed, mean, quantile_sorted, sd};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::panel::{partition_holdout, PanelDataset};
use crate::sampler::{run_gibbs_with_predictions, PosteriorDraws, PredictionRows, RePrior, SamplerConfig};
use crate::simgen::{gen_fully_synthetic, gen_semi_synthetic, GroundTruth, SemiSyntheticConfig, SyntheticConfig};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    if a == 0 {
        return Err(Error::Invalid("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn rmse(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(truth.len(), estimate.len())?;
    let ss: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Root-mean-square error of individual treatment effects over all rows.
pub fn pehe(tau_true: &[f64], tau_hat: &[f64]) -> Result<f64> {
    rmse(tau_true, tau_hat)
}

/// Fraction of `truth` inside [lower, upper] and the mean interval width.
pub fn coverage_and_width(truth: &[f64], lower: &[f64], upper: &[f64]) -> Result<(f64, f64)> {
    same_len(truth.len(), lower.len())?;
    same_len(truth.len(), upper.len())?;
    if let Some(i) = lower.iter().zip(upper).position(|(l, u)| l > u) {
        return Err(Error::IntervalOrder(i));
    }
    let n = truth.len() as f64;
    let covered = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(t, (l, u))| *l <= *t && *t <= *u)
        .count() as f64;
    let width = lower.iter().zip(upper).map(|(l, u)| u - l).sum::<f64>() / n;
    Ok((covered / n, width))
}

/// Model variant compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// No random effects.
    Vanilla,
    /// Gaussian random effects.
    Base,
    /// Horseshoe random effects.
    Sparse,
}

impl Variant {
    pub fn re_prior(self) -> RePrior {
        match self {
            Variant::Vanilla => RePrior::None,
            Variant::Base => RePrior::Base,
            Variant::Sparse => RePrior::Horseshoe,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla-BCF",
            Variant::Base => "B",
            Variant::Sparse => "S",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" | "vanilla-BCF" | "bcf" => Ok(Self::Vanilla),
            "B" | "base" => Ok(Self::Base),
            "S" | "sparse" | "horseshoe" => Ok(Self::Sparse),
            _ => Err(Error::Config(format!("unknown model variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Generator {
    FullySynthetic(SyntheticConfig),
    SemiSynthetic(SemiSyntheticConfig),
}

impl Generator {
    pub fn generate(&self, sparsity: f64, seed: u64) -> Result<(PanelDataset, GroundTruth)> {
        match self {
            Generator::FullySynthetic(c) => gen_fully_synthetic(&SyntheticConfig {
                sparsity,
                seed,
                ..c.clone()
            }),
            Generator::SemiSynthetic(c) => gen_semi_synthetic(
                &SemiSyntheticConfig {
                    sparsity,
                    seed,
                    ..c.clone()
                },
                None,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationPlan {
    pub generator: Generator,
    pub sparsities: Vec<f64>,
    pub variants: Vec<Variant>,
    pub n_reps: usize,
    /// Template; `re_prior` and `seed` are set per fit.
    pub sampler: SamplerConfig,
    /// Fraction of subjects contributing one held-out row.
    pub holdout_fraction: f64,
    pub seed: u64,
    pub workers: usize,
}

impl ReplicationPlan {
    /// Mixed model on the Friedman surface: one 200-tree ensemble over all
    /// covariates, no treatment ensemble, 5000 iterations with 1000 burn-in.
    pub fn fully_synthetic(sparsities: Vec<f64>, n_reps: usize, seed: u64) -> Self {
        Self {
            generator: Generator::FullySynthetic(SyntheticConfig::default()),
            sparsities,
            variants: vec![Variant::Base, Variant::Sparse],
            n_reps,
            sampler: SamplerConfig {
                max_iter: 5000,
                burn_in: 1000,
                mu_forest: ForestConfig::prognostic(),
                tau_forest: ForestConfig::disabled(),
                include_propensity: false,
                store_tau_forests: false,
                ..Default::default()
            },
            holdout_fraction: 0.1,
            seed,
            workers: 1,
        }
    }

    /// Full causal model on the semi-synthetic design, 10000 iterations with
    /// 3000 burn-in.
    pub fn semi_synthetic(sparsities: Vec<f64>, n_reps: usize, seed: u64) -> Self {
        Self {
            generator: Generator::SemiSynthetic(SemiSyntheticConfig::default()),
            sparsities,
            variants: vec![Variant::Vanilla, Variant::Base, Variant::Sparse],
            n_reps,
            sampler: SamplerConfig {
                max_iter: 10_000,
                burn_in: 3000,
                store_tau_forests: false,
                ..Default::default()
            },
            holdout_fraction: 0.1,
            seed,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_reps == 0 {
            return Err(Error::Config("replication count must be at least 1".into()));
        }
        if self.variants.is_empty() || self.sparsities.is_empty() {
            return Err(Error::Config("need at least one variant and sparsity level".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout fraction must lie in [0, 1)".into()));
        }
        self.sampler.validate()
    }
}

/// Metrics of one fitted variant on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub sparsity: f64,
    pub rep: usize,
    pub variant: Variant,
    /// (metric name, value) in a fixed order.
    pub values: Vec<(String, f64)>,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sparsity: f64,
    pub variant: Variant,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFit {
    pub sparsity: f64,
    pub rep: usize,
    pub variant: Variant,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub fits: Vec<FitMetrics>,
    pub failures: Vec<FailedFit>,
}

impl MetricsReport {
    pub fn get(&self, sparsity: f64, variant: Variant, metric: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.sparsity == sparsity && r.variant == variant && r.metric == metric)
    }

    /// Columns sparsity, variant, metric, mean, stderr, n_reps.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sparsity", "variant", "metric", "mean", "stderr", "n_reps"])?;
        for r in &self.rows {
            w.write_record([
                r.sparsity.to_string(),
                r.variant.label().to_string(),
                r.metric.clone(),
                r.mean.to_string(),
                r.stderr.to_string(),
                r.n_reps.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One line per fit and metric.
    pub fn write_fits_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sparsity", "rep", "variant", "metric", "value"])?;
        for f in &self.fits {
            for (m, v) in &f.values {
                w.write_record([
                    f.sparsity.to_string(),
                    f.rep.to_string(),
                    f.variant.label().to_string(),
                    m.clone(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn interval_bounds(draws: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut lo = vec![];
    let mut hi = vec![];
    let mut m = vec![];
    for d in draws {
        let mut s = d.clone();
        s.sort_by(f64::total_cmp);
        lo.push(quantile_sorted(&s, 0.025));
        hi.push(quantile_sorted(&s, 0.975));
        m.push(mean(d));
    }
    (m, lo, hi)
}

/// Parameter-recovery and held-out metrics of one fit.
pub fn fit_metrics(
    p: &PosteriorDraws,
    fit: &PanelDataset,
    fit_rows: &[usize],
    heldout_rows: &[usize],
    full: &PanelDataset,
    truth: &GroundTruth,
    causal: bool,
) -> Result<Vec<(String, f64)>> {
    let mut out = vec![];
    let (mu_t, tau_t, gamma_t) = truth.rows(fit_rows);
    let fitted: Vec<f64> = (0..fit.n_rows())
        .map(|i| p.mu_mean[i] + p.tau_mean[i] * fit.z[i] + p.gamma_mean[i])
        .collect();
    let y_true: Vec<f64> = (0..fit.n_rows())
        .map(|i| mu_t[i] + tau_t[i] * fit.z[i] + gamma_t[i])
        .collect();
    out.push(("param_Y_rmse".into(), rmse(&y_true, &fitted)?));
    let has_re = p.config.re_prior != RePrior::None;
    if has_re {
        let ids: Vec<usize> = fit
            .subjects()
            .iter()
            .map(|s| full.subject_position(s.id).expect("fit subjects come from the full data"))
            .collect();
        for (k, name) in [(0, "param_alpha1_rmse"), (1, "param_alpha2_rmse")] {
            let t: Vec<f64> = ids.iter().map(|&s| truth.alpha[s][k]).collect();
            let e: Vec<f64> = p.alpha_mean.iter().map(|a| a[k]).collect();
            out.push((name.into(), rmse(&t, &e)?));
        }
        out.push(("param_gamma_rmse".into(), rmse(&gamma_t, &p.gamma_mean)?));
    }
    if causal {
        out.push(("param_mu_rmse".into(), rmse(&mu_t, &p.mu_mean)?));
        out.push(("param_tau_pehe".into(), pehe(&tau_t, &p.tau_mean)?));
    }
    if heldout_rows.is_empty() {
        return Ok(out);
    }
    let pred = p
        .prediction
        .as_ref()
        .ok_or_else(|| Error::Invalid("held-out draws missing".into()))?;
    let (_, tau_h, gamma_h) = truth.rows(heldout_rows);
    let y_h: Vec<f64> = heldout_rows.iter().map(|&i| full.y[i]).collect();
    let (ym, ylo, yhi) = interval_bounds(&pred.y);
    out.push(("pred_Y_rmse".into(), rmse(&y_h, &ym)?));
    let (c, w) = coverage_and_width(&y_h, &ylo, &yhi)?;
    out.push(("pred_Y_coverage".into(), c));
    out.push(("pred_Y_width".into(), w));
    if has_re {
        let (gm, glo, ghi) = interval_bounds(&pred.gamma);
        out.push(("pred_gamma_rmse".into(), rmse(&gamma_h, &gm)?));
        let (c, w) = coverage_and_width(&gamma_h, &glo, &ghi)?;
        out.push(("pred_gamma_coverage".into(), c));
        out.push(("pred_gamma_width".into(), w));
    }
    if causal {
        let tm: Vec<f64> = pred.tau.iter().map(|d| mean(d)).collect();
        out.push(("pred_tau_pehe".into(), pehe(&tau_h, &tm)?));
    }
    Ok(out)
}

/// Generate, split, fit and score one (sparsity, replication) cell for
/// every variant.
fn run_cell(plan: &ReplicationPlan, si: usize, rep: usize) -> Vec<std::result::Result<FitMetrics, FailedFit>> {
    let sparsity = plan.sparsities[si];
    let cell_seed = derive_seed(plan.seed, (si as u64) << 32 | rep as u64);
    let fail = |variant: Variant, e: Error| FailedFit {
        sparsity,
        rep,
        variant,
        message: e.to_string(),
    };
    let prepared = (|| -> Result<_> {
        let (d, truth) = plan.generator.generate(sparsity, cell_seed)?;
        let x = (plan.holdout_fraction * d.n_subjects() as f64).round() as usize;
        let part = partition_holdout(&d, x, cell_seed)?;
        let fit = d.subset(&part.fit_rows)?;
        let pred = PredictionRows::from_dataset(&fit, &d, &part.heldout_rows)?;
        Ok((d, truth, part, fit, pred))
    })();
    let (d, truth, part, fit, pred) = match prepared {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return plan
                .variants
                .iter()
                .map(|&v| Err(fail(v, Error::Invalid(msg.clone()))))
                .collect();
        }
    };
    let causal = matches!(plan.generator, Generator::SemiSynthetic(_));
    plan.variants
        .iter()
        .map(|&variant| {
            let cfg = SamplerConfig {
                re_prior: variant.re_prior(),
                seed: derive_seed(cell_seed, variant as u64 + 1),
                ..plan.sampler.clone()
            };
            let p = run_gibbs_with_predictions(&fit, &cfg, Some(&pred)).map_err(|e| fail(variant, e))?;
            let values = fit_metrics(&p, &fit, &part.fit_rows, &part.heldout_rows, &d, &truth, causal)
                .map_err(|e| fail(variant, e))?;
            log::info!(
                "sparsity {sparsity} rep {rep} {}: {:.1}s",
                variant.label(),
                p.elapsed_secs
            );
            Ok(FitMetrics {
                sparsity,
                rep,
                variant,
                values,
                elapsed_secs: p.elapsed_secs,
            })
        })
        .collect()
}

/// Maximum tolerated share of failed fits.
pub const MAX_FAILURE_RATE: f64 = 0.10;

pub fn run_replication_study(plan: &ReplicationPlan) -> Result<MetricsReport> {
    plan.validate()?;
    let cells: Vec<(usize, usize)> = (0..plan.sparsities.len())
        .flat_map(|si| (0..plan.n_reps).map(move |r| (si, r)))
        .collect();
    let run = || -> Vec<_> {
        cells
            .par_iter()
            .flat_map_iter(|&(si, r)| run_cell(plan, si, r))
            .collect()
    };
    let results = if plan.workers > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(plan.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)
    } else {
        cells.iter().flat_map(|&(si, r)| run_cell(plan, si, r)).collect()
    };
    let mut fits = vec![];
    let mut failures = vec![];
    for r in results {
        match r {
            Ok(f) => fits.push(f),
            Err(f) => {
                log::warn!("replication failed: {f:?}");
                failures.push(f)
            }
        }
    }
    let total = fits.len() + failures.len();
    if failures.len() as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(Error::Invalid(format!(
            "{} of {total} fits failed (first: {})",
            failures.len(),
            failures[0].message
        )));
    }
    Ok(MetricsReport {
        rows: aggregate(plan, &fits),
        fits,
        failures,
    })
}

pub fn aggregate(plan: &ReplicationPlan, fits: &[FitMetrics]) -> Vec<MetricRow> {
    let mut rows = vec![];
    for &s in &plan.sparsities {
        for &v in &plan.variants {
            let group: Vec<&FitMetrics> = fits.iter().filter(|f| f.sparsity == s && f.variant == v).collect();
            let Some(first) = group.first() else { continue };
            for (name, _) in &first.values {
                let vals: Vec<f64> = group
                    .iter()
                    .filter_map(|f| f.values.iter().find(|(n, _)| n == name).map(|(_, x)| *x))
                    .collect();
                let n = vals.len();
                rows.push(MetricRow {
                    sparsity: s,
                    variant: v,
                    metric: name.clone(),
                    mean: mean(&vals),
                    stderr: if n > 1 { sd(&vals) / (n as f64).sqrt() } else { 0.0 },
                    n_reps: n,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.5355).abs() < 1e-4);
        assert!((pehe(&[1.0, 2.0], &[1.0, 3.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn rmse_is_homogeneous_and_permutation_invariant() {
        let t = [0.3, -1.0, 2.0, 5.0];
        let e = [0.0, -0.5, 2.5, 4.0];
        let r = rmse(&t, &e).unwrap();
        let t3: Vec<f64> = t.iter().map(|v| -3.0 * v).collect();
        let e3: Vec<f64> = e.iter().map(|v| -3.0 * v).collect();
        assert!((rmse(&t3, &e3).unwrap() - 3.0 * r).abs() < 1e-12);
        let perm = [2, 0, 3, 1];
        let tp: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        let ep: Vec<f64> = perm.iter().map(|&i| e[i]).collect();
        assert!((rmse(&tp, &ep).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(
            coverage_and_width(&[0.0, 1.0], &[-10.0, -10.0], &[10.0, 10.0]).unwrap(),
            (1.0, 20.0)
        );
        assert_eq!(coverage_and_width(&[0.0, 5.0], &[-1.0, -1.0], &[1.0, 1.0]).unwrap().0, 0.5);
        assert!(matches!(
            coverage_and_width(&[0.0], &[1.0], &[0.0]),
            Err(Error::IntervalOrder(0))
        ));
    }

    fn tiny_plan() -> ReplicationPlan {
        let mut plan = ReplicationPlan::fully_synthetic(vec![0.0], 1, 5);
        plan.generator = Generator::FullySynthetic(SyntheticConfig {
            n_subjects: 20,
            ..Default::default()
        });
        plan.sampler.max_iter = 30;
        plan.sampler.burn_in = 10;
        plan.sampler.mu_forest = ForestConfig::prognostic().with_trees(5);
        plan
    }

    #[test]
    fn single_replication_report_shape() {
        let plan = tiny_plan();
        let r = run_replication_study(&plan).unwrap();
        assert!(r.failures.is_empty());
        assert_eq!(r.fits.len(), 2);
        for v in [Variant::Base, Variant::Sparse] {
            let n = r.rows.iter().filter(|m| m.variant == v).count();
            assert_eq!(n, r.fits[0].values.len());
            assert_eq!(r.get(0.0, v, "pred_gamma_width").unwrap().n_reps, 1);
        }
    }

    #[test]
    fn report_is_deterministic() {
        let plan = tiny_plan();
        let a = run_replication_study(&plan).unwrap();
        let b = run_replication_study(&plan).unwrap();
        assert_eq!(a.rows, b.rows);
    }
}
