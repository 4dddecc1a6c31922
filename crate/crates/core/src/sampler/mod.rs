//! Three-stage Gibbs sampler: prognostic forest and σ², treatment forest,
//! then random effects and their shrinkage hierarchy.

mod diagnostics;
mod draws;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dist::{std_normal, substream};
use crate::error::{Error, Result};
use crate::forest::{
    backfit_sweep, least_squares_sigma2, update_sigma2, ColMatrix, Forest, ForestConfig,
    MoveStats, SigmaState, TrainingCache,
};
use crate::panel::{estimate_propensity, PanelDataset, PropensityMode, StandardizationParams};
use crate::random_effects::{
    draw_alpha, from_mat, update_base_covariance, update_horseshoe, GaussianREPrior,
    GlobalScaleMode, HorseshoeState, PriorCovariance, RandomEffectState,
};

pub use diagnostics::{
    effective_sample_size, summarize_chain, ChainSummary, EssEstimate, Interval, TraceSeries,
};
pub use draws::{data_checksum, EnsembleDraws, PosteriorDraws, PredictionDraws};

/// Prior on the random effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RePrior {
    /// α pinned at zero (plain causal forest).
    None,
    /// Gaussian prior with inverse-Wishart covariance.
    Base,
    /// Horseshoe global-local shrinkage.
    Horseshoe,
}

impl std::str::FromStr for RePrior {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "vanilla" => Ok(Self::None),
            "base" | "B" => Ok(Self::Base),
            "horseshoe" | "S" => Ok(Self::Horseshoe),
            _ => Err(Error::Config(format!("unknown random-effect prior `{s}`"))),
        }
    }
}

impl std::fmt::Display for RePrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RePrior::None => "none",
            RePrior::Base => "base",
            RePrior::Horseshoe => "horseshoe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub max_iter: usize,
    /// Retained draws discarded at the start, counted after thinning.
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Stream index of this chain under `seed`.
    pub chain: u64,
    pub re_prior: RePrior,
    pub mu_forest: ForestConfig,
    pub tau_forest: ForestConfig,
    pub global_scale: GlobalScaleMode,
    /// Fit on the outcome mapped to [−0.5, 0.5]; outputs are mapped back.
    pub standardize: bool,
    /// Append the propensity score to the prognostic covariates.
    pub include_propensity: bool,
    /// `None` picks supplied, then logistic (when moderators exist), then
    /// constant.
    pub propensity_mode: Option<PropensityMode>,
    /// Hold σ² fixed on the fitting scale instead of sampling it.
    pub fixed_sigma2: Option<f64>,
    /// Hold the base-prior covariance fixed on the fitting scale.
    pub fixed_re_covariance: Option<[[f64; 2]; 2]>,
    /// Keep per-row μ and τ for every retained draw.
    pub store_fits: bool,
    /// Keep per-subject λ for every retained draw.
    pub store_lambda: bool,
    /// Keep the treatment ensemble of every retained draw (needed for CATE
    /// queries at arbitrary times).
    pub store_tau_forests: bool,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
            chain: 0,
            re_prior: RePrior::Horseshoe,
            mu_forest: ForestConfig::prognostic(),
            tau_forest: ForestConfig::treatment(),
            global_scale: GlobalScaleMode::SigmaScaled,
            standardize: true,
            include_propensity: true,
            propensity_mode: None,
            fixed_sigma2: None,
            fixed_re_covariance: None,
            store_fits: false,
            store_lambda: false,
            store_tau_forests: true,
            checkpoint_dir: None,
            checkpoint_every: 1000,
        }
    }
}

impl SamplerConfig {
    pub fn n_retained(&self) -> usize {
        (self.max_iter / self.thin.max(1)).saturating_sub(self.burn_in)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.max_iter / self.thin {
            return Err(Error::Config(format!(
                "burn-in {} leaves no draws from {} iterations thinned by {}",
                self.burn_in, self.max_iter, self.thin
            )));
        }
        if self.mu_forest.n_trees > 0 {
            self.mu_forest.validate()?;
        }
        if self.tau_forest.n_trees > 0 {
            self.tau_forest.validate()?;
        }
        if let Some(s) = self.fixed_sigma2 {
            if !(s > 0.0) {
                return Err(Error::Config("fixed sigma2 must be positive".into()));
            }
        }
        if self.checkpoint_dir.is_some() && self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        Ok(())
    }
}

/// Which Gibbs stage a residual feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Mu,
    Tau,
    Alpha,
}

/// R^μ = y − τz − γ; R^τ = (y − μ − γ)/z; R^α = y − μ − τz.
pub fn compute_residual(
    stage: Stage,
    y: &[f64],
    z: &[f64],
    mu: &[f64],
    tau: &[f64],
    gamma: &[f64],
) -> Result<Vec<f64>> {
    let n = y.len();
    for v in [z, mu, tau, gamma] {
        if v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: v.len(),
            });
        }
    }
    if stage == Stage::Tau {
        if let Some(&bad) = z.iter().find(|&&v| v == 0.0) {
            return Err(Error::BadTreatment(bad));
        }
    }
    Ok((0..n)
        .map(|i| match stage {
            Stage::Mu => y[i] - tau[i] * z[i] - gamma[i],
            Stage::Tau => (y[i] - mu[i] - gamma[i]) / z[i],
            Stage::Alpha => y[i] - mu[i] - tau[i] * z[i],
        })
        .collect())
}

/// Rows outside the fitting set at which every retained draw is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRows {
    /// Subject position in the fitting dataset.
    pub subject: Vec<usize>,
    pub t: Vec<f64>,
    pub z: Vec<f64>,
    pub k: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

impl PredictionRows {
    /// Rows `rows` of `source`, whose subjects must all appear in `fit`.
    pub fn from_dataset(fit: &PanelDataset, source: &PanelDataset, rows: &[usize]) -> Result<Self> {
        let mut out = Self {
            subject: vec![],
            t: vec![],
            z: vec![],
            k: vec![],
            w: vec![],
        };
        for &r in rows {
            let id = source.subject_id[r];
            let s = fit.subject_position(id).ok_or(Error::UnknownSubject(id))?;
            out.subject.push(s);
            out.t.push(source.t[r]);
            out.z.push(source.z[r]);
            out.k.push(source.k.row(r).to_vec());
            out.w.push(source.w.row(r).to_vec());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Prognostic covariates: K, plus the subject's propensity when requested.
fn mu_covariates(k_rows: impl Iterator<Item = (Vec<f64>, f64)>, with_pi: bool) -> Vec<Vec<f64>> {
    k_rows
        .map(|(mut k, pi)| {
            if with_pi {
                k.push(pi);
            }
            k
        })
        .collect()
}

/// Moderating covariates: W followed by time.
fn tau_covariates(w_rows: impl Iterator<Item = (Vec<f64>, f64)>) -> Vec<Vec<f64>> {
    w_rows
        .map(|(mut w, t)| {
            w.push(t);
            w
        })
        .collect()
}

fn matrix(rows: &[Vec<f64>], n: usize) -> ColMatrix {
    if rows.first().is_none_or(|r| r.is_empty()) {
        ColMatrix::empty(n)
    } else {
        ColMatrix::from_rows(rows)
    }
}

/// Live state of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainState {
    pub iteration: usize,
    pub mu_forest: Forest,
    pub tau_forest: Forest,
    pub sigma: SigmaState,
    pub random_effects: RandomEffectState,
    pub base_prior: GaussianREPrior,
    pub horseshoe: HorseshoeState,
}

impl ChainState {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

fn check_finite(values: &[f64], iteration: usize, stage: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { iteration, stage })
    }
}

pub fn run_gibbs(d: &PanelDataset, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    run_gibbs_with_predictions(d, cfg, None)
}

/// Runs the chain and, when `pred` is given, evaluates μ, τ, γ and a
/// posterior-predictive outcome at those rows for every retained draw.
pub fn run_gibbs_with_predictions(
    d: &PanelDataset,
    cfg: &SamplerConfig,
    pred: Option<&PredictionRows>,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let started = Instant::now();
    let n = d.n_rows();
    let n_subj = d.n_subjects();
    let std = if cfg.standardize {
        StandardizationParams::fit(&d.y)?
    } else {
        StandardizationParams::identity()
    };
    let range = std.range();
    let y: Vec<f64> = d.y.iter().map(|&v| std.standardize(v)).collect();
    let z = &d.z;

    let mode = cfg.propensity_mode.unwrap_or(if d.pi.is_some() {
        PropensityMode::Supplied
    } else if d.w.ncols() > 0 {
        PropensityMode::Logistic
    } else {
        PropensityMode::Constant
    });
    let propensity = estimate_propensity(d, mode)?;
    for w in &propensity.warnings {
        log::warn!("propensity: {w}");
    }
    let pi = &propensity.pi;
    let rs = d.row_subjects();

    let mu_rows = mu_covariates(
        (0..n).map(|i| (d.k.row(i).to_vec(), pi[rs[i]])),
        cfg.include_propensity,
    );
    let tau_rows = tau_covariates((0..n).map(|i| (d.w.row(i).to_vec(), d.t[i])));
    let mu_x = matrix(&mu_rows, n);
    let tau_x = matrix(&tau_rows, n);

    let mut mu_forest = Forest::new(cfg.mu_forest.clone(), &mu_x)?;
    let mut tau_forest = Forest::new(cfg.tau_forest.clone(), &tau_x)?;
    let mut mu_cache = TrainingCache::new(&mu_forest, &mu_x)?;
    let mut tau_cache = TrainingCache::new(&tau_forest, &tau_x)?;

    // Prediction-row covariates mapped through the training scalers once.
    let pred_units = match pred {
        Some(p) => {
            let m = p.len();
            let mu_p = mu_covariates(
                p.k.iter().zip(&p.subject).map(|(k, &s)| (k.clone(), pi[s])),
                cfg.include_propensity,
            );
            let tau_p = tau_covariates(p.w.iter().cloned().zip(p.t.iter().copied()));
            if p.subject.iter().any(|&s| s >= n_subj) {
                return Err(Error::Invalid("prediction subject out of range".into()));
            }
            Some((
                mu_forest.scaler.transform(&matrix(&mu_p, m))?,
                tau_forest.scaler.transform(&matrix(&tau_p, m))?,
            ))
        }
        None => None,
    };

    let sigma2_hat = {
        let mut cols: Vec<&[f64]> = (0..mu_x.n_cols()).map(|j| mu_x.col(j)).collect();
        cols.extend((0..tau_x.n_cols()).map(|j| tau_x.col(j)));
        cols.push(z);
        least_squares_sigma2(&cols, &y)
    };
    let mut sigma = SigmaState::default_for(sigma2_hat);
    if let Some(s) = cfg.fixed_sigma2 {
        sigma.sigma2 = s;
    }

    let mut re = RandomEffectState::zeros(n_subj);
    let mut base = GaussianREPrior::default();
    if let Some(c) = cfg.fixed_re_covariance {
        base.sigma_b = c;
    }
    let mut hs = HorseshoeState::new(n_subj, cfg.global_scale);

    let mut rng = substream(cfg.seed, cfg.chain);
    let mut pred_rng = substream(cfg.seed, cfg.chain | (1 << 40));
    let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
    let mut gamma = vec![0.0; n];
    let mut mu_stats = MoveStats::default();
    let mut tau_stats = MoveStats::default();

    let retained = cfg.n_retained();
    let mut out = PosteriorDraws::empty(cfg, d, std, propensity.clone(), &tau_forest, pred.map(|p| p.len()));
    let last_rows: Vec<usize> = d.subjects().iter().map(|s| s.start + s.len - 1).collect();
    let zeros = vec![0.0; n];

    for it in 1..=cfg.max_iter {
        // Stage 1: prognostic forest, then σ² on the full residual.
        if !mu_forest.trees.is_empty() {
            let r = compute_residual(Stage::Mu, &y, z, &zeros, tau_cache.fit(), &gamma)?;
            let s = backfit_sweep(&mut mu_forest, &mut mu_cache, &r, None, sigma.sigma2, &mut rng);
            mu_stats.merge(&s);
            check_finite(mu_cache.fit(), it, "mu")?;
        }
        let mu_fit = mu_cache.fit().to_vec();
        if cfg.fixed_sigma2.is_none() {
            let tau_fit = tau_cache.fit();
            let full: Vec<f64> = (0..n)
                .map(|i| y[i] - mu_fit[i] - tau_fit[i] * z[i] - gamma[i])
                .collect();
            sigma = update_sigma2(&full, &sigma, &mut rng);
            if !sigma.sigma2.is_finite() {
                return Err(Error::NonFinite {
                    iteration: it,
                    stage: "sigma2",
                });
            }
        }

        // Stage 2: treatment forest on (y − μ − γ)/z with weights z².
        if !tau_forest.trees.is_empty() {
            let r = compute_residual(Stage::Tau, &y, z, &mu_fit, &zeros, &gamma)?;
            let s = backfit_sweep(&mut tau_forest, &mut tau_cache, &r, Some(&z2), sigma.sigma2, &mut rng);
            tau_stats.merge(&s);
            check_finite(tau_cache.fit(), it, "tau")?;
        }
        let tau_fit = tau_cache.fit();

        // Stage 3: random effects and their hyperparameters.
        if cfg.re_prior != RePrior::None {
            let r = compute_residual(Stage::Alpha, &y, z, &mu_fit, tau_fit, &zeros)?;
            match cfg.re_prior {
                RePrior::Base => {
                    let cov = base.sigma_b();
                    re = draw_alpha(&r, d, PriorCovariance::Shared(&cov), sigma.sigma2, &mut rng)?;
                    if cfg.fixed_re_covariance.is_none() {
                        base = update_base_covariance(&re, &base, &mut rng);
                    }
                }
                RePrior::Horseshoe => {
                    let v = hs.prior_variances();
                    re = draw_alpha(&r, d, PriorCovariance::Diagonal(&v), sigma.sigma2, &mut rng)?;
                    update_horseshoe(&mut hs, &re.alpha, sigma.sigma2, n, &mut rng)?;
                }
                RePrior::None => unreachable!(),
            }
            gamma = re.contribution(d)?;
            check_finite(&gamma, it, "alpha")?;
        }

        if let Some(dir) = &cfg.checkpoint_dir {
            if it % cfg.checkpoint_every == 0 {
                let state = ChainState {
                    iteration: it,
                    mu_forest: mu_forest.clone(),
                    tau_forest: tau_forest.clone(),
                    sigma,
                    random_effects: re.clone(),
                    base_prior: base,
                    horseshoe: hs.clone(),
                };
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                state.save(&dir.join("checkpoint.json"))?;
            }
        }

        if it % cfg.thin != 0 || it / cfg.thin <= cfg.burn_in {
            continue;
        }

        // Store this draw on the outcome scale.
        let alpha_raw: Vec<[f64; 2]> = re
            .alpha
            .iter()
            .map(|a| [a[0] * range, a[1] * range])
            .collect();
        let mu_raw: Vec<f64> = mu_fit.iter().map(|&m| std.unstandardize(m)).collect();
        let tau_raw: Vec<f64> = tau_fit.iter().map(|&t| t * range).collect();
        let gamma_raw: Vec<f64> = gamma.iter().map(|&g| g * range).collect();
        out.sigma2.push(sigma.sigma2 * range * range);
        out.mu_last.push(last_rows.iter().map(|&r| mu_raw[r]).collect());
        match cfg.re_prior {
            RePrior::Horseshoe => {
                let rho = hs.rho();
                out.rho.push([rho[0] * range, rho[1] * range]);
                if cfg.store_lambda {
                    out.lambda.get_or_insert_with(Vec::new).push(hs.lambda());
                }
            }
            RePrior::Base => {
                out.sigma_b.push(from_mat(&(base.sigma_b() * (range * range))));
            }
            RePrior::None => {}
        }
        out.accumulate_means(&mu_raw, &tau_raw, &gamma_raw, &alpha_raw);
        if cfg.store_tau_forests {
            if let Some(ens) = out.tau_forests.as_mut() {
                ens.trees.push(tau_forest.trees.clone());
            }
        }
        if cfg.store_fits {
            out.mu.get_or_insert_with(Vec::new).push(mu_raw);
            out.tau.get_or_insert_with(Vec::new).push(tau_raw);
        }
        out.alpha.push(alpha_raw);

        if let (Some(p), Some((mu_u, tau_u))) = (pred, &pred_units) {
            let mu_p = mu_forest.predict_unit(mu_u);
            let tau_p = tau_forest.predict_unit(tau_u);
            let pd = out.prediction.as_mut().expect("prediction store allocated");
            let s = sigma.sigma2.sqrt();
            for r in 0..p.len() {
                let a = re.alpha[p.subject[r]];
                let g = a[0] + a[1] * p.t[r];
                let (m, t) = (mu_p[r], tau_p[r]);
                let eps = s * std_normal(&mut pred_rng);
                pd.mu[r].push(std.unstandardize(m));
                pd.tau[r].push(t * range);
                pd.gamma[r].push(g * range);
                pd.y[r].push(std.unstandardize(m + t * p.z[r] + g + eps));
            }
        }
    }

    out.finish(retained, mu_stats, tau_stats, started.elapsed().as_secs_f64());
    Ok(out)
}
