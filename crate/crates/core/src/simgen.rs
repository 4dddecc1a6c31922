//! Simulated panels with known ground truth: a fully synthetic mixed model
//! on the Friedman surface and a semi-synthetic causal design.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{mean, sd, std_normal, substream};
use crate::error::{Error, Result};
use crate::panel::{PanelDataset, PanelRow};

/// f(x) = 10 sin(π x₁x₂) + 20 (x₃ − 0.5)² + 10 x₄ + 5 x₅.
pub fn friedman_mean(x: &[Vec<f64>]) -> Vec<f64> {
    x.iter()
        .map(|r| {
            10.0 * (PI * r[0] * r[1]).sin() + 20.0 * (r[2] - 0.5).powi(2) + 10.0 * r[3] + 5.0 * r[4]
        })
        .collect()
}

/// Latent components behind a simulated panel, aligned with its rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    /// Per subject, in model order (intercept, slope).
    pub alpha: Vec<[f64; 2]>,
    pub gamma: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub sigma: f64,
    /// Subjects whose random effects were zeroed.
    pub zeroed: Vec<bool>,
}

impl GroundTruth {
    /// Truth restricted to `rows` (subjects are kept whole).
    pub fn rows(&self, rows: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            rows.iter().map(|&i| self.mu[i]).collect(),
            rows.iter().map(|&i| self.tau[i]).collect(),
            rows.iter().map(|&i| self.gamma[i]).collect(),
        )
    }

    /// Columns subject, time, mu, tau, gamma, alpha1, alpha2, zeroed,
    /// epsilon, sigma; rows in the dataset's order.
    pub fn write_csv(&self, d: &PanelDataset, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "subject", "time", "mu", "tau", "gamma", "alpha1", "alpha2", "zeroed", "epsilon", "sigma",
        ])?;
        for i in 0..d.n_rows() {
            let s = d.subject_of_row(i);
            w.write_record([
                d.subject_id[i].to_string(),
                d.t[i].to_string(),
                self.mu[i].to_string(),
                self.tau[i].to_string(),
                self.gamma[i].to_string(),
                self.alpha[s][0].to_string(),
                self.alpha[s][1].to_string(),
                u8::from(self.zeroed[s]).to_string(),
                self.epsilon[i].to_string(),
                self.sigma.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Zero both components of ⌈proportion · N⌉ subjects chosen uniformly.
pub fn apply_sparsity(alpha: &[[f64; 2]], proportion: f64, seed: u64) -> Result<(Vec<[f64; 2]>, Vec<bool>)> {
    if !(0.0..1.0).contains(&proportion) {
        return Err(Error::Config(format!("sparsity {proportion} not in [0, 1)")));
    }
    let n = alpha.len();
    let k = (proportion * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut rng = substream(seed, 0x5a);
    let mut mask = vec![false; n];
    for i in sample(&mut rng, n, k.min(n)).iter() {
        mask[i] = true;
    }
    let masked = alpha
        .iter()
        .zip(&mask)
        .map(|(a, &m)| if m { [0.0, 0.0] } else { *a })
        .collect();
    Ok((masked, mask))
}

/// σ = factor · |mean|, or factor · sd when the mean is near zero.
fn noise_scale(noiseless: &[f64], factor: f64) -> f64 {
    let m = mean(noiseless);
    if m.abs() < 1e-6 {
        factor * sd(noiseless)
    } else {
        factor * m.abs()
    }
}

fn coin(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        0.5
    } else {
        -0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub n_obs: usize,
    pub n_covariates: usize,
    /// 1-based column replaced by the within-subject visit index.
    pub time_column: usize,
    pub sparsity: f64,
    pub noise_factor: f64,
    /// Multiplier on the Friedman surface; 1 gives the standard function.
    #[serde(default = "unit")]
    pub mu_scale: f64,
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_subjects: 200,
            n_obs: 5,
            n_covariates: 10,
            time_column: 7,
            sparsity: 0.0,
            noise_factor: 0.10,
            mu_scale: 1.0,
            seed: 0,
        }
    }
}

/// y = f(X) + α_i1 + α_i2 X₇ + ε, with no treatment term. Every column of X
/// (including X₇) is a prognostic covariate and X₇ is also the time.
/// Treatment codes are fair coins with zero true effect.
pub fn gen_fully_synthetic(cfg: &SyntheticConfig) -> Result<(PanelDataset, GroundTruth)> {
    if cfg.n_covariates < 5 || cfg.time_column == 0 || cfg.time_column > cfg.n_covariates {
        return Err(Error::Config(
            "need at least 5 covariates and a time column among them".into(),
        ));
    }
    if cfg.n_obs < 2 {
        return Err(Error::Config("need at least two visits per subject".into()));
    }
    let mut x_rng = substream(cfg.seed, 0);
    let mut a_rng = substream(cfg.seed, 1);
    let mut e_rng = substream(cfg.seed, 2);
    let mut z_rng = substream(cfg.seed, 3);
    let tc = cfg.time_column - 1;
    let l = cfg.n_subjects * cfg.n_obs;

    let mut x = Vec::with_capacity(l);
    for _ in 0..cfg.n_subjects {
        for j in 0..cfg.n_obs {
            let mut r: Vec<f64> = (0..cfg.n_covariates).map(|_| x_rng.random::<f64>()).collect();
            r[tc] = j as f64 / (cfg.n_obs - 1) as f64;
            x.push(r);
        }
    }
    let alpha: Vec<[f64; 2]> = (0..cfg.n_subjects)
        .map(|_| [std_normal(&mut a_rng), std_normal(&mut a_rng)])
        .collect();
    let (alpha, zeroed) = apply_sparsity(&alpha, cfg.sparsity, cfg.seed)?;
    let mu: Vec<f64> = friedman_mean(&x).iter().map(|m| m * cfg.mu_scale).collect();
    let gamma: Vec<f64> = (0..l)
        .map(|i| {
            let a = alpha[i / cfg.n_obs];
            a[0] + a[1] * x[i][tc]
        })
        .collect();
    let noiseless: Vec<f64> = mu.iter().zip(&gamma).map(|(m, g)| m + g).collect();
    let sigma = noise_scale(&noiseless, cfg.noise_factor);
    let epsilon: Vec<f64> = (0..l).map(|_| sigma * std_normal(&mut e_rng)).collect();
    let z: Vec<f64> = (0..cfg.n_subjects).map(|_| coin(&mut z_rng)).collect();

    let rows = (0..l)
        .map(|i| PanelRow {
            subject: (i / cfg.n_obs) as i64,
            t: x[i][tc],
            y: noiseless[i] + epsilon[i],
            z: z[i / cfg.n_obs],
            k: x[i].clone(),
            w: vec![],
            pi: None,
        })
        .collect();
    let names = (1..=cfg.n_covariates).map(|j| format!("K{j}")).collect();
    let d = PanelDataset::from_rows(rows, names, vec![])?;
    Ok((
        d,
        GroundTruth {
            mu,
            tau: vec![0.0; l],
            alpha,
            gamma,
            epsilon,
            sigma,
            zeroed,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiSyntheticConfig {
    pub n_rows: usize,
    /// Baseline moderators; follow-up time is appended as the last entry of
    /// the moderator vector.
    pub n_baseline_w: usize,
    pub n_k: usize,
    pub beta_bio: (f64, f64),
    pub beta_nonbio: (f64, f64),
    /// Mean and sd of the random intercept.
    pub intercept: (f64, f64),
    /// Mean and sd of the random slope.
    pub slope: (f64, f64),
    pub visits: (usize, usize),
    pub max_time: f64,
    pub sparsity: f64,
    pub noise_factor: f64,
    pub seed: u64,
}

impl Default for SemiSyntheticConfig {
    fn default() -> Self {
        Self {
            n_rows: 2583,
            n_baseline_w: 7,
            n_k: 30,
            beta_bio: (2.0, 4.0),
            beta_nonbio: (0.0, 0.5),
            intercept: (0.5, 3.0),
            slope: (0.5, 2.0),
            visits: (2, 4),
            max_time: 2.0,
            sparsity: 0.0,
            noise_factor: 0.10,
            seed: 0,
        }
    }
}

/// Covariates supplied from outside (e.g. an exported real cohort).
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCovariates {
    pub subject: Vec<i64>,
    /// Moderators per row; the last column is follow-up time.
    pub w: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
}

struct Layout {
    subject: Vec<i64>,
    t: Vec<f64>,
    w: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
}

fn visit_counts(total: usize, lo: usize, hi: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out = vec![];
    let mut rem = total;
    while rem > 0 {
        let n = rng.random_range(lo..=hi);
        let n = if rem <= hi {
            rem
        } else if rem - n < lo {
            // Leave a remainder that still forms a valid subject.
            rem - lo
        } else {
            n
        };
        out.push(n);
        rem -= n;
    }
    out
}

fn synthesize_layout(cfg: &SemiSyntheticConfig) -> Layout {
    let mut rng = substream(cfg.seed, 0);
    let counts = visit_counts(cfg.n_rows, cfg.visits.0, cfg.visits.1, &mut rng);
    let mut l = Layout {
        subject: vec![],
        t: vec![],
        w: vec![],
        k: vec![],
    };
    for (s, &n) in counts.iter().enumerate() {
        let base: Vec<f64> = (0..cfg.n_baseline_w).map(|_| rng.random::<f64>()).collect();
        let mut times: Vec<f64> = (0..n).map(|_| cfg.max_time * rng.random::<f64>()).collect();
        times.sort_by(f64::total_cmp);
        for t in times {
            let mut w = base.clone();
            w.push(t);
            l.subject.push(s as i64);
            l.t.push(t);
            l.w.push(w);
            l.k.push((0..cfg.n_k).map(|_| rng.random::<f64>()).collect());
        }
    }
    l
}

/// y = γ + (W β_bio) z + K β_nonbio + ε with γ = slope · t + intercept.
pub fn gen_semi_synthetic(
    cfg: &SemiSyntheticConfig,
    covariates: Option<&ExternalCovariates>,
) -> Result<(PanelDataset, GroundTruth)> {
    if cfg.visits.0 < 1 || cfg.visits.0 > cfg.visits.1 {
        return Err(Error::Config("invalid visit-count range".into()));
    }
    let layout = match covariates {
        None => synthesize_layout(cfg),
        Some(ext) => {
            let n = ext.subject.len();
            if ext.w.len() != n || ext.k.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: ext.w.len().min(ext.k.len()),
                });
            }
            for (w, k) in ext.w.iter().zip(&ext.k) {
                if w.len() != cfg.n_baseline_w + 1 {
                    return Err(Error::Dimension {
                        expected: cfg.n_baseline_w + 1,
                        got: w.len(),
                    });
                }
                if k.len() != cfg.n_k {
                    return Err(Error::Dimension {
                        expected: cfg.n_k,
                        got: k.len(),
                    });
                }
            }
            Layout {
                subject: ext.subject.clone(),
                t: ext.w.iter().map(|w| w[cfg.n_baseline_w]).collect(),
                w: ext.w.clone(),
                k: ext.k.clone(),
            }
        }
    };
    let l = layout.subject.len();
    let mut ids: Vec<i64> = layout.subject.clone();
    ids.dedup();
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(Error::Invalid("covariate rows must be grouped by subject".into()));
    }
    let n_subj = ids.len();

    let mut b_rng = substream(cfg.seed, 1);
    let mut a_rng = substream(cfg.seed, 2);
    let mut e_rng = substream(cfg.seed, 3);
    let mut z_rng = substream(cfg.seed, 4);
    let beta_bio: Vec<f64> = (0..=cfg.n_baseline_w)
        .map(|_| cfg.beta_bio.0 + cfg.beta_bio.1 * std_normal(&mut b_rng))
        .collect();
    let beta_nonbio: Vec<f64> = (0..cfg.n_k)
        .map(|_| cfg.beta_nonbio.0 + cfg.beta_nonbio.1 * std_normal(&mut b_rng))
        .collect();
    let alpha: Vec<[f64; 2]> = (0..n_subj)
        .map(|_| {
            let slope = cfg.slope.0 + cfg.slope.1 * std_normal(&mut a_rng);
            let intercept = cfg.intercept.0 + cfg.intercept.1 * std_normal(&mut a_rng);
            [intercept, slope]
        })
        .collect();
    let (alpha, zeroed) = apply_sparsity(&alpha, cfg.sparsity, cfg.seed)?;
    let z: Vec<f64> = (0..n_subj).map(|_| coin(&mut z_rng)).collect();

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut pos = 0usize;
    let mut subj_index = Vec::with_capacity(l);
    for i in 0..l {
        if i > 0 && layout.subject[i] != layout.subject[i - 1] {
            pos += 1;
        }
        subj_index.push(pos);
    }
    let tau: Vec<f64> = layout.w.iter().map(|w| dot(w, &beta_bio)).collect();
    let mu: Vec<f64> = layout.k.iter().map(|k| dot(k, &beta_nonbio)).collect();
    let gamma: Vec<f64> = (0..l)
        .map(|i| {
            let a = alpha[subj_index[i]];
            a[1] * layout.t[i] + a[0]
        })
        .collect();
    let noiseless: Vec<f64> = (0..l)
        .map(|i| gamma[i] + tau[i] * z[subj_index[i]] + mu[i])
        .collect();
    let sigma = noise_scale(&noiseless, cfg.noise_factor);
    let epsilon: Vec<f64> = (0..l).map(|_| sigma * std_normal(&mut e_rng)).collect();

    let rows = (0..l)
        .map(|i| PanelRow {
            subject: layout.subject[i],
            t: layout.t[i],
            y: noiseless[i] + epsilon[i],
            z: z[subj_index[i]],
            k: layout.k[i].clone(),
            w: layout.w[i][..cfg.n_baseline_w].to_vec(),
            pi: None,
        })
        .collect();
    let k_names = (1..=cfg.n_k).map(|j| format!("K{j}")).collect();
    let w_names = (1..=cfg.n_baseline_w).map(|j| format!("W{j}")).collect();
    let d = PanelDataset::from_rows(rows, k_names, w_names)?;
    // Rows were generated in (subject, time) order, so sorting kept them.
    debug_assert!(d.t == layout.t);
    Ok((
        d,
        GroundTruth {
            mu,
            tau,
            alpha,
            gamma,
            epsilon,
            sigma,
            zeroed,
        },
    ))
}
