//! Retained draws and their on-disk form: one CSV per quantity (rows are
//! retained iterations), treatment ensembles as JSON lines, and a manifest.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::forest::{Forest, MoveStats, SoftTree};
use crate::panel::{PanelDataset, PropensityEstimate, StandardizationParams};

/// Treatment ensembles of every retained draw, sharing one scaler and
/// config. Predictions are on the outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDraws {
    /// Forest with no trees carrying the config and covariate scaler.
    pub template: Forest,
    /// Factor mapping the fitting scale back to the outcome scale.
    pub scale: f64,
    pub trees: Vec<Vec<SoftTree>>,
}

impl EnsembleDraws {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.template.n_covariates()
    }

    /// Prediction of every draw at one raw covariate row.
    pub fn predict_all(&self, row: &[f64]) -> Result<Vec<f64>> {
        let unit = self.template.scaler.transform_row(row)?;
        let soft = self.template.config.soft;
        Ok(self
            .trees
            .iter()
            .map(|trees| self.scale * trees.iter().map(|t| t.predict_row(&unit, soft)).sum::<f64>())
            .collect())
    }
}

/// Draws at prediction rows, indexed `[row][draw]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionDraws {
    pub mu: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    /// Posterior-predictive outcome including noise.
    pub y: Vec<Vec<f64>>,
}

impl PredictionDraws {
    fn with_rows(m: usize) -> Self {
        Self {
            mu: vec![vec![]; m],
            tau: vec![vec![]; m],
            gamma: vec![vec![]; m],
            y: vec![vec![]; m],
        }
    }
}

/// Everything retained from one chain, on the outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub config: SamplerConfig,
    pub standardization: StandardizationParams,
    pub subject_ids: Vec<i64>,
    /// Per-subject propensity used as a prognostic input.
    pub pi: Vec<f64>,
    pub propensity_warnings: Vec<String>,
    pub data_checksum: String,
    pub n_rows: usize,
    pub sigma2: Vec<f64>,
    /// `[draw][subject]`.
    pub alpha: Vec<Vec<[f64; 2]>>,
    /// Global horseshoe scales ρ per draw.
    pub rho: Vec<[f64; 2]>,
    pub lambda: Option<Vec<Vec<[f64; 2]>>>,
    /// Base-prior covariance per draw.
    pub sigma_b: Vec<[[f64; 2]; 2]>,
    /// Per-row fits `[draw][row]` when requested.
    pub mu: Option<Vec<Vec<f64>>>,
    pub tau: Option<Vec<Vec<f64>>>,
    /// μ at each subject's last observed row, `[draw][subject]`.
    pub mu_last: Vec<Vec<f64>>,
    pub mu_mean: Vec<f64>,
    pub tau_mean: Vec<f64>,
    pub gamma_mean: Vec<f64>,
    pub alpha_mean: Vec<[f64; 2]>,
    pub tau_forests: Option<EnsembleDraws>,
    pub prediction: Option<PredictionDraws>,
    pub mu_moves: MoveStats,
    pub tau_moves: MoveStats,
    pub elapsed_secs: f64,
}

impl PosteriorDraws {
    pub(super) fn empty(
        cfg: &SamplerConfig,
        d: &PanelDataset,
        std: StandardizationParams,
        propensity: PropensityEstimate,
        tau_template: &Forest,
        n_pred: Option<usize>,
    ) -> Self {
        let n = d.n_rows();
        let ns = d.n_subjects();
        Self {
            config: cfg.clone(),
            standardization: std,
            subject_ids: d.subjects().iter().map(|s| s.id).collect(),
            pi: propensity.pi,
            propensity_warnings: propensity.warnings,
            data_checksum: data_checksum(d),
            n_rows: n,
            sigma2: vec![],
            alpha: vec![],
            rho: vec![],
            lambda: None,
            sigma_b: vec![],
            mu: None,
            tau: None,
            mu_last: vec![],
            mu_mean: vec![0.0; n],
            tau_mean: vec![0.0; n],
            gamma_mean: vec![0.0; n],
            alpha_mean: vec![[0.0; 2]; ns],
            tau_forests: cfg.store_tau_forests.then(|| EnsembleDraws {
                template: Forest {
                    trees: vec![],
                    ..tau_template.clone()
                },
                scale: std.range(),
                trees: vec![],
            }),
            prediction: n_pred.map(PredictionDraws::with_rows),
            mu_moves: MoveStats::default(),
            tau_moves: MoveStats::default(),
            elapsed_secs: 0.0,
        }
    }

    pub(super) fn accumulate_means(&mut self, mu: &[f64], tau: &[f64], gamma: &[f64], alpha: &[[f64; 2]]) {
        for (acc, v) in [
            (&mut self.mu_mean, mu),
            (&mut self.tau_mean, tau),
            (&mut self.gamma_mean, gamma),
        ] {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        for (a, x) in self.alpha_mean.iter_mut().zip(alpha) {
            a[0] += x[0];
            a[1] += x[1];
        }
    }

    pub(super) fn finish(&mut self, retained: usize, mu: MoveStats, tau: MoveStats, secs: f64) {
        debug_assert_eq!(retained, self.sigma2.len());
        let k = self.sigma2.len().max(1) as f64;
        for v in [&mut self.mu_mean, &mut self.tau_mean, &mut self.gamma_mean] {
            v.iter_mut().for_each(|a| *a /= k);
        }
        for a in &mut self.alpha_mean {
            a[0] /= k;
            a[1] /= k;
        }
        self.mu_moves = mu;
        self.tau_moves = tau;
        self.elapsed_secs = secs;
    }

    pub fn n_retained(&self) -> usize {
        self.sigma2.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn subject_position(&self, id: i64) -> Option<usize> {
        self.subject_ids.iter().position(|&s| s == id)
    }

    /// Writes the draws directory. Numeric files depend only on the draws;
    /// wall-clock timing lives in `manifest.json` alone.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_series(&dir.join("sigma2.csv"), &["sigma2"], self.sigma2.iter().map(|&v| vec![v]))?;
        let alpha_header: Vec<String> = self
            .subject_ids
            .iter()
            .flat_map(|id| [format!("a1_{id}"), format!("a2_{id}")])
            .collect();
        write_series(
            &dir.join("alpha.csv"),
            &alpha_header,
            self.alpha.iter().map(|a| a.iter().flat_map(|p| *p).collect()),
        )?;
        if !self.rho.is_empty() {
            write_series(&dir.join("rho.csv"), &["rho1", "rho2"], self.rho.iter().map(|r| r.to_vec()))?;
        }
        if !self.sigma_b.is_empty() {
            write_series(
                &dir.join("sigma_b.csv"),
                &["s11", "s12", "s21", "s22"],
                self.sigma_b.iter().map(|m| vec![m[0][0], m[0][1], m[1][0], m[1][1]]),
            )?;
        }
        if let Some(l) = &self.lambda {
            let h: Vec<String> = self
                .subject_ids
                .iter()
                .flat_map(|id| [format!("l1_{id}"), format!("l2_{id}")])
                .collect();
            write_series(&dir.join("lambda.csv"), &h, l.iter().map(|a| a.iter().flat_map(|p| *p).collect()))?;
        }
        let row_header: Vec<String> = (0..self.n_rows).map(|i| format!("row{i}")).collect();
        if let Some(m) = &self.mu {
            write_series(&dir.join("mu.csv"), &row_header, m.iter().cloned())?;
        }
        if let Some(t) = &self.tau {
            write_series(&dir.join("tau.csv"), &row_header, t.iter().cloned())?;
        }
        let subj_header: Vec<String> = self.subject_ids.iter().map(|id| format!("s{id}")).collect();
        write_series(&dir.join("mu_last.csv"), &subj_header, self.mu_last.iter().cloned())?;
        if let Some(ens) = &self.tau_forests {
            let path = dir.join("tau_forests.jsonl");
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            for trees in &ens.trees {
                serde_json::to_writer(&mut w, trees)?;
                w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        if let Some(p) = &self.prediction {
            for (name, v) in [("mu", &p.mu), ("tau", &p.tau), ("gamma", &p.gamma), ("y", &p.y)] {
                let h: Vec<String> = (0..v.len()).map(|i| format!("pred{i}")).collect();
                let n = v.first().map_or(0, |r| r.len());
                write_series(
                    &dir.join(format!("pred_{name}.csv")),
                    &h,
                    (0..n).map(|k| v.iter().map(|r| r[k]).collect()),
                )?;
            }
        }
        let summary = Summary {
            mu_mean: &self.mu_mean,
            tau_mean: &self.tau_mean,
            gamma_mean: &self.gamma_mean,
            alpha_mean: &self.alpha_mean,
            mu_moves: self.mu_moves,
            tau_moves: self.tau_moves,
            tau_template: self.tau_forests.as_ref().map(|e| (&e.template, e.scale)),
        };
        write_json(&dir.join("summary.json"), &summary)?;
        let manifest = Manifest {
            config: self.config.clone(),
            seed: self.config.seed,
            n_retained: self.n_retained(),
            n_rows: self.n_rows,
            standardization: self.standardization,
            subject_ids: self.subject_ids.clone(),
            pi: self.pi.clone(),
            propensity_warnings: self.propensity_warnings.clone(),
            data_checksum: self.data_checksum.clone(),
            elapsed_secs: self.elapsed_secs,
            files: numeric_files(dir)?,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let summary: OwnedSummary = read_json(&dir.join("summary.json"))?;
        let pairs = |rows: Vec<Vec<f64>>| -> Vec<Vec<[f64; 2]>> {
            rows.into_iter()
                .map(|r| r.chunks(2).map(|c| [c[0], c[1]]).collect())
                .collect()
        };
        let sigma2: Vec<f64> = read_series(&dir.join("sigma2.csv"))?.into_iter().map(|r| r[0]).collect();
        let alpha = pairs(read_series(&dir.join("alpha.csv"))?);
        let rho = read_optional(&dir.join("rho.csv"))?
            .map(|v| v.into_iter().map(|r| [r[0], r[1]]).collect())
            .unwrap_or_default();
        let sigma_b = read_optional(&dir.join("sigma_b.csv"))?
            .map(|v| v.into_iter().map(|r| [[r[0], r[1]], [r[2], r[3]]]).collect())
            .unwrap_or_default();
        let lambda = read_optional(&dir.join("lambda.csv"))?.map(pairs);
        let mu = read_optional(&dir.join("mu.csv"))?;
        let tau = read_optional(&dir.join("tau.csv"))?;
        let mu_last = read_series(&dir.join("mu_last.csv"))?;
        let tau_forests = match summary.tau_template {
            Some((template, scale)) => {
                let path = dir.join("tau_forests.jsonl");
                let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                let mut trees = vec![];
                for line in BufReader::new(f).lines() {
                    let line = line.map_err(|e| Error::io(&path, e))?;
                    if !line.is_empty() {
                        trees.push(serde_json::from_str(&line)?);
                    }
                }
                Some(EnsembleDraws {
                    template,
                    scale,
                    trees,
                })
            }
            None => None,
        };
        let prediction = match read_optional(&dir.join("pred_y.csv"))? {
            Some(y) => {
                let t = |v: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                    let m = v.first().map_or(0, |r| r.len());
                    (0..m).map(|j| v.iter().map(|r| r[j]).collect()).collect()
                };
                Some(PredictionDraws {
                    mu: t(read_series(&dir.join("pred_mu.csv"))?),
                    tau: t(read_series(&dir.join("pred_tau.csv"))?),
                    gamma: t(read_series(&dir.join("pred_gamma.csv"))?),
                    y: t(y),
                })
            }
            None => None,
        };
        Ok(Self {
            config: manifest.config,
            standardization: manifest.standardization,
            subject_ids: manifest.subject_ids,
            pi: manifest.pi,
            propensity_warnings: manifest.propensity_warnings,
            data_checksum: manifest.data_checksum,
            n_rows: manifest.n_rows,
            sigma2,
            alpha,
            rho,
            lambda,
            sigma_b,
            mu,
            tau,
            mu_last,
            mu_mean: summary.mu_mean,
            tau_mean: summary.tau_mean,
            gamma_mean: summary.gamma_mean,
            alpha_mean: summary.alpha_mean,
            tau_forests,
            prediction,
            mu_moves: summary.mu_moves,
            tau_moves: summary.tau_moves,
            elapsed_secs: manifest.elapsed_secs,
        })
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    mu_mean: &'a [f64],
    tau_mean: &'a [f64],
    gamma_mean: &'a [f64],
    alpha_mean: &'a [[f64; 2]],
    mu_moves: MoveStats,
    tau_moves: MoveStats,
    tau_template: Option<(&'a Forest, f64)>,
}

#[derive(Deserialize)]
struct OwnedSummary {
    mu_mean: Vec<f64>,
    tau_mean: Vec<f64>,
    gamma_mean: Vec<f64>,
    alpha_mean: Vec<[f64; 2]>,
    mu_moves: MoveStats,
    tau_moves: MoveStats,
    tau_template: Option<(Forest, f64)>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: SamplerConfig,
    seed: u64,
    n_retained: usize,
    n_rows: usize,
    standardization: StandardizationParams,
    subject_ids: Vec<i64>,
    pi: Vec<f64>,
    propensity_warnings: Vec<String>,
    data_checksum: String,
    elapsed_secs: f64,
    /// SHA-256 of every numeric file in the directory.
    files: Vec<(String, String)>,
}

fn numeric_files(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".jsonl") || n == "summary.json")
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let p = dir.join(&n);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok((n, hex(&Sha256::digest(&bytes))))
        })
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over every value in the dataset, in row order.
pub fn data_checksum(d: &PanelDataset) -> String {
    let mut h = Sha256::new();
    for i in 0..d.n_rows() {
        h.update(d.subject_id[i].to_le_bytes());
        for v in [d.t[i], d.y[i], d.z[i]]
            .into_iter()
            .chain(d.k.row(i).iter().copied())
            .chain(d.w.row(i).iter().copied())
            .chain(d.pi.as_ref().map(|p| p[i]))
        {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn write_series<S: AsRef<str>>(
    path: &Path,
    header: &[S],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header.iter().map(|s| s.as_ref()))?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_series(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec.iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Invalid(format!("bad number `{s}` in {}", path.display()))))
                .collect()
        })
        .collect()
}

fn read_optional(path: &Path) -> Result<Option<Vec<Vec<f64>>>> {
    if path.exists() {
        read_series(path).map(Some)
    } else {
        Ok(None)
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}
