//! Long-format longitudinal panels: ingestion, validation, outcome scaling,
//! held-out partitioning and propensity scores.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::substream;
use crate::error::{Error, Result};

/// Dense row-major covariate block with named columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    data: Vec<f64>,
}

impl Covariates {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let p = names.len();
        if p == 0 && !data.is_empty() {
            return Err(Error::Dimension {
                expected: 0,
                got: data.len(),
            });
        }
        if p > 0 && data.len() % p != 0 {
            return Err(Error::Dimension {
                expected: p,
                got: data.len() % p,
            });
        }
        Ok(Self { names, data })
    }

    /// Build from per-row vectors, naming columns `{prefix}1..{prefix}p`.
    pub fn from_rows(prefix: &str, rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        let names = (1..=p).map(|j| format!("{prefix}{j}")).collect();
        Ok(Self { names, data })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.ncols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols() + j]
    }
}

/// Contiguous block of rows belonging to one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: i64,
    pub start: usize,
    pub len: usize,
}

impl Subject {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Validated long-format panel. Rows are sorted by (subject, time) so every
/// subject occupies a contiguous block; `z` is coded ±0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub subject_id: Vec<i64>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub k: Covariates,
    pub w: Covariates,
    pub pi: Option<Vec<f64>>,
    subjects: Vec<Subject>,
    row_subject: Vec<usize>,
}

/// Raw per-row record used to assemble a dataset.
#[derive(Debug, Clone)]
pub struct PanelRow {
    pub subject: i64,
    pub t: f64,
    pub y: f64,
    pub z: f64,
    pub k: Vec<f64>,
    pub w: Vec<f64>,
    pub pi: Option<f64>,
}

impl PanelDataset {
    /// Validate, remap treatment codes and sort rows by (subject, time).
    pub fn from_rows(
        mut rows: Vec<PanelRow>,
        k_names: Vec<String>,
        w_names: Vec<String>,
    ) -> Result<Self> {
        for r in &rows {
            if !(r.t.is_finite() && r.t >= 0.0) {
                return Err(Error::BadTime {
                    subject: r.subject,
                    time: r.t,
                });
            }
            if r.k.len() != k_names.len() {
                return Err(Error::Dimension {
                    expected: k_names.len(),
                    got: r.k.len(),
                });
            }
            if r.w.len() != w_names.len() {
                return Err(Error::Dimension {
                    expected: w_names.len(),
                    got: r.w.len(),
                });
            }
        }
        let has_pi = rows.first().is_some_and(|r| r.pi.is_some());
        if rows.iter().any(|r| r.pi.is_some() != has_pi) {
            return Err(Error::MissingValue {
                column: "propensity".into(),
                row: rows.iter().position(|r| r.pi.is_some() != has_pi).unwrap(),
            });
        }
        for r in rows.iter_mut() {
            r.z = remap_treatment(r.z)?;
        }
        rows.sort_by(|a, b| a.subject.cmp(&b.subject).then(a.t.total_cmp(&b.t)));

        let mut subjects: Vec<Subject> = Vec::new();
        let mut row_subject = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            match subjects.last_mut() {
                Some(s) if s.id == r.subject => {
                    let first = &rows[s.start];
                    if first.z != r.z {
                        return Err(Error::TreatmentVaries(r.subject));
                    }
                    if let Some(j) = (0..w_names.len()).find(|&j| first.w[j] != r.w[j]) {
                        return Err(Error::ModeratorVaries {
                            subject: r.subject,
                            column: w_names[j].clone(),
                        });
                    }
                    if first.pi != r.pi {
                        return Err(Error::Invalid(format!(
                            "propensity varies within subject {}",
                            r.subject
                        )));
                    }
                    s.len += 1;
                }
                _ => subjects.push(Subject {
                    id: r.subject,
                    start: i,
                    len: 1,
                }),
            }
            row_subject.push(subjects.len() - 1);
        }

        let k_rows: Vec<f64> = rows.iter().flat_map(|r| r.k.iter().copied()).collect();
        let w_rows: Vec<f64> = rows.iter().flat_map(|r| r.w.iter().copied()).collect();
        Ok(Self {
            subject_id: rows.iter().map(|r| r.subject).collect(),
            t: rows.iter().map(|r| r.t).collect(),
            y: rows.iter().map(|r| r.y).collect(),
            z: rows.iter().map(|r| r.z).collect(),
            k: Covariates::new(k_names, k_rows)?,
            w: Covariates::new(w_names, w_rows)?,
            pi: has_pi.then(|| rows.iter().map(|r| r.pi.unwrap()).collect()),
            subjects,
            row_subject,
        })
    }

    /// Number of rows (L).
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Number of subjects (N).
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    /// Subject position (0..N) of row `i`.
    pub fn subject_of_row(&self, i: usize) -> usize {
        self.row_subject[i]
    }

    pub fn row_subjects(&self) -> &[usize] {
        &self.row_subject
    }

    pub fn subject_position(&self, id: i64) -> Option<usize> {
        self.subjects.binary_search_by_key(&id, |s| s.id).ok()
    }

    /// Per-subject treatment code.
    pub fn subject_z(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| self.z[s.start]).collect()
    }

    /// Per-subject moderator row (taken from the subject's first row).
    pub fn subject_w(&self, s: usize) -> &[f64] {
        self.w.row(self.subjects[s].start)
    }

    /// Per-subject mean of the prognostic covariates.
    pub fn subject_k_mean(&self, s: usize) -> Vec<f64> {
        let sub = &self.subjects[s];
        let mut acc = vec![0.0; self.k.ncols()];
        for i in sub.rows() {
            for (a, v) in acc.iter_mut().zip(self.k.row(i)) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / sub.len as f64).collect()
    }

    /// Dataset restricted to the given rows (kept in their current order).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut sorted = rows.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let records = sorted
            .iter()
            .map(|&i| PanelRow {
                subject: self.subject_id[i],
                t: self.t[i],
                y: self.y[i],
                z: self.z[i],
                k: self.k.row(i).to_vec(),
                w: self.w.row(i).to_vec(),
                pi: self.pi.as_ref().map(|p| p[i]),
            })
            .collect();
        Self::from_rows(records, self.k.names.clone(), self.w.names.clone())
    }

    /// Copy with a replaced outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n_rows() {
            return Err(Error::Dimension {
                expected: self.n_rows(),
                got: y.len(),
            });
        }
        Ok(Self { y, ..self.clone() })
    }

    /// Copy with per-subject propensities broadcast to rows.
    pub fn with_propensity(&self, per_subject: &[f64]) -> Result<Self> {
        if per_subject.len() != self.n_subjects() {
            return Err(Error::Dimension {
                expected: self.n_subjects(),
                got: per_subject.len(),
            });
        }
        let pi = self.row_subject.iter().map(|&s| per_subject[s]).collect();
        Ok(Self {
            pi: Some(pi),
            ..self.clone()
        })
    }

    /// Write the canonical panel CSV (`subject,time,y,z,K*,W*[,pi]`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = ["subject", "time", "y", "z"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.k.names.iter().cloned());
        header.extend(self.w.names.iter().cloned());
        if self.pi.is_some() {
            header.push("pi".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                self.subject_id[i].to_string(),
                self.t[i].to_string(),
                self.y[i].to_string(),
                self.z[i].to_string(),
            ];
            rec.extend(self.k.row(i).iter().map(f64::to_string));
            rec.extend(self.w.row(i).iter().map(f64::to_string));
            if let Some(pi) = &self.pi {
                rec.push(pi[i].to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn remap_treatment(z: f64) -> Result<f64> {
    if z == 0.0 || z == -0.5 {
        Ok(-0.5)
    } else if z == 1.0 || z == 0.5 {
        Ok(0.5)
    } else {
        Err(Error::BadTreatment(z))
    }
}

/// How a block of covariate columns is located in the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnSelector {
    /// Columns named `{prefix}<integer>`, ordered by the integer.
    Prefix(String),
    Names(Vec<String>),
}

impl ColumnSelector {
    fn resolve(&self, header: &csv::StringRecord) -> Result<Vec<(usize, String)>> {
        match self {
            ColumnSelector::Prefix(prefix) => {
                let mut cols: Vec<(u64, usize, String)> = header
                    .iter()
                    .enumerate()
                    .filter_map(|(i, h)| {
                        h.strip_prefix(prefix.as_str())
                            .and_then(|rest| rest.parse::<u64>().ok())
                            .map(|n| (n, i, h.to_string()))
                    })
                    .collect();
                cols.sort();
                Ok(cols.into_iter().map(|(_, i, h)| (i, h)).collect())
            }
            ColumnSelector::Names(names) => names
                .iter()
                .map(|n| {
                    header
                        .iter()
                        .position(|h| h == n)
                        .map(|i| (i, n.clone()))
                        .ok_or_else(|| Error::MissingColumn(n.clone()))
                })
                .collect(),
        }
    }
}

/// Column-role map for [`load_panel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub subject: String,
    pub time: String,
    pub outcome: String,
    pub treatment: String,
    pub prognostic: ColumnSelector,
    pub moderators: ColumnSelector,
    pub propensity: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            time: "time".into(),
            outcome: "y".into(),
            treatment: "z".into(),
            prognostic: ColumnSelector::Prefix("K".into()),
            moderators: ColumnSelector::Prefix("W".into()),
            propensity: None,
        }
    }
}

fn parse_cell(rec: &csv::StringRecord, idx: usize, column: &str, row: usize) -> Result<f64> {
    let raw = rec.get(idx).map(str::trim).unwrap_or("");
    let missing = || Error::MissingValue {
        column: column.to_string(),
        row,
    };
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
        return Err(missing());
    }
    let v: f64 = raw.parse().map_err(|_| missing())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(missing())
    }
}

/// Read a long-format CSV into a validated [`PanelDataset`].
pub fn load_panel(path: &Path, schema: &Schema) -> Result<PanelDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_subject = find(&schema.subject)?;
    let c_time = find(&schema.time)?;
    let c_y = find(&schema.outcome)?;
    let c_z = find(&schema.treatment)?;
    let c_pi = schema.propensity.as_deref().map(find).transpose()?;
    let k_cols = schema.prognostic.resolve(&header)?;
    let w_cols = schema.moderators.resolve(&header)?;

    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let subject_raw = parse_cell(&rec, c_subject, &schema.subject, row)?;
        if subject_raw.fract() != 0.0 {
            return Err(Error::MissingValue {
                column: schema.subject.clone(),
                row,
            });
        }
        let pi = c_pi
            .map(|c| parse_cell(&rec, c, "propensity", row))
            .transpose()?;
        rows.push(PanelRow {
            subject: subject_raw as i64,
            t: parse_cell(&rec, c_time, &schema.time, row)?,
            y: parse_cell(&rec, c_y, &schema.outcome, row)?,
            z: parse_cell(&rec, c_z, &schema.treatment, row)?,
            k: k_cols
                .iter()
                .map(|(c, n)| parse_cell(&rec, *c, n, row))
                .collect::<Result<_>>()?,
            w: w_cols
                .iter()
                .map(|(c, n)| parse_cell(&rec, *c, n, row))
                .collect::<Result<_>>()?,
            pi,
        });
    }
    PanelDataset::from_rows(
        rows,
        k_cols.into_iter().map(|(_, n)| n).collect(),
        w_cols.into_iter().map(|(_, n)| n).collect(),
    )
}

/// Fit/held-out split at the subject level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutPartition {
    pub fit_rows: Vec<usize>,
    pub heldout_rows: Vec<usize>,
    pub heldout_subjects: Vec<i64>,
}

/// Sample `x` subjects with at least two rows and move one of each one's
/// rows into the held-out set.
pub fn partition_holdout(d: &PanelDataset, x: usize, seed: u64) -> Result<HoldoutPartition> {
    let eligible: Vec<usize> = (0..d.n_subjects())
        .filter(|&s| d.subjects[s].len >= 2)
        .collect();
    if x > eligible.len() {
        return Err(Error::NotEnoughSubjects {
            requested: x,
            eligible: eligible.len(),
        });
    }
    let mut rng = substream(seed, 0x401d);
    let mut chosen: Vec<usize> = sample(&mut rng, eligible.len(), x)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    chosen.sort_unstable();
    let mut heldout_rows = Vec::with_capacity(x);
    for &s in &chosen {
        let sub = &d.subjects[s];
        heldout_rows.push(sub.start + rng.random_range(0..sub.len));
    }
    let mut is_held = vec![false; d.n_rows()];
    for &r in &heldout_rows {
        is_held[r] = true;
    }
    Ok(HoldoutPartition {
        fit_rows: (0..d.n_rows()).filter(|&r| !is_held[r]).collect(),
        heldout_rows,
        heldout_subjects: chosen.iter().map(|&s| d.subjects[s].id).collect(),
    })
}

/// Affine map of the outcome onto [−0.5, 0.5].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub y_min: f64,
    pub y_max: f64,
}

impl StandardizationParams {
    pub fn fit(y: &[f64]) -> Result<Self> {
        let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(y_max > y_min) {
            return Err(Error::ConstantOutcome);
        }
        Ok(Self { y_min, y_max })
    }

    /// Identity transform.
    pub fn identity() -> Self {
        Self {
            y_min: -0.5,
            y_max: 0.5,
        }
    }

    pub fn range(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_min) / self.range() - 0.5
    }

    pub fn unstandardize(&self, s: f64) -> f64 {
        (s + 0.5) * self.range() + self.y_min
    }

    /// Map a standardized-scale difference or slope (no offset).
    pub fn unscale(&self, s: f64) -> f64 {
        s * self.range()
    }
}

pub fn standardize_outcome(d: &PanelDataset) -> Result<(PanelDataset, StandardizationParams)> {
    let params = StandardizationParams::fit(&d.y)?;
    let y = d.y.iter().map(|&v| params.standardize(v)).collect();
    Ok((d.with_outcome(y)?, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropensityMode {
    Constant,
    Logistic,
    Supplied,
}

impl std::str::FromStr for PropensityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "logistic" => Ok(Self::Logistic),
            "supplied" => Ok(Self::Supplied),
            _ => Err(Error::Config(format!("unknown propensity mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityEstimate {
    /// One value per subject.
    pub pi: Vec<f64>,
    pub mode_used: PropensityMode,
    pub warnings: Vec<String>,
}

pub const PROPENSITY_CLAMP: (f64, f64) = (0.01, 0.99);

fn clamp_pi(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLAMP.0, PROPENSITY_CLAMP.1)
}

pub fn estimate_propensity(d: &PanelDataset, mode: PropensityMode) -> Result<PropensityEstimate> {
    let z = d.subject_z();
    let treated: Vec<f64> = z.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let constant = || {
        let frac = treated.iter().sum::<f64>() / treated.len().max(1) as f64;
        vec![clamp_pi(frac); treated.len()]
    };
    match mode {
        PropensityMode::Constant => Ok(PropensityEstimate {
            pi: constant(),
            mode_used: mode,
            warnings: vec![],
        }),
        PropensityMode::Supplied => {
            let pi = d
                .pi
                .as_ref()
                .ok_or_else(|| Error::MissingColumn("propensity".into()))?;
            let per_subject: Vec<f64> = d.subjects.iter().map(|s| pi[s.start]).collect();
            for (s, &p) in d.subjects.iter().zip(&per_subject) {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::BadPropensity {
                        subject: s.id,
                        value: p,
                    });
                }
            }
            Ok(PropensityEstimate {
                pi: per_subject.into_iter().map(clamp_pi).collect(),
                mode_used: mode,
                warnings: vec![],
            })
        }
        PropensityMode::Logistic => {
            if d.w.ncols() == 0 {
                return Err(Error::MissingColumn("W (moderators)".into()));
            }
            let x: Vec<Vec<f64>> = (0..d.n_subjects())
                .map(|s| {
                    let mut r = vec![1.0];
                    r.extend_from_slice(d.subject_w(s));
                    r
                })
                .collect();
            match fit_logistic(&x, &treated, 100) {
                LogisticFit::Converged(p) => {
                    let mut warnings = vec![];
                    if p.iter().any(|&v| clamp_pi(v) != v) {
                        warnings.push("propensity clamped to [0.01, 0.99]".to_string());
                    }
                    Ok(PropensityEstimate {
                        pi: p.into_iter().map(clamp_pi).collect(),
                        mode_used: mode,
                        warnings,
                    })
                }
                LogisticFit::Separated(p) => {
                    let msg = "treatment is perfectly separated by W; propensity clamped to [0.01, 0.99]";
                    warn!("{msg}");
                    Ok(PropensityEstimate {
                        pi: p.into_iter().map(clamp_pi).collect(),
                        mode_used: mode,
                        warnings: vec![msg.to_string()],
                    })
                }
                LogisticFit::NotConverged => {
                    let msg = "logistic propensity fit did not converge in 100 iterations; using treated fraction";
                    warn!("{msg}");
                    Ok(PropensityEstimate {
                        pi: constant(),
                        mode_used: PropensityMode::Constant,
                        warnings: vec![msg.to_string()],
                    })
                }
            }
        }
    }
}

enum LogisticFit {
    Converged(Vec<f64>),
    Separated(Vec<f64>),
    NotConverged,
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Newton–Raphson logistic regression.
fn fit_logistic(x: &[Vec<f64>], y: &[f64], max_iter: usize) -> LogisticFit {
    use nalgebra::{DMatrix, DVector};
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(p);
    let separated = |eta: &DVector<f64>| {
        eta.iter()
            .zip(y)
            .all(|(&e, &yy)| (yy > 0.5 && e > 0.0) || (yy < 0.5 && e < 0.0))
    };
    for _ in 0..max_iter {
        let eta = &xm * &beta;
        let prob = eta.map(sigmoid);
        if eta.amax() > 30.0 && separated(&eta) {
            return LogisticFit::Separated(prob.iter().copied().collect());
        }
        let wts = prob.map(|q| (q * (1.0 - q)).max(1e-12));
        let mut h = xm.transpose() * DMatrix::from_diagonal(&wts) * &xm;
        for j in 0..p {
            h[(j, j)] += 1e-8;
        }
        let grad = xm.transpose() * (&yv - &prob);
        let Some(step) = h.cholesky().map(|c| c.solve(&grad)) else {
            return LogisticFit::NotConverged;
        };
        beta += &step;
        if step.amax() < 1e-8 {
            let eta = &xm * &beta;
            return LogisticFit::Converged(eta.iter().map(|&e| sigmoid(e)).collect());
        }
    }
    let eta = &xm * &beta;
    if separated(&eta) {
        LogisticFit::Separated(eta.iter().map(|&e| sigmoid(e)).collect())
    } else {
        LogisticFit::NotConverged
    }
}

/// Number of rows per subject, keyed by subject id.
pub fn rows_per_subject(d: &PanelDataset) -> BTreeMap<i64, usize> {
    d.subjects.iter().map(|s| (s.id, s.len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn panel(subjects: &[(i64, usize)]) -> PanelDataset {
        let mut rows = vec![];
        for &(id, n) in subjects {
            for j in 0..n {
                rows.push(PanelRow {
                    subject: id,
                    t: j as f64,
                    y: (id * 10 + j as i64) as f64,
                    z: (id % 2) as f64,
                    k: vec![j as f64],
                    w: vec![id as f64],
                    pi: None,
                });
            }
        }
        PanelDataset::from_rows(rows, vec!["K1".into()], vec!["W1".into()]).unwrap()
    }

    #[test]
    fn loads_and_remaps_single_subject() {
        let f = write_tmp("subject,time,y,z\n1,2,5.0,1\n1,0,3.0,1\n1,1,4.0,1\n");
        let d = load_panel(f.path(), &Schema::default()).unwrap();
        assert_eq!(d.n_subjects(), 1);
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.z, vec![0.5; 3]);
        assert_eq!(d.t, vec![0.0, 1.0, 2.0]);
        assert_eq!(d.y, vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn rejects_varying_treatment() {
        let f = write_tmp("subject,time,y,z\n1,0,1,1\n1,1,2,0\n");
        let err = load_panel(f.path(), &Schema::default()).unwrap_err();
        assert!(matches!(err, Error::TreatmentVaries(1)));
        assert!(err.to_string().contains("treatment varies within subject"));
    }

    #[test]
    fn rejects_missing_and_bad_values() {
        let f = write_tmp("subject,time,y,z\n1,0,,1\n");
        assert!(matches!(
            load_panel(f.path(), &Schema::default()),
            Err(Error::MissingValue { .. })
        ));
        let f = write_tmp("subject,time,y,z\n1,-1,2,1\n");
        assert!(matches!(
            load_panel(f.path(), &Schema::default()),
            Err(Error::BadTime { .. })
        ));
        let f = write_tmp("subject,time,z\n1,0,1\n");
        assert!(matches!(
            load_panel(f.path(), &Schema::default()),
            Err(Error::MissingColumn(c)) if c == "y"
        ));
        let f = write_tmp("subject,time,y,z,W1\n1,0,1,1,3\n1,1,1,1,4\n");
        assert!(matches!(
            load_panel(f.path(), &Schema::default()),
            Err(Error::ModeratorVaries { .. })
        ));
        let f = write_tmp("subject,time,y,z\n1,0,1,2\n");
        assert!(matches!(
            load_panel(f.path(), &Schema::default()),
            Err(Error::BadTreatment(_))
        ));
    }

    #[test]
    fn prefix_columns_are_numerically_ordered() {
        let f = write_tmp("subject,time,y,z,K10,K2,Kx,W1\n1,0,1,0,10,2,9,7\n");
        let d = load_panel(f.path(), &Schema::default()).unwrap();
        assert_eq!(d.k.names, vec!["K2", "K10"]);
        assert_eq!(d.k.row(0), &[2.0, 10.0]);
        assert_eq!(d.w.row(0), &[7.0]);
    }

    #[test]
    fn holdout_degenerate_and_counts() {
        let d = panel(&[(1, 3), (2, 1), (3, 2)]);
        let p = partition_holdout(&d, 0, 1).unwrap();
        assert!(p.heldout_rows.is_empty());
        assert_eq!(p.fit_rows, (0..d.n_rows()).collect::<Vec<_>>());
        assert!(matches!(
            partition_holdout(&d, 3, 1),
            Err(Error::NotEnoughSubjects {
                requested: 3,
                eligible: 2
            })
        ));
        let ids: Vec<(i64, usize)> = (0..200).map(|i| (i, 5)).collect();
        let d = panel(&ids);
        let p = partition_holdout(&d, 50, 9).unwrap();
        assert_eq!(p.heldout_rows.len(), 50);
        let counts = rows_per_subject(&d.subset(&p.fit_rows).unwrap());
        for id in &p.heldout_subjects {
            assert_eq!(counts[id], 4);
        }
        assert_eq!(p, partition_holdout(&d, 50, 9).unwrap());
        assert_ne!(p, partition_holdout(&d, 50, 10).unwrap());
    }

    #[test]
    fn standardization_maps_endpoints() {
        let d = panel(&[(1, 3)]).with_outcome(vec![0.0, 5.0, 10.0]).unwrap();
        let (s, p) = standardize_outcome(&d).unwrap();
        assert_eq!(s.y, vec![-0.5, 0.0, 0.5]);
        for &v in &d.y {
            assert!((p.unstandardize(p.standardize(v)) - v).abs() < 1e-12);
        }
        let c = d.with_outcome(vec![1.0; 3]).unwrap();
        assert!(matches!(standardize_outcome(&c), Err(Error::ConstantOutcome)));
    }

    #[test]
    fn constant_propensity_is_treated_fraction() {
        let mut rows = vec![];
        for i in 0..100 {
            rows.push(PanelRow {
                subject: i,
                t: 0.0,
                y: 0.0,
                z: if i < 40 { 1.0 } else { 0.0 },
                k: vec![],
                w: vec![],
                pi: None,
            });
        }
        let d = PanelDataset::from_rows(rows, vec![], vec![]).unwrap();
        let est = estimate_propensity(&d, PropensityMode::Constant).unwrap();
        assert!(est.pi.iter().all(|&p| (p - 0.40).abs() < 1e-15));
    }

    #[test]
    fn separated_logistic_is_clamped() {
        let mut rows = vec![];
        for i in 0..40 {
            rows.push(PanelRow {
                subject: i,
                t: 0.0,
                y: 0.0,
                z: if i < 20 { 1.0 } else { 0.0 },
                k: vec![],
                w: vec![if i < 20 { 1.0 + i as f64 * 0.1 } else { -1.0 - i as f64 * 0.1 }],
                pi: None,
            });
        }
        let d = PanelDataset::from_rows(rows, vec![], vec!["W1".into()]).unwrap();
        let est = estimate_propensity(&d, PropensityMode::Logistic).unwrap();
        assert!(!est.warnings.is_empty());
        for (s, &p) in est.pi.iter().enumerate() {
            let expect = if s < 20 { 0.99 } else { 0.01 };
            assert_eq!(p, expect);
        }
    }

    #[test]
    fn logistic_recovers_overlap() {
        let mut rng = substream(3, 0);
        let mut rows = vec![];
        for i in 0..400 {
            let w: f64 = rng.random_range(-1.0..1.0);
            let p = sigmoid(0.5 + w);
            let z = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            rows.push(PanelRow {
                subject: i,
                t: 0.0,
                y: 0.0,
                z,
                k: vec![],
                w: vec![w],
                pi: None,
            });
        }
        let d = PanelDataset::from_rows(rows, vec![], vec!["W1".into()]).unwrap();
        let est = estimate_propensity(&d, PropensityMode::Logistic).unwrap();
        assert_eq!(est.mode_used, PropensityMode::Logistic);
        assert!(est.pi.iter().all(|&p| p > 0.01 && p < 0.99));
    }

    #[test]
    fn supplied_passes_through() {
        let f = write_tmp("subject,time,y,z,pi\n1,0,1,1,0.3\n1,1,2,1,0.3\n2,0,1,0,0.6\n");
        let schema = Schema {
            propensity: Some("pi".into()),
            ..Schema::default()
        };
        let d = load_panel(f.path(), &schema).unwrap();
        let est = estimate_propensity(&d, PropensityMode::Supplied).unwrap();
        assert_eq!(est.pi, vec![0.3, 0.6]);
        let f = write_tmp("subject,time,y,z,pi\n1,0,1,1,1.0\n");
        let d = load_panel(f.path(), &schema).unwrap();
        assert!(matches!(
            estimate_propensity(&d, PropensityMode::Supplied),
            Err(Error::BadPropensity { .. })
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let d = panel(&[(1, 3), (4, 2)]);
        let f = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(f.path()).unwrap();
        let back = load_panel(f.path(), &Schema::default()).unwrap();
        assert_eq!(back, d);
    }
}
