//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then the preset, then the config
//! file, then command-line flags. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bcflong::eval::{Generator, Variant};
use bcflong::forest::ForestConfig;
use bcflong::panel::{ColumnSelector, PropensityMode, Schema};
use bcflong::random_effects::GlobalScaleMode;
use bcflong::sampler::{RePrior, SamplerConfig};
use bcflong::simgen::{SemiSyntheticConfig, SyntheticConfig};

use crate::CliError;

/// Every recognised key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "", "fully-synthetic, semi-synthetic or clinical"),
    ("out", "", "run directory receiving all artifacts"),
    ("seed", "1", "master seed"),
    ("chains", "1", "independent chains for fit"),
    ("data", "", "input panel CSV"),
    ("draws", "", "posterior draws directory written by fit"),
    ("subject_col", "subject", "subject id column"),
    ("time_col", "time", "follow-up time column"),
    ("outcome_col", "y", "outcome column"),
    ("treatment_col", "z", "treatment column, coded 0/1 or -0.5/0.5"),
    ("prognostic", "K", "prognostic covariates: a prefix, or a comma list of names"),
    ("moderators", "W", "baseline moderators: a prefix, or a comma list of names"),
    ("propensity_col", "", "column with supplied propensity scores"),
    ("iterations", "5000", "Gibbs iterations"),
    ("burn_in", "1000", "retained-scale burn-in, counted after thinning"),
    ("thin", "1", "keep every thin-th iteration"),
    ("re_prior", "horseshoe", "random-effect prior: none, base or horseshoe"),
    ("mu_trees", "200", "trees in the prognostic ensemble"),
    ("tau_trees", "50", "trees in the treatment ensemble (0 disables)"),
    ("global_scale", "sigma", "horseshoe global scale: unit, sigma or rho0:<n>"),
    ("standardize", "true", "fit on the outcome mapped to [-0.5, 0.5]"),
    ("include_propensity", "true", "use the propensity score as a prognostic input"),
    ("propensity_mode", "", "constant, logistic or supplied (default: automatic)"),
    ("store_fits", "false", "keep per-row mu and tau draws"),
    ("checkpoint", "false", "write a resumable chain state"),
    ("checkpoint_every", "1000", "iterations between checkpoints"),
    ("generator", "", "fully-synthetic or semi-synthetic"),
    ("n_subjects", "200", "subjects in the fully synthetic design"),
    ("n_obs", "5", "visits per subject in the fully synthetic design"),
    ("n_rows", "2583", "rows in the semi-synthetic design"),
    ("sparsity", "0", "share of subjects with zero random effects (comma list for replicate)"),
    ("noise_factor", "0.1", "noise sd as a share of the mean noiseless outcome"),
    ("mu_scale", "1", "multiplier on the Friedman surface"),
    ("reps", "20", "replications per sparsity level"),
    ("workers", "1", "parallel replication workers"),
    ("variants", "", "comma list from vanilla, B, S (default from the generator)"),
    ("holdout_fraction", "0.1", "share of subjects contributing a held-out row"),
    ("times", "1,2", "evaluation times for effects and predictions"),
    ("subjects", "", "comma list of subject ids for predict (default: all)"),
    ("plots", "true", "emit SVG figures"),
];

fn preset_values(name: &str) -> Option<&'static [(&'static str, &'static str)]> {
    Some(match name {
        "fully-synthetic" | "synthetic" => &[
            ("generator", "fully-synthetic"),
            ("iterations", "5000"),
            ("burn_in", "1000"),
            ("thin", "1"),
            ("tau_trees", "0"),
            ("include_propensity", "false"),
        ],
        "semi-synthetic" => &[
            ("generator", "semi-synthetic"),
            ("iterations", "10000"),
            ("burn_in", "3000"),
            ("thin", "1"),
        ],
        "clinical" => &[("iterations", "100000"), ("thin", "10"), ("burn_in", "3000")],
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

impl RunConfig {
    /// Resolve the layered configuration. `file` and `flags` are parsed
    /// pairs; later layers win.
    pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<Self, CliError> {
        for (k, _) in file.iter().chain(flags) {
            if !KEYS.iter().any(|(n, _, _)| n == k) {
                return Err(bad(format!("unknown key `{k}`")));
            }
        }
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        let preset = flags
            .iter()
            .rev()
            .chain(file.iter().rev())
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.clone());
        if let Some(p) = preset.as_deref().filter(|p| !p.is_empty()) {
            let vals = preset_values(p).ok_or_else(|| bad(format!("unknown preset `{p}`")))?;
            for (k, v) in vals {
                values.insert(k.to_string(), v.to_string());
            }
        }
        for (k, v) in file.iter().chain(flags) {
            values.insert(k.clone(), v.clone());
        }
        Ok(Self { values })
    }

    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
        let mut out = vec![];
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("config line {}: expected key = value", n + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn read_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// Fully resolved configuration as config-file text; feeding it back
    /// through [`RunConfig::parse_text`] reproduces this value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{k} = {}", self.values[*k]);
        }
        s
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| bad(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| bad(format!("invalid entry `{s}` in `{key}`: {e}")))
            })
            .collect()
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(bad(format!("invalid boolean `{v}` for `{key}`"))),
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        match self.raw("out") {
            "" => Err(bad("no output directory: pass --out or set `out`")),
            p => Ok(PathBuf::from(p)),
        }
    }

    /// Path-valued key that must name an existing file or directory.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Err(bad(format!("`{key}` is required for this command")));
        }
        let p = PathBuf::from(raw);
        if !p.exists() {
            return Err(bad(format!("`{key}` path {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn schema(&self) -> Schema {
        let selector = |key: &str| {
            let raw = self.raw(key);
            if raw.contains(',') {
                ColumnSelector::Names(raw.split(',').map(|s| s.trim().to_string()).collect())
            } else {
                ColumnSelector::Prefix(raw.to_string())
            }
        };
        Schema {
            subject: self.raw("subject_col").into(),
            time: self.raw("time_col").into(),
            outcome: self.raw("outcome_col").into(),
            treatment: self.raw("treatment_col").into(),
            prognostic: selector("prognostic"),
            moderators: selector("moderators"),
            propensity: Some(self.raw("propensity_col").to_string()).filter(|s| !s.is_empty()),
        }
    }

    pub fn sampler(&self) -> Result<SamplerConfig, CliError> {
        let propensity_mode = match self.raw("propensity_mode") {
            "" => None,
            _ => Some(self.get::<PropensityMode>("propensity_mode")?),
        };
        let cfg = SamplerConfig {
            max_iter: self.get("iterations")?,
            burn_in: self.get("burn_in")?,
            thin: self.get("thin")?,
            seed: self.get("seed")?,
            re_prior: self.get::<RePrior>("re_prior")?,
            mu_forest: ForestConfig::prognostic().with_trees(self.get("mu_trees")?),
            tau_forest: ForestConfig::treatment().with_trees(self.get("tau_trees")?),
            global_scale: self.get::<GlobalScaleMode>("global_scale")?,
            standardize: self.flag("standardize")?,
            include_propensity: self.flag("include_propensity")?,
            propensity_mode,
            store_fits: self.flag("store_fits")?,
            checkpoint_every: self.get("checkpoint_every")?,
            ..Default::default()
        };
        cfg.validate().map_err(CliError::from_core)?;
        Ok(cfg)
    }

    /// Generator at a given sparsity and seed.
    pub fn generator(&self, sparsity: f64, seed: u64) -> Result<Generator, CliError> {
        Ok(match self.raw("generator") {
            "fully-synthetic" => Generator::FullySynthetic(SyntheticConfig {
                n_subjects: self.get("n_subjects")?,
                n_obs: self.get("n_obs")?,
                sparsity,
                noise_factor: self.get("noise_factor")?,
                mu_scale: self.get("mu_scale")?,
                seed,
                ..Default::default()
            }),
            "semi-synthetic" => Generator::SemiSynthetic(SemiSyntheticConfig {
                n_rows: self.get("n_rows")?,
                sparsity,
                noise_factor: self.get("noise_factor")?,
                seed,
                ..Default::default()
            }),
            "" => return Err(bad("no generator: pass --preset or set `generator`")),
            g => return Err(bad(format!("unknown generator `{g}`"))),
        })
    }

    pub fn variants(&self) -> Result<Vec<Variant>, CliError> {
        let v: Vec<Variant> = self.list("variants")?;
        if !v.is_empty() {
            return Ok(v);
        }
        Ok(match self.raw("generator") {
            "semi-synthetic" => vec![Variant::Vanilla, Variant::Base, Variant::Sparse],
            _ => vec![Variant::Base, Variant::Sparse],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn layering_order() {
        let file = kv(&[("preset", "semi-synthetic"), ("iterations", "200"), ("seed", "3")]);
        let flags = kv(&[("seed", "9")]);
        let c = RunConfig::resolve(&file, &flags).unwrap();
        assert_eq!(c.raw("iterations"), "200");
        assert_eq!(c.raw("burn_in"), "3000");
        assert_eq!(c.raw("seed"), "9");
        assert_eq!(c.raw("generator"), "semi-synthetic");
    }

    #[test]
    fn presets_match_run_profiles() {
        let get = |p: &str| {
            let c = RunConfig::resolve(&kv(&[("preset", p)]), &[]).unwrap();
            let s = c.sampler().unwrap();
            (s.max_iter, s.burn_in, s.thin)
        };
        assert_eq!(get("fully-synthetic"), (5000, 1000, 1));
        assert_eq!(get("semi-synthetic"), (10000, 3000, 1));
        assert_eq!(get("clinical"), (100000, 3000, 10));
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig::resolve(&kv(&[("preset", "clinical"), ("moderators", "age,sex")]), &[]).unwrap();
        let back = RunConfig::resolve(&RunConfig::parse_text(&c.to_text()).unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(RunConfig::resolve(&kv(&[("iters", "5")]), &[]).is_err());
        assert!(RunConfig::resolve(&kv(&[("preset", "nope")]), &[]).is_err());
        let c = RunConfig::resolve(&kv(&[("thin", "x")]), &[]).unwrap();
        assert!(c.sampler().is_err());
        assert!(RunConfig::parse_text("no equals sign").is_err());
    }

    #[test]
    fn column_selectors() {
        let c = RunConfig::resolve(&kv(&[("moderators", "age, sex"), ("prognostic", "iqm_")]), &[]).unwrap();
        let s = c.schema();
        assert_eq!(s.moderators, ColumnSelector::Names(vec!["age".into(), "sex".into()]));
        assert_eq!(s.prognostic, ColumnSelector::Prefix("iqm_".into()));
    }
}
