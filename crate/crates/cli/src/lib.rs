//! Command-line front end: `simulate`, `fit`, `predict`, `effects`,
//! `harmonize`, `replicate` and `diagnostics`.
//!
//! Every command writes into one run directory containing its artifacts,
//! the fully resolved `run.conf` and a `manifest.json`. Exit status is 0 on
//! success, 2 for configuration errors and 1 for runtime failures; failures
//! also print a one-line JSON error record to stderr and, when the run
//! directory is known, write it to `error.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
pub mod config;
pub mod svg;

pub use config::RunConfig;

/// Machine-readable failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub exit_code: i32,
    pub kind: String,
    pub module: String,
    pub iteration: Option<usize>,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            exit_code: 2,
            kind: "config".into(),
            module: "cli".into(),
            iteration: None,
            message: msg.into(),
        }
    }

    pub fn from_core(e: bcflong::Error) -> Self {
        use bcflong::Error as E;
        let module = match &e {
            E::NonFinite { .. } | E::EmptyChain => "sampler",
            E::Dimension { .. } | E::UnknownSubject(_) | E::IntervalOrder(_) => "estimands",
            E::Config(_) => "cli",
            _ => "panel_data",
        };
        let (exit_code, kind) = match &e {
            E::Config(_) | E::MissingColumn(_) => (2, "config"),
            _ => (1, "runtime"),
        };
        Self {
            exit_code,
            kind: kind.into(),
            module: module.into(),
            iteration: match e {
                E::NonFinite { iteration, .. } => Some(iteration),
                _ => None,
            },
            message: e.to_string(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            exit_code: 1,
            kind: "runtime".into(),
            module: "cli".into(),
            iteration: None,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<bcflong::Error> for CliError {
    fn from(e: bcflong::Error) -> Self {
        Self::from_core(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "bcflong", version, about = "Longitudinal Bayesian causal forests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic panel and its ground truth.
    Simulate(Common),
    /// Run the Gibbs sampler and store posterior draws.
    Fit(Common),
    /// Counterfactual trajectories for subjects under both treatment arms.
    Predict(Common),
    /// Population and individual treatment-effect tables and figures.
    Effects(Common),
    /// Remove the estimated prognostic component from the outcome.
    Harmonize(Common),
    /// Compare model variants over repeated simulated datasets.
    Replicate(Common),
    /// Trace, running-mean and effective-sample-size summaries of a fit.
    Diagnostics(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Effects(_) => "effects",
            Command::Harmonize(_) => "harmonize",
            Command::Replicate(_) => "replicate",
            Command::Diagnostics(_) => "diagnostics",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Fit(c)
            | Command::Predict(c)
            | Command::Effects(c)
            | Command::Harmonize(c)
            | Command::Replicate(c)
            | Command::Diagnostics(c) => c,
        }
    }
}

/// Flags shared by all commands; each maps onto a config key.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    draws: Option<PathBuf>,
    /// One level, or a comma list for `replicate`.
    #[arg(long)]
    sparsity: Option<String>,
    /// Evaluation time; repeat for several.
    #[arg(long = "t")]
    times: Vec<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    re_prior: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// Subject id for `predict`; repeat for several.
    #[arg(long = "subject")]
    subjects: Vec<i64>,
    #[arg(long)]
    variants: Option<String>,
    /// Override any config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Common {
    fn flag_pairs(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut p: Vec<(String, String)> = vec![];
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                p.push((k.to_string(), v));
            }
        };
        put("preset", self.preset.clone());
        put("out", self.out.as_ref().map(|v| v.display().to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("data", self.data.as_ref().map(|v| v.display().to_string()));
        put("draws", self.draws.as_ref().map(|v| v.display().to_string()));
        put("sparsity", self.sparsity.clone());
        put("times", Some(join(&self.times)).filter(|s| !s.is_empty()));
        put("iterations", self.iterations.map(|v| v.to_string()));
        put("burn_in", self.burn_in.map(|v| v.to_string()));
        put("thin", self.thin.map(|v| v.to_string()));
        put("re_prior", self.re_prior.clone());
        put("reps", self.reps.map(|v| v.to_string()));
        put("workers", self.workers.map(|v| v.to_string()));
        put("chains", self.chains.map(|v| v.to_string()));
        put("subjects", Some(join(&self.subjects)).filter(|s| !s.is_empty()));
        put("variants", self.variants.clone());
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            p.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(p)
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(path) => RunConfig::read_file(path)?,
            None => vec![],
        };
        RunConfig::resolve(&file, &self.flag_pairs()?)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: &'a str,
    config: &'a std::collections::BTreeMap<String, String>,
    /// Relative path and sha256 of every artifact except manifests.
    files: Vec<(String, String)>,
    elapsed_secs: f64,
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json" && n != "error.json") {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

/// sha256 of a file, hex encoded.
pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, secs: f64) -> Result<(), CliError> {
    std::fs::write(out.join("run.conf"), cfg.to_text()).map_err(|e| CliError::io(out, e))?;
    let mut files = vec![];
    list_files(out, out, &mut files).map_err(|e| CliError::io(out, e))?;
    let files = files
        .into_iter()
        .map(|rel| {
            let h = sha256_file(&out.join(&rel)).map_err(|e| CliError::io(&rel, e))?;
            Ok((rel.display().to_string(), h))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.raw("seed"),
        config: cfg.values(),
        files,
        elapsed_secs: secs,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?;
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::config(format!("output directory {} is not writable: {e}", out.display())))?;
    let start = Instant::now();
    match cmd {
        Command::Simulate(_) => commands::simulate(cfg, &out)?,
        Command::Fit(_) => commands::fit(cfg, &out)?,
        Command::Predict(_) => commands::predict(cfg, &out)?,
        Command::Effects(_) => commands::effects(cfg, &out)?,
        Command::Harmonize(_) => commands::harmonize(cfg, &out)?,
        Command::Replicate(_) => commands::replicate(cfg, &out)?,
        Command::Diagnostics(_) => commands::diagnostics(cfg, &out)?,
    }
    write_manifest(&out, cmd.name(), cfg, start.elapsed().as_secs_f64())?;
    Ok(out)
}

fn report(err: &CliError, out: Option<&Path>) {
    let line = serde_json::to_string(err).unwrap_or_else(|_| err.message.clone());
    eprintln!("{line}");
    if let Some(dir) = out.filter(|d| d.is_dir()) {
        let _ = std::fs::write(dir.join("error.json"), line + "\n");
    }
}

/// Parse `argv` (including the program name), run the command and return
/// the process exit status.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            report(&CliError::config(e.kind().to_string()), None);
            return 2;
        }
    };
    let cfg = match cli.command.common().resolve() {
        Ok(c) => c,
        Err(e) => {
            report(&e, None);
            return e.exit_code;
        }
    };
    match dispatch(&cli.command, &cfg) {
        Ok(out) => {
            log::info!("{} finished; artifacts in {}", cli.command.name(), out.display());
            0
        }
        Err(e) => {
            report(&e, cfg.out_dir().ok().as_deref());
            e.exit_code
        }
    }
}
