use std::path::Path;

use bcflong::dist::mean;
use bcflong::estimands::{
    average_effect, average_longitudinal_effect, counterfactual_draws, harmonize as harmonize_outcome,
    icate_summary, predict_counterfactual, write_effect_table, write_icate_table, EffectRow, EffectSummary,
};
use bcflong::eval::{run_replication_study, MetricsReport, ReplicationPlan};
use bcflong::panel::{load_panel, PanelDataset};
use bcflong::sampler::{data_checksum, run_gibbs, summarize_chain, EssEstimate, PosteriorDraws};

use crate::svg::{self, Band};
use crate::{CliError, RunConfig};

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::from_core(e.into()))
}

fn row(w: &mut csv::Writer<std::fs::File>, fields: Vec<String>) -> Result<(), CliError> {
    w.write_record(fields).map_err(|e| CliError::from_core(e.into()))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn load_data(cfg: &RunConfig) -> Result<PanelDataset, CliError> {
    Ok(load_panel(&cfg.existing_path("data")?, &cfg.schema())?)
}

/// Draws plus the dataset they were fitted on, verified by checksum.
fn load_fit(cfg: &RunConfig) -> Result<(PosteriorDraws, PanelDataset), CliError> {
    let draws = PosteriorDraws::load(&cfg.existing_path("draws")?)?;
    let d = load_data(cfg)?;
    if data_checksum(&d) != draws.data_checksum {
        return Err(CliError::config(
            "`data` does not match the dataset the draws were fitted on",
        ));
    }
    Ok((draws, d))
}

fn times(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let t: Vec<f64> = cfg.list("times")?;
    if t.is_empty() {
        return Err(CliError::config("`times` must list at least one time"));
    }
    Ok(t)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let seed: u64 = cfg.get("seed")?;
    let sparsity: f64 = cfg.get("sparsity")?;
    let (d, truth) = cfg.generator(sparsity, seed)?.generate(sparsity, seed)?;
    d.write_csv(&out.join("data.csv"))?;
    truth.write_csv(&d, &out.join("truth.csv"))?;
    Ok(())
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let d = load_data(cfg)?;
    let base = cfg.sampler()?;
    let chains: usize = cfg.get("chains")?;
    if chains == 0 {
        return Err(CliError::config("`chains` must be at least 1"));
    }
    let plots = cfg.flag("plots")?;
    for c in 0..chains {
        let sub = if chains == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("chain{c}"))
        };
        let mut sc = base.clone();
        sc.chain = c as u64;
        if cfg.flag("checkpoint")? {
            sc.checkpoint_dir = Some(sub.join("checkpoint"));
        }
        let draws = run_gibbs(&d, &sc)?;
        draws.save(&sub.join("draws"))?;
        write_fitted(&draws, &d, &sub.join("fitted.csv"))?;
        write_diagnostics(&draws, &sub.join("diagnostics"), plots)?;
    }
    Ok(())
}

fn write_fitted(p: &PosteriorDraws, d: &PanelDataset, path: &Path) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    row(&mut w, ["subject", "time", "y", "z", "mu", "tau", "gamma", "fitted"].map(String::from).to_vec())?;
    for i in 0..d.n_rows() {
        let f = p.mu_mean[i] + p.tau_mean[i] * d.z[i] + p.gamma_mean[i];
        row(
            &mut w,
            vec![
                d.subject_id[i].to_string(),
                d.t[i].to_string(),
                d.y[i].to_string(),
                d.z[i].to_string(),
                p.mu_mean[i].to_string(),
                p.tau_mean[i].to_string(),
                p.gamma_mean[i].to_string(),
                f.to_string(),
            ],
        )?;
    }
    finish(w, path)
}

fn write_diagnostics(p: &PosteriorDraws, dir: &Path, plots: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let s = summarize_chain(p)?;

    let path = dir.join("traces.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["draw".to_string()];
    header.extend(s.traces.iter().map(|t| t.name.clone()));
    row(&mut w, header)?;
    for k in 0..s.n_draws {
        let mut r = vec![k.to_string()];
        r.extend(s.traces.iter().map(|t| t.values[k].to_string()));
        row(&mut w, r)?;
    }
    finish(w, &path)?;

    let path = dir.join("ess.csv");
    let mut w = csv_writer(&path)?;
    row(&mut w, ["parameter", "ess", "mean", "final_running_mean"].map(String::from).to_vec())?;
    for t in &s.traces {
        let ess = match t.ess {
            EssEstimate::Value(v) => v.to_string(),
            EssEstimate::Degenerate => "degenerate".into(),
        };
        row(
            &mut w,
            vec![
                t.name.clone(),
                ess,
                mean(&t.values).to_string(),
                t.running_mean.last().copied().unwrap_or(f64::NAN).to_string(),
            ],
        )?;
    }
    finish(w, &path)?;

    let path = dir.join("alpha.csv");
    let mut w = csv_writer(&path)?;
    row(
        &mut w,
        ["subject", "a1_mean", "a1_lo95", "a1_hi95", "a2_mean", "a2_lo95", "a2_hi95"]
            .map(String::from)
            .to_vec(),
    )?;
    for (id, a) in p.subject_ids.iter().zip(&s.alpha) {
        let mut r = vec![id.to_string()];
        for iv in a {
            r.extend([iv.mean, iv.lo, iv.hi].map(|v| v.to_string()));
        }
        row(&mut w, r)?;
    }
    finish(w, &path)?;

    let path = dir.join("moves.csv");
    let mut w = csv_writer(&path)?;
    row(&mut w, ["ensemble", "move", "proposed", "accepted"].map(String::from).to_vec())?;
    for (name, m) in [("mu", p.mu_moves), ("tau", p.tau_moves)] {
        for (mv, (a, b)) in [("grow", m.grow), ("prune", m.prune), ("change", m.change), ("bandwidth", m.bandwidth)] {
            row(&mut w, vec![name.into(), mv.into(), a.to_string(), b.to_string()])?;
        }
    }
    finish(w, &path)?;

    if plots {
        for t in &s.traces {
            write(&dir.join(format!("trace_{}.svg", t.name)), &svg::trace(&t.name, &t.values, &t.running_mean))?;
        }
    }
    Ok(())
}

pub fn diagnostics(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let draws = PosteriorDraws::load(&cfg.existing_path("draws")?)?;
    write_diagnostics(&draws, out, cfg.flag("plots")?)
}

fn fmt_t(t: f64) -> String {
    format!("{t}")
}

pub fn effects(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (draws, d) = load_fit(cfg)?;
    let times = times(cfg)?;
    let plots = cfg.flag("plots")?;

    let mut rows = vec![];
    for &t in &times {
        rows.push(EffectRow {
            estimand: format!("tau(W,t={})", fmt_t(t)),
            summary: average_effect(&draws, &d, t)?,
        });
    }
    for w in times.windows(2) {
        rows.push(EffectRow {
            estimand: format!("tau(W,t={})-tau(W,t={})", fmt_t(w[1]), fmt_t(w[0])),
            summary: average_longitudinal_effect(&draws, &d, w[0], w[1])?,
        });
    }
    write_effect_table(&out.join("effects.csv"), &rows)?;

    for &t in &times {
        let ic = icate_summary(&draws, &d, t)?;
        write_icate_table(&out.join(format!("icate_t{}.csv", fmt_t(t))), &ic)?;
        if plots {
            let m: Vec<f64> = ic.iter().map(|e| e.effect.mean).collect();
            let lo: Vec<f64> = ic.iter().map(|e| e.effect.lower).collect();
            let hi: Vec<f64> = ic.iter().map(|e| e.effect.upper).collect();
            let g: Vec<usize> = ic.iter().map(|e| usize::from(e.z > 0.0)).collect();
            write(
                &out.join(format!("icate_t{}.svg", fmt_t(t))),
                &svg::caterpillar(
                    &format!("Individual treatment effects at t = {}", fmt_t(t)),
                    "effect",
                    &m,
                    &lo,
                    &hi,
                    &g,
                    &["control", "treated"],
                ),
            )?;
        }
    }

    // Population-averaged counterfactual trajectories per arm.
    let mut grid = vec![0.0];
    grid.extend(times.iter().copied());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let path = out.join("trajectory.csv");
    let mut w = csv_writer(&path)?;
    row(&mut w, ["z", "t", "mean", "lo95", "hi95"].map(String::from).to_vec())?;
    let mut series = vec![];
    for z in [-0.5, 0.5] {
        let mut acc = vec![vec![0.0; draws.n_retained()]; grid.len()];
        for s in d.subjects() {
            let cf = counterfactual_draws(&draws, &d, s.id, z, &grid)?;
            for (a, c) in acc.iter_mut().zip(&cf) {
                for (x, y) in a.iter_mut().zip(c) {
                    *x += y;
                }
            }
        }
        let n = d.n_subjects() as f64;
        let sums: Vec<EffectSummary> = acc
            .iter()
            .map(|a| EffectSummary::from_draws(&a.iter().map(|v| v / n).collect::<Vec<_>>()))
            .collect::<Result<_, _>>()?;
        for (t, e) in grid.iter().zip(&sums) {
            row(
                &mut w,
                vec![z.to_string(), t.to_string(), e.mean.to_string(), e.lower.to_string(), e.upper.to_string()],
            )?;
        }
        series.push(Band {
            label: if z < 0.0 { "control" } else { "treated" },
            x: grid.clone(),
            mean: sums.iter().map(|e| e.mean).collect(),
            lo: sums.iter().map(|e| e.lower).collect(),
            hi: sums.iter().map(|e| e.upper).collect(),
        });
    }
    finish(w, &path)?;
    if plots {
        write(
            &out.join("trajectory.svg"),
            &svg::bands("Average outcome trajectory by arm", "time", "outcome", &series),
        )?;
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (draws, d) = load_fit(cfg)?;
    let times = times(cfg)?;
    let listed: Vec<i64> = cfg.list("subjects")?;
    let subjects: Vec<i64> = if listed.is_empty() {
        draws.subject_ids.clone()
    } else {
        listed.clone()
    };
    let path = out.join("predictions.csv");
    let mut w = csv_writer(&path)?;
    row(&mut w, ["subject", "z", "t", "mean", "lo95", "hi95"].map(String::from).to_vec())?;
    for &s in &subjects {
        let mut series = vec![];
        for z in [-0.5, 0.5] {
            let tr = predict_counterfactual(&draws, &d, s, z, &times)?;
            for (t, e) in times.iter().zip(&tr) {
                row(
                    &mut w,
                    vec![
                        s.to_string(),
                        z.to_string(),
                        t.to_string(),
                        e.mean.to_string(),
                        e.lower.to_string(),
                        e.upper.to_string(),
                    ],
                )?;
            }
            series.push(Band {
                label: if z < 0.0 { "control" } else { "treated" },
                x: times.clone(),
                mean: tr.iter().map(|e| e.mean).collect(),
                lo: tr.iter().map(|e| e.lower).collect(),
                hi: tr.iter().map(|e| e.upper).collect(),
            });
        }
        if cfg.flag("plots")? && !listed.is_empty() {
            write(
                &out.join(format!("subject_{s}.svg")),
                &svg::bands(&format!("Subject {s}"), "time", "outcome", &series),
            )?;
        }
    }
    finish(w, &path)
}

pub fn harmonize(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (draws, d) = load_fit(cfg)?;
    let h = harmonize_outcome(&draws, &d)?;

    let path = out.join("harmonized.csv");
    let mut w = csv_writer(&path)?;
    row(&mut w, ["subject", "time", "y", "y_harm", "mu_hat"].map(String::from).to_vec())?;
    for i in 0..d.n_rows() {
        row(
            &mut w,
            vec![
                d.subject_id[i].to_string(),
                d.t[i].to_string(),
                h.y[i].to_string(),
                h.y_harm[i].to_string(),
                h.mu_hat[i].to_string(),
            ],
        )?;
    }
    finish(w, &path)?;

    let path = out.join("k_bar.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["subject".to_string()];
    header.extend(d.k.names.iter().cloned());
    row(&mut w, header)?;
    for (s, kb) in d.subjects().iter().zip(&h.k_bar) {
        let mut r = vec![s.id.to_string()];
        r.extend(kb.iter().map(f64::to_string));
        row(&mut w, r)?;
    }
    finish(w, &path)?;

    let path = out.join("slopes.csv");
    let mut w = csv_writer(&path)?;
    row(&mut w, vec!["outcome".into(), "slope_on_mu_hat".into()])?;
    row(&mut w, vec!["y".into(), h.slope_before.to_string()])?;
    row(&mut w, vec!["y_harm".into(), h.slope_after.to_string()])?;
    finish(w, &path)?;

    if cfg.flag("plots")? {
        let mx = mean(&h.mu_hat);
        for (name, y, slope) in [("before", &h.y, h.slope_before), ("after", &h.y_harm, h.slope_after)] {
            let icpt = mean(y) - slope * mx;
            write(
                &out.join(format!("harmonize_{name}.svg")),
                &svg::scatter(
                    &format!("Outcome vs estimated scanner effect ({name})"),
                    "estimated scanner effect",
                    "outcome",
                    &h.mu_hat,
                    y,
                    Some((icpt, slope)),
                ),
            )?;
        }
    }
    Ok(())
}

pub fn replicate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sparsities: Vec<f64> = cfg.list("sparsity")?;
    if sparsities.is_empty() {
        return Err(CliError::config("`sparsity` must list at least one level"));
    }
    let mut sampler = cfg.sampler()?;
    sampler.store_tau_forests = false;
    let plan = ReplicationPlan {
        generator: cfg.generator(0.0, 0)?,
        sparsities,
        variants: cfg.variants()?,
        n_reps: cfg.get("reps")?,
        sampler,
        holdout_fraction: cfg.get("holdout_fraction")?,
        seed: cfg.get("seed")?,
        workers: cfg.get("workers")?,
    };
    let report = run_replication_study(&plan)?;
    report.write_csv(&out.join("metrics.csv"))?;
    report.write_fits_csv(&out.join("fits.csv"))?;
    write_table(&report, &plan, &out.join("table.csv"))?;
    let path = out.join("failures.csv");
    let mut w = csv_writer(&path)?;
    row(&mut w, ["sparsity", "rep", "variant", "message"].map(String::from).to_vec())?;
    for f in &report.failures {
        row(
            &mut w,
            vec![f.sparsity.to_string(), f.rep.to_string(), f.variant.label().into(), f.message.clone()],
        )?;
    }
    finish(w, &path)
}

/// Wide layout: one row per metric, one column per (sparsity, variant).
fn write_table(r: &MetricsReport, plan: &ReplicationPlan, path: &Path) -> Result<(), CliError> {
    let mut metrics: Vec<&str> = vec![];
    for m in &r.rows {
        if !metrics.contains(&m.metric.as_str()) {
            metrics.push(&m.metric);
        }
    }
    let mut w = csv_writer(path)?;
    let mut header = vec!["metric".to_string()];
    for s in &plan.sparsities {
        for v in &plan.variants {
            header.push(format!("{}@{s}", v.label()));
        }
    }
    row(&mut w, header)?;
    for m in metrics {
        let mut rr = vec![m.to_string()];
        for &s in &plan.sparsities {
            for &v in &plan.variants {
                rr.push(r.get(s, v, m).map_or("-".into(), |x| format!("{:.4}", x.mean)));
            }
        }
        row(&mut w, rr)?;
    }
    finish(w, path)
}
