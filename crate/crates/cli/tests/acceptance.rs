//! Acceptance suite. Each test prints one line
//! `ACCEPTANCE <id> <name>: PASS|FAIL | <details>` and then asserts.
//!
//! Criteria 4-6 are replication studies taking tens of minutes to hours on
//! one core, and criterion 8 fails for reasons documented in the README.
//! These are `#[ignore]`d and run with
//! `cargo test --release -p bcflong-cli --test acceptance -- --ignored --nocapture`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bcflong::dist::{mean, sd, substream, inverse_gamma};
use bcflong::estimands::{counterfactual_draws, harmonize, longitudinal_draws, tau_draws};
use bcflong::eval::{run_replication_study, MetricsReport, ReplicationPlan, Variant};
use bcflong::forest::{backfit_sweep, ColMatrix, Forest, ForestConfig, TrainingCache};
use bcflong::panel::{PanelDataset, PanelRow};
use bcflong::random_effects::{
    global_aux_params, global_scale_params, local_aux_params, local_scale_params, update_horseshoe_global,
    update_horseshoe_local,
};
use bcflong::sampler::{effective_sample_size, run_gibbs, EssEstimate, RePrior, SamplerConfig};
use bcflong::simgen::{gen_semi_synthetic, SemiSyntheticConfig};
use rand::Rng;

fn report(id: &str, name: &str, pass: bool, detail: impl AsRef<str>) -> bool {
    println!(
        "ACCEPTANCE {id} {name}: {} | {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    pass
}

// ---------------------------------------------------------------- 1

/// Posterior mean (TᵀT/σ² + Σ⁻¹)⁻¹ Tᵀy/σ² by explicit 2×2 algebra.
fn gls_posterior_mean(t: &[f64], y: &[f64], cov: [[f64; 2]; 2], sigma2: f64) -> [f64; 2] {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
    let (mut a, mut b, mut c, mut u, mut v) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (ti, yi) in t.iter().zip(y) {
        a += 1.0;
        b += ti;
        c += ti * ti;
        u += yi;
        v += ti * yi;
    }
    let p = [
        [a / sigma2 + inv[0][0], b / sigma2 + inv[0][1]],
        [b / sigma2 + inv[1][0], c / sigma2 + inv[1][1]],
    ];
    let pd = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    let (r0, r1) = (u / sigma2, v / sigma2);
    [(p[1][1] * r0 - p[0][1] * r1) / pd, (-p[1][0] * r0 + p[0][0] * r1) / pd]
}

#[test]
fn c1_conjugate_oracle() {
    let cov: [[f64; 2]; 2] = [[1.0, 0.3], [0.3, 0.5]];
    let sigma2: f64 = 0.09;
    let mut rng = substream(101, 0);
    let mut rows = vec![];
    for s in 0..50 {
        let e1: f64 = bcflong::dist::std_normal(&mut rng);
        let e2: f64 = bcflong::dist::std_normal(&mut rng);
        // Cholesky factor of `cov`.
        let l11 = cov[0][0].sqrt();
        let l21 = cov[1][0] / l11;
        let l22 = (cov[1][1] - l21 * l21).sqrt();
        let a = [l11 * e1, l21 * e1 + l22 * e2];
        let n_obs = 2 + s % 4;
        for j in 0..n_obs {
            let t = j as f64 * 0.6 + 0.1 * rng.random::<f64>();
            rows.push(PanelRow {
                subject: s as i64,
                t,
                y: a[0] + a[1] * t + sigma2.sqrt() * bcflong::dist::std_normal(&mut rng),
                z: if s % 2 == 0 { 0.5 } else { -0.5 },
                k: vec![],
                w: vec![],
                pi: None,
            });
        }
    }
    let d = PanelDataset::from_rows(rows, vec![], vec![]).unwrap();
    let cfg = SamplerConfig {
        max_iter: 6000,
        burn_in: 1000,
        seed: 11,
        re_prior: RePrior::Base,
        mu_forest: ForestConfig::disabled(),
        tau_forest: ForestConfig::disabled(),
        standardize: false,
        include_propensity: false,
        fixed_sigma2: Some(sigma2),
        fixed_re_covariance: Some(cov),
        ..Default::default()
    };
    let p = run_gibbs(&d, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut outside = 0;
    for (s, sub) in d.subjects().iter().enumerate() {
        let r = sub.rows();
        let oracle = gls_posterior_mean(&d.t[r.clone()], &d.y[r], cov, sigma2);
        for k in 0..2 {
            let xs: Vec<f64> = p.alpha.iter().map(|a| a[s][k]).collect();
            let ess = match effective_sample_size(&xs) {
                EssEstimate::Value(v) => v,
                EssEstimate::Degenerate => 1.0,
            };
            let z = (mean(&xs) - oracle[k]).abs() / (sd(&xs) / ess.sqrt());
            worst = worst.max(z);
            if z >= 3.0 {
                outside += 1;
            }
        }
    }
    let pass = outside == 0;
    assert!(report(
        "1",
        "conjugate GLS oracle (50 subjects, 100 components within 3 MC SE)",
        pass,
        format!("max |diff|/MCSE = {worst:.2}, components outside = {outside}")
    ));
}

// ---------------------------------------------------------------- 2

/// Independent inverse-gamma sampler: for shape 1 by inverting
/// F(x) = exp(-b/x); for half-integer shape k/2 as 2b / χ²_k with χ²_k a sum
/// of squared Box-Muller normals.
fn direct_inverse_gamma(rng: &mut impl Rng, shape: f64, rate: f64) -> f64 {
    if shape == 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>();
        return -rate / u.ln();
    }
    let k = (2.0 * shape).round() as usize;
    assert!((k as f64 - 2.0 * shape).abs() < 1e-12, "half-integer shape only");
    let mut chi = 0.0;
    for _ in 0..k {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        chi += z * z;
    }
    2.0 * rate / chi
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    bcflong::dist::quantile_sorted(&s, 0.5)
}

/// Compare draws of IG(shape, rate) against the analytic distribution and
/// the independent sampler. Returns (pass, details).
fn check_ig(draws: &[f64], shape: f64, rate: f64, seed: u64) -> (bool, String) {
    let mut rng = substream(seed, 77);
    let direct: Vec<f64> = (0..draws.len()).map(|_| direct_inverse_gamma(&mut rng, shape, rate)).collect();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let mut ok = true;
    let mut parts = vec![];
    if shape > 1.0 {
        let analytic = rate / (shape - 1.0);
        let e = rel(mean(draws), analytic);
        ok &= e < 0.02;
        parts.push(format!("mean rel err {e:.4}"));
    } else {
        // The mean is infinite for shape 1; the reciprocal is Gamma(1, rate)
        // with mean 1/rate, and the median is rate / ln 2.
        let inv: Vec<f64> = draws.iter().map(|x| 1.0 / x).collect();
        let e = rel(mean(&inv), shape / rate);
        let m = rel(median(draws), rate / std::f64::consts::LN_2);
        ok &= e < 0.02 && m < 0.02;
        parts.push(format!("1/x mean rel err {e:.4}, median rel err {m:.4}"));
    }
    let vs = rel(median(draws), median(&direct));
    ok &= vs < 0.02;
    parts.push(format!("median vs direct sampler {vs:.4}"));
    (ok, parts.join(", "))
}

#[test]
fn c2_horseshoe_conditionals() {
    const N: usize = 100_000;
    let mut all = true;

    // Plug-in parameters.
    let exact = [
        ("lambda2 rate (alpha=2, rho=1, v=1)", local_scale_params(2.0, 1.0, 1.0), (1.0, 3.0)),
        ("lambda2 rate (alpha=0, v=1)", local_scale_params(0.0, 1.0, 1.0), (1.0, 1.0)),
        ("v rate (a_lambda=1, lambda2=1)", local_aux_params(1.0, 1.0), (1.0, 2.0)),
        (
            "rho2 (N=4, alpha/lambda=1, xi=1)",
            global_scale_params(&[[1.0, 1.0]; 4], &[[1.0, 1.0]; 4], 1.0, 0),
            (2.5, 3.0),
        ),
        (
            "rho2 shape (N=3)",
            global_scale_params(&[[0.0, 0.0]; 3], &[[1.0, 1.0]; 3], 1.0, 1),
            (2.0, 1.0),
        ),
        ("xi rate (a_rho=1, rho2=1)", global_aux_params(1.0, 1.0), (1.0, 2.0)),
    ];
    for (name, got, want) in exact {
        let ok = got == want;
        all &= report("2", &format!("plug-in {name}"), ok, format!("got {got:?}, want {want:?}"));
    }

    // λ² through the local update on N identical subjects with fixed inputs.
    let (alpha, rho2, v, a_lambda) = ([0.8, -1.5], [0.5, 2.0], [1.3, 0.4], 1.0);
    let alphas = vec![alpha; N];
    let vs = vec![v; N];
    let mut rng = substream(202, 0);
    let (lambda2, _) = update_horseshoe_local(&alphas, &rho2, &vs, a_lambda, &mut rng);
    for d in 0..2 {
        let (shape, rate) = local_scale_params(alpha[d], rho2[d], v[d]);
        let draws: Vec<f64> = lambda2.iter().map(|l| l[d]).collect();
        let (ok, det) = check_ig(&draws, shape, rate, 10 + d as u64);
        all &= report("2", &format!("lambda2 conditional d={}", d + 1), ok, det);
    }

    // v | λ² fixed.
    let lambda_fixed = 0.7;
    let (shape, rate) = local_aux_params(a_lambda, lambda_fixed);
    let mut rng = substream(203, 0);
    let draws: Vec<f64> = (0..N).map(|_| inverse_gamma(&mut rng, shape, rate)).collect();
    let (ok, det) = check_ig(&draws, shape, rate, 20);
    all &= report("2", "v conditional", ok, det);

    // ρ² through the global update, repeated with fixed inputs (N = 50).
    let mut rng = substream(204, 0);
    let alpha50: Vec<[f64; 2]> = (0..50).map(|_| [rng.random::<f64>() - 0.5, 2.0 * rng.random::<f64>()]).collect();
    let lam50: Vec<[f64; 2]> = (0..50).map(|_| [0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>()]).collect();
    let xi = [0.9, 1.7];
    let a_rho = 0.6;
    let mut rho_draws = [vec![], vec![]];
    for _ in 0..N {
        let (r, _) = update_horseshoe_global(&alpha50, &lam50, &xi, a_rho, &mut rng);
        rho_draws[0].push(r[0]);
        rho_draws[1].push(r[1]);
    }
    for d in 0..2 {
        let (shape, rate) = global_scale_params(&alpha50, &lam50, xi[d], d);
        let (ok, det) = check_ig(&rho_draws[d], shape, rate, 30 + d as u64);
        all &= report("2", &format!("rho2 conditional d={} (shape {shape})", d + 1), ok, det);
    }

    // ξ | ρ² fixed.
    let (shape, rate) = global_aux_params(a_rho, 0.35);
    let mut rng = substream(205, 0);
    let draws: Vec<f64> = (0..N).map(|_| inverse_gamma(&mut rng, shape, rate)).collect();
    let (ok, det) = check_ig(&draws, shape, rate, 40);
    all &= report("2", "xi conditional", ok, det);

    assert!(report("2", "horseshoe conditionals (all checks)", all, ""));
}

// ---------------------------------------------------------------- 3

/// Prior distribution of the number of leaves of a tree whose node at depth
/// d splits with probability η(1+d)^-β, by recursion over depth.
fn prior_leaf_distribution(eta: f64, beta: f64, max_leaves: usize) -> Vec<f64> {
    fn rec(d: u32, eta: f64, beta: f64, m: usize) -> Vec<f64> {
        let p = if d > 40 { 0.0 } else { eta * (1.0 + d as f64).powf(-beta) };
        let mut out = vec![0.0; m + 1];
        out[1] = 1.0 - p;
        if p > 0.0 {
            let child = rec(d + 1, eta, beta, m);
            for i in 1..=m {
                for j in 1..=m - i {
                    out[i + j] += p * child[i] * child[j];
                }
            }
        }
        out
    }
    rec(0, eta, beta, max_leaves)
}

fn buckets(dist: &[f64]) -> [f64; 5] {
    [dist[1], dist[2], dist[3], dist[4], 1.0 - dist[1] - dist[2] - dist[3] - dist[4]]
}

#[test]
fn c3_tree_prior_calibration() {
    let oracle = buckets(&prior_leaf_distribution(0.95, 2.0, 60));
    let reference = [0.05, 0.55, 0.28, 0.09, 0.03];
    let mut rng = substream(303, 0);
    let n = 100;
    let x = ColMatrix::from_columns((0..3).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect());
    let mut f = Forest::new(ForestConfig::prognostic().with_trees(100), &x).unwrap();
    let mut cache = TrainingCache::new(&f, &x).unwrap();
    let target = vec![0.0; n];
    let flat = vec![0.0; n];
    let mut counts = [0usize; 5];
    let mut total = 0;
    for sweep in 0..1100 {
        backfit_sweep(&mut f, &mut cache, &target, Some(&flat), 1.0, &mut rng);
        if sweep >= 100 && sweep % 5 == 0 {
            for t in &f.trees {
                counts[(t.n_leaves() - 1).min(4)] += 1;
                total += 1;
            }
        }
    }
    let emp: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let worst_ref = emp.iter().zip(reference).map(|(e, p)| (e - p).abs()).fold(0.0, f64::max);
    let worst_oracle = emp.iter().zip(oracle).map(|(e, p)| (e - p).abs()).fold(0.0, f64::max);
    let pass = worst_ref <= 0.03;
    assert!(report(
        "3",
        "tree-size prior calibration",
        pass,
        format!(
            "{total} trees; empirical {:?}; reference {reference:?}; recursion {:?}; max dev reference {worst_ref:.4}, recursion {worst_oracle:.4}",
            emp.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            oracle.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        )
    ));
}

// ---------------------------------------------------------------- 4-6

fn study_dir() -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run_study(plan: &ReplicationPlan, tag: &str) -> MetricsReport {
    let r = run_replication_study(plan).unwrap();
    let dir = study_dir();
    r.write_csv(&dir.join(format!("{tag}_metrics.csv"))).unwrap();
    r.write_fits_csv(&dir.join(format!("{tag}_fits.csv"))).unwrap();
    for row in &r.rows {
        println!(
            "  {tag} sparsity={} {} {} = {:.4} (se {:.4}, n={})",
            row.sparsity,
            row.variant.label(),
            row.metric,
            row.mean,
            row.stderr,
            row.n_reps
        );
    }
    r
}

fn metric(r: &MetricsReport, s: f64, v: Variant, m: &str) -> f64 {
    r.get(s, v, m).unwrap_or_else(|| panic!("missing {m} for {v:?}")).mean
}

fn within_half(got: f64, reference: f64) -> bool {
    (got - reference).abs() <= 0.5 * reference
}

#[test]
#[ignore = "replication study: ~25 min in release mode"]
fn c4_fully_synthetic_high_sparsity() {
    let plan = ReplicationPlan::fully_synthetic(vec![0.75], 20, 4004);
    let r = run_study(&plan, "c4");
    let (s, b) = (Variant::Sparse, Variant::Base);
    let g_s = metric(&r, 0.75, s, "param_gamma_rmse");
    let g_b = metric(&r, 0.75, b, "param_gamma_rmse");
    let w_s = metric(&r, 0.75, s, "pred_gamma_width");
    let w_b = metric(&r, 0.75, b, "pred_gamma_width");
    let order = report(
        "4a",
        "fully synthetic 75% sparsity orderings",
        g_s < g_b && w_s < 0.7 * w_b,
        format!("gamma RMSE S {g_s:.3} vs B {g_b:.3}; gamma CI width S {w_s:.3} vs 0.7*B {:.3}", 0.7 * w_b),
    );
    let mags = report(
        "4b",
        "fully synthetic 75% sparsity magnitudes within 50% of reference values",
        within_half(g_s, 0.08) && within_half(g_b, 0.13) && within_half(w_s, 0.46) && within_half(w_b, 0.99),
        format!("gamma RMSE S {g_s:.3}/0.08, B {g_b:.3}/0.13; width S {w_s:.3}/0.46, B {w_b:.3}/0.99"),
    );
    assert!(order && mags);
}

#[test]
#[ignore = "replication study: ~6 h in release mode on one core"]
fn c5_semi_synthetic_high_sparsity() {
    let plan = ReplicationPlan::semi_synthetic(vec![0.75], 20, 5005);
    let r = run_study(&plan, "c5");
    let p = |v| metric(&r, 0.75, v, "pred_tau_pehe");
    let (ps, pb, pv) = (p(Variant::Sparse), p(Variant::Base), p(Variant::Vanilla));
    let cov = metric(&r, 0.75, Variant::Sparse, "pred_Y_coverage");
    let order = report(
        "5a",
        "semi-synthetic 75% sparsity PEHE ordering S < B < vanilla",
        ps < pb && pb < pv,
        format!("held-out PEHE S {ps:.3}, B {pb:.3}, vanilla {pv:.3}"),
    );
    let band = report(
        "5b",
        "semi-synthetic S held-out Y coverage in [0.85, 0.99]",
        (0.85..=0.99).contains(&cov),
        format!("coverage {cov:.3}"),
    );
    assert!(order && band);
}

#[test]
#[ignore = "replication study: ~25 min in release mode"]
fn c6_fully_synthetic_no_sparsity() {
    let plan = ReplicationPlan::fully_synthetic(vec![0.0], 20, 6006);
    let r = run_study(&plan, "c6");
    let ys = metric(&r, 0.0, Variant::Sparse, "pred_Y_rmse");
    let yb = metric(&r, 0.0, Variant::Base, "pred_Y_rmse");
    assert!(report(
        "6",
        "no-sparsity robustness: S held-out Y RMSE within 10% of B",
        (ys - yb).abs() <= 0.10 * yb,
        format!("S {ys:.3} vs B {yb:.3} (ratio {:.3})", ys / yb),
    ));
}

// ---------------------------------------------------------------- 7

#[test]
fn c7_estimand_identities() {
    let (d, _) = gen_semi_synthetic(
        &SemiSyntheticConfig {
            n_rows: 400,
            sparsity: 0.5,
            seed: 7,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let cfg = SamplerConfig {
        max_iter: 300,
        burn_in: 100,
        seed: 7,
        mu_forest: ForestConfig::prognostic().with_trees(30),
        tau_forest: ForestConfig::treatment().with_trees(15),
        ..Default::default()
    };
    let p = run_gibbs(&d, &cfg).unwrap();
    let mut rng = substream(707, 0);
    let mut worst: f64 = 0.0;
    let mut long_zero = true;
    for _ in 0..100 {
        let s = rng.random_range(0..d.n_subjects());
        let t = 2.0 * rng.random::<f64>();
        let id = d.subjects()[s].id;
        let hi = counterfactual_draws(&p, &d, id, 0.5, &[t]).unwrap();
        let lo = counterfactual_draws(&p, &d, id, -0.5, &[t]).unwrap();
        let tau = tau_draws(&p, d.subject_w(s), t).unwrap();
        for k in 0..tau.len() {
            worst = worst.max((hi[0][k] - lo[0][k] - tau[k]).abs());
        }
        long_zero &= longitudinal_draws(&p, d.subject_w(s), t, t).unwrap().iter().all(|&v| v == 0.0);
    }
    let pass = worst <= 1e-10 && long_zero;
    assert!(report(
        "7",
        "estimand identities",
        pass,
        format!("max |cf(+) - cf(-) - tau| = {worst:.2e} over 100 subject/time pairs; longitudinal(t,t) == 0: {long_zero}")
    ));
}

// ---------------------------------------------------------------- 8

#[test]
#[ignore = "fails: |after| < 0.05 is within sampling noise even with the true mu (see README)"]
fn c8_harmonization_flattening() {
    let (d, truth) = gen_semi_synthetic(
        &SemiSyntheticConfig {
            sparsity: 0.5,
            seed: 8,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let cfg = SamplerConfig {
        max_iter: 1500,
        burn_in: 500,
        seed: 8,
        store_tau_forests: false,
        ..Default::default()
    };
    let p = run_gibbs(&d, &cfg).unwrap();
    let h = harmonize(&p, &d).unwrap();
    let pass = h.slope_after.abs() < 0.05 && h.slope_before.abs() > 0.3;
    // Same statistic with the true prognostic effect in place of the estimate.
    let slope = |x: &[f64], y: &[f64]| {
        let (mx, my) = (x.iter().sum::<f64>() / x.len() as f64, y.iter().sum::<f64>() / y.len() as f64);
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        sxy / sxx
    };
    let oracle_after = slope(&truth.mu, &d.y) - 1.0;
    assert!(report(
        "8",
        "harmonization flattening",
        pass,
        format!(
            "slope before {:.4}, after {:.4}; with true mu the after-slope is {:.4}",
            h.slope_before, h.slope_after, oracle_after
        )
    ));
}

// ---------------------------------------------------------------- 9

fn cli(args: &[&str]) {
    let mut argv = vec!["bcflong"];
    argv.extend_from_slice(args);
    assert_eq!(bcflong_cli::run_command(argv), 0, "command failed: {args:?}");
}

/// Every numeric artifact (all files except run manifests and the resolved
/// config, which record paths and timings) keyed by relative path.
fn numeric_outputs(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let name = p.file_name().unwrap().to_string_lossy().to_string();
                if name != "manifest.json" && name != "run.conf" {
                    let rel = p.strip_prefix(root).unwrap().display().to_string();
                    out.insert(rel, std::fs::read(&p).unwrap());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn pipeline(root: &Path) {
    let s = |p: &str| root.join(p).display().to_string();
    let data = s("sim/data.csv");
    let draws = s("fit/draws");
    let (fit_out, fit2_out) = (s("fit"), s("fit2"));
    let small = ["--iterations", "80", "--burn-in", "20", "--set", "mu_trees=10", "--set", "tau_trees=5"];
    cli(&["simulate", "--preset", "semi-synthetic", "--sparsity", "0.5", "--seed", "9", "--set", "n_rows=200", "--out", &s("sim")]);
    let mut fit = vec!["fit", "--data", &data, "--seed", "9", "--out", &fit_out, "--set", "store_fits=true"];
    fit.extend_from_slice(&small);
    cli(&fit);
    let mut fit2 = vec!["fit", "--data", &data, "--seed", "9", "--chains", "2", "--out", &fit2_out];
    fit2.extend_from_slice(&small);
    cli(&fit2);
    cli(&["effects", "--data", &data, "--draws", &draws, "--t", "1", "--t", "2", "--out", &s("effects")]);
    cli(&["predict", "--data", &data, "--draws", &draws, "--subject", "3", "--t", "0.5", "--t", "1.5", "--out", &s("predict")]);
    cli(&["harmonize", "--data", &data, "--draws", &draws, "--out", &s("harmonize")]);
    cli(&["diagnostics", "--draws", &draws, "--out", &s("diagnostics")]);
    cli(&[
        "replicate", "--preset", "fully-synthetic", "--sparsity", "0,0.5", "--reps", "2", "--iterations", "40", "--burn-in", "10",
        "--set", "n_subjects=20", "--set", "mu_trees=5", "--workers", "2", "--out", &s("replicate"),
    ]);
}

#[test]
fn c9_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (oa, ob) = (numeric_outputs(a.path()), numeric_outputs(b.path()));
    let differing: Vec<&String> = oa.keys().filter(|k| oa.get(*k) != ob.get(*k)).collect();
    let same_set = oa.keys().eq(ob.keys());
    let pass = same_set && differing.is_empty() && oa.len() > 20;
    assert!(report(
        "9",
        "determinism: every subcommand twice, byte-identical numeric outputs",
        pass,
        format!("{} files compared; differing: {differing:?}", oa.len())
    ));
}
