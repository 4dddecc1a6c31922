//! Per-subject random intercepts and slopes with their two priors:
//! a Gaussian prior whose covariance carries an inverse-Wishart hyperprior,
//! and a horseshoe prior written as an inverse-gamma scale mixture so every
//! conditional is conjugate.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dist::{inverse_gamma, inverse_wishart2, mvn2, symmetrize, ChainRng};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Random-effect coefficients, one (intercept, slope) pair per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectState {
    pub alpha: Vec<[f64; 2]>,
}

impl RandomEffectState {
    pub fn zeros(n_subjects: usize) -> Self {
        Self {
            alpha: vec![[0.0; 2]; n_subjects],
        }
    }

    /// γ_ij = α_i1 + α_i2 t_ij for every row of `d`.
    pub fn contribution(&self, d: &PanelDataset) -> Result<Vec<f64>> {
        random_contribution(&self.alpha, d)
    }
}

/// γ_ij = α_i1 + α_i2 t_ij.
pub fn random_contribution(alpha: &[[f64; 2]], d: &PanelDataset) -> Result<Vec<f64>> {
    if alpha.len() != d.n_subjects() {
        return Err(Error::Dimension {
            expected: d.n_subjects(),
            got: alpha.len(),
        });
    }
    Ok(d.row_subjects()
        .iter()
        .zip(&d.t)
        .map(|(&s, &t)| alpha[s][0] + alpha[s][1] * t)
        .collect())
}

/// Prior covariance of α_i.
#[derive(Debug, Clone, Copy)]
pub enum PriorCovariance<'a> {
    Shared(&'a Matrix2<f64>),
    /// Diagonal variances per subject.
    Diagonal(&'a [[f64; 2]]),
}

impl PriorCovariance<'_> {
    fn precision(&self, s: usize) -> Matrix2<f64> {
        match self {
            PriorCovariance::Shared(c) => symmetrize(
                &c.try_inverse()
                    .expect("prior covariance must be positive definite"),
            ),
            PriorCovariance::Diagonal(v) => {
                Matrix2::new(1.0 / v[s][0], 0.0, 0.0, 1.0 / v[s][1])
            }
        }
    }
}

/// Per-subject sums Σ TᵀT and Σ Tᵀ r with T_ij = (1, t_ij).
fn subject_moments(d: &PanelDataset, s: usize, r: &[f64]) -> (Matrix2<f64>, Vector2<f64>) {
    let mut n = 0.0;
    let mut st = 0.0;
    let mut stt = 0.0;
    let mut sr = 0.0;
    let mut str_ = 0.0;
    for i in d.subjects()[s].rows() {
        let t = d.t[i];
        n += 1.0;
        st += t;
        stt += t * t;
        sr += r[i];
        str_ += t * r[i];
    }
    (Matrix2::new(n, st, st, stt), Vector2::new(sr, str_))
}

/// Mean and covariance of α_i | r, σ², prior covariance:
/// precision Ψ⁻¹ = σ⁻² Σ TᵀT + Σ_α⁻¹, mean Ψ σ⁻² Σ Tᵀ r.
pub fn alpha_conditional(
    d: &PanelDataset,
    s: usize,
    r: &[f64],
    prior: PriorCovariance<'_>,
    sigma2: f64,
) -> (Vector2<f64>, Matrix2<f64>) {
    let (tt, tr) = subject_moments(d, s, r);
    let precision = tt / sigma2 + prior.precision(s);
    let cov = symmetrize(
        &precision
            .try_inverse()
            .expect("posterior precision is positive definite"),
    );
    (cov * (tr / sigma2), cov)
}

/// Independent bivariate-normal draw of every α_i from its conditional.
pub fn draw_alpha(
    r_alpha: &[f64],
    d: &PanelDataset,
    prior: PriorCovariance<'_>,
    sigma2: f64,
    rng: &mut ChainRng,
) -> Result<RandomEffectState> {
    if r_alpha.len() != d.n_rows() {
        return Err(Error::Dimension {
            expected: d.n_rows(),
            got: r_alpha.len(),
        });
    }
    let alpha = (0..d.n_subjects())
        .map(|s| {
            let (m, c) = alpha_conditional(d, s, r_alpha, prior, sigma2);
            let a = mvn2(rng, &m, &c);
            [a[0], a[1]]
        })
        .collect();
    Ok(RandomEffectState { alpha })
}

/// Gaussian prior α_i ~ N(0, Σ_B) with Σ_B ~ IW(ν, Λ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianREPrior {
    pub sigma_b: [[f64; 2]; 2],
    pub nu: f64,
    pub scale: [[f64; 2]; 2],
}

impl Default for GaussianREPrior {
    fn default() -> Self {
        Self {
            sigma_b: [[1.0, 0.0], [0.0, 1.0]],
            nu: 2.0,
            scale: [[1.0, 0.0], [0.0, 1.0]],
        }
    }
}

pub fn to_mat(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

pub fn from_mat(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

impl GaussianREPrior {
    pub fn sigma_b(&self) -> Matrix2<f64> {
        to_mat(&self.sigma_b)
    }

    /// Degrees of freedom and scale of Σ_B's conditional: IW(ν + N, Λ + Σ α αᵀ).
    pub fn posterior_params(&self, alpha: &[[f64; 2]]) -> (f64, Matrix2<f64>) {
        let mut s = to_mat(&self.scale);
        for a in alpha {
            let v = Vector2::new(a[0], a[1]);
            s += v * v.transpose();
        }
        (self.nu + alpha.len() as f64, s)
    }
}

pub fn update_base_covariance(
    state: &RandomEffectState,
    prior: &GaussianREPrior,
    rng: &mut ChainRng,
) -> GaussianREPrior {
    let (df, scale) = prior.posterior_params(&state.alpha);
    GaussianREPrior {
        sigma_b: from_mat(&inverse_wishart2(rng, df, &scale)),
        ..*prior
    }
}

/// Hyperprior on the global scale: ρ_d ~ C⁺(0, a).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GlobalScaleMode {
    /// a = 1.
    Unit,
    /// a = σ².
    SigmaScaled,
    /// a = ρ₀² with ρ₀ from a prior guess `n0` of the non-zero count.
    Rho0 { n0: f64 },
}

impl GlobalScaleMode {
    /// Resolve `a` for the current σ², subject count and row count.
    pub fn resolve(&self, sigma2: f64, n_subjects: usize, n_rows: usize) -> Result<f64> {
        match *self {
            GlobalScaleMode::Unit => Ok(1.0),
            GlobalScaleMode::SigmaScaled => Ok(sigma2),
            GlobalScaleMode::Rho0 { n0 } => {
                let r = compute_rho0(n0, n_subjects, n_rows, sigma2.sqrt())?;
                Ok(r * r)
            }
        }
    }
}

impl std::str::FromStr for GlobalScaleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Self::Unit),
            "sigma" | "sigma-scaled" => Ok(Self::SigmaScaled),
            _ => match s.strip_prefix("rho0:") {
                Some(n0) => n0
                    .parse()
                    .map(|n0| Self::Rho0 { n0 })
                    .map_err(|_| Error::Config(format!("bad N0 in `{s}`"))),
                None => Err(Error::Config(format!("unknown global-scale mode `{s}`"))),
            },
        }
    }
}

impl std::fmt::Display for GlobalScaleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GlobalScaleMode::Unit => write!(f, "unit"),
            GlobalScaleMode::SigmaScaled => write!(f, "sigma-scaled"),
            GlobalScaleMode::Rho0 { n0 } => write!(f, "rho0:{n0}"),
        }
    }
}

/// ρ₀ = N0 / (N − N0) · σ / √L.
pub fn compute_rho0(n0: f64, n_subjects: usize, n_rows: usize, sigma: f64) -> Result<f64> {
    let n = n_subjects as f64;
    if !(n0 > 0.0 && n0 < n) {
        return Err(Error::Config(format!(
            "prior non-zero count N0 = {n0} must lie in (0, N = {n})"
        )));
    }
    if n_rows == 0 || !(sigma > 0.0) {
        return Err(Error::Config("rho0 needs L > 0 and sigma > 0".into()));
    }
    Ok(n0 / (n - n0) * sigma / (n_rows as f64).sqrt())
}

/// Horseshoe hierarchy in scale-mixture form. Squares are stored since the
/// conditionals are inverse-gamma in λ² and ρ².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeState {
    pub lambda2: Vec<[f64; 2]>,
    pub v: Vec<[f64; 2]>,
    pub rho2: [f64; 2],
    pub xi: [f64; 2],
    pub a_lambda: f64,
    pub mode: GlobalScaleMode,
}

impl HorseshoeState {
    /// All scales and auxiliaries start at one.
    pub fn new(n_subjects: usize, mode: GlobalScaleMode) -> Self {
        Self {
            lambda2: vec![[1.0; 2]; n_subjects],
            v: vec![[1.0; 2]; n_subjects],
            rho2: [1.0; 2],
            xi: [1.0; 2],
            a_lambda: 1.0,
            mode,
        }
    }

    /// Σ_α^S = diag(ρ₁² λ_i1², ρ₂² λ_i2²) per subject.
    pub fn prior_variances(&self) -> Vec<[f64; 2]> {
        self.lambda2
            .iter()
            .map(|l| [self.rho2[0] * l[0], self.rho2[1] * l[1]])
            .collect()
    }

    pub fn rho(&self) -> [f64; 2] {
        [self.rho2[0].sqrt(), self.rho2[1].sqrt()]
    }

    pub fn lambda(&self) -> Vec<[f64; 2]> {
        self.lambda2
            .iter()
            .map(|l| [l[0].sqrt(), l[1].sqrt()])
            .collect()
    }
}

/// Shape and rate of λ²_id | ·: IG(1, 1/v_id + α²_id / (2ρ²_d)).
pub fn local_scale_params(alpha: f64, rho2: f64, v: f64) -> (f64, f64) {
    (1.0, 1.0 / v + alpha * alpha / (2.0 * rho2))
}

/// Shape and rate of v_id | ·: IG(1, 1/a_λ² + 1/λ²_id).
pub fn local_aux_params(a_lambda: f64, lambda2: f64) -> (f64, f64) {
    (1.0, 1.0 / (a_lambda * a_lambda) + 1.0 / lambda2)
}

/// Shape and rate of ρ²_d | ·: IG((N+1)/2, 1/ξ_d + ½ Σ_i α²_id / λ²_id).
pub fn global_scale_params(alpha: &[[f64; 2]], lambda2: &[[f64; 2]], xi: f64, d: usize) -> (f64, f64) {
    let n = alpha.len() as f64;
    let ss: f64 = alpha
        .iter()
        .zip(lambda2)
        .map(|(a, l)| a[d] * a[d] / l[d])
        .sum();
    ((n + 1.0) / 2.0, 1.0 / xi + 0.5 * ss)
}

/// Shape and rate of ξ_d | ·: IG(1, 1/a_ρ² + 1/ρ²_d).
pub fn global_aux_params(a_rho: f64, rho2: f64) -> (f64, f64) {
    (1.0, 1.0 / (a_rho * a_rho) + 1.0 / rho2)
}

/// Draw λ² then v for every subject and component.
pub fn update_horseshoe_local(
    alpha: &[[f64; 2]],
    rho2: &[f64; 2],
    v: &[[f64; 2]],
    a_lambda: f64,
    rng: &mut ChainRng,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut lambda2 = Vec::with_capacity(alpha.len());
    let mut v_new = Vec::with_capacity(alpha.len());
    for (a, vi) in alpha.iter().zip(v) {
        let mut l = [0.0; 2];
        let mut w = [0.0; 2];
        for d in 0..2 {
            let (shape, rate) = local_scale_params(a[d], rho2[d], vi[d]);
            l[d] = inverse_gamma(rng, shape, rate);
            let (shape, rate) = local_aux_params(a_lambda, l[d]);
            w[d] = inverse_gamma(rng, shape, rate);
        }
        lambda2.push(l);
        v_new.push(w);
    }
    (lambda2, v_new)
}

/// Draw ρ² then ξ for both components.
pub fn update_horseshoe_global(
    alpha: &[[f64; 2]],
    lambda2: &[[f64; 2]],
    xi: &[f64; 2],
    a_rho: f64,
    rng: &mut ChainRng,
) -> ([f64; 2], [f64; 2]) {
    let mut rho2 = [0.0; 2];
    let mut xi_new = [0.0; 2];
    for d in 0..2 {
        let (shape, rate) = global_scale_params(alpha, lambda2, xi[d], d);
        rho2[d] = inverse_gamma(rng, shape, rate);
        let (shape, rate) = global_aux_params(a_rho, rho2[d]);
        xi_new[d] = inverse_gamma(rng, shape, rate);
    }
    (rho2, xi_new)
}

/// One horseshoe hyperparameter sweep after α has been drawn: λ², v, then
/// ρ², ξ.
pub fn update_horseshoe(
    state: &mut HorseshoeState,
    alpha: &[[f64; 2]],
    sigma2: f64,
    n_rows: usize,
    rng: &mut ChainRng,
) -> Result<()> {
    let (lambda2, v) = update_horseshoe_local(alpha, &state.rho2, &state.v, state.a_lambda, rng);
    state.lambda2 = lambda2;
    state.v = v;
    let a_rho = state.mode.resolve(sigma2, alpha.len(), n_rows)?;
    let (rho2, xi) = update_horseshoe_global(alpha, &state.lambda2, &state.xi, a_rho, rng);
    state.rho2 = rho2;
    state.xi = xi;
    Ok(())
}
