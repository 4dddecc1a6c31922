//! Sampling primitives shared by the Gibbs stages.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

/// Random stream used everywhere in the sampler.
pub type ChainRng = ChaCha8Rng;

/// Smallest variance any inverse-gamma draw may return.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Seeded stream `stream` of the generator family rooted at `seed`.
pub fn substream(seed: u64, stream: u64) -> ChainRng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser; derives child seeds from a parent seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw from IG(shape, rate), i.e. `rate / Gamma(shape, 1)`, floored at
/// [`VARIANCE_FLOOR`].
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0, "IG({shape}, {rate})");
    let g: f64 = Gamma::new(shape, 1.0)
        .expect("positive gamma shape")
        .sample(rng);
    (rate / g).max(VARIANCE_FLOOR)
}

/// Scaled inverse chi-squared with `df` degrees of freedom and scale `s2`.
pub fn scaled_inv_chi2<R: Rng + ?Sized>(rng: &mut R, df: f64, s2: f64) -> f64 {
    inverse_gamma(rng, df / 2.0, df * s2 / 2.0)
}

/// Cholesky factor of a symmetric positive definite 2x2 matrix.
pub fn chol2(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let a = m[(0, 0)];
    if a <= 0.0 || !a.is_finite() {
        return None;
    }
    let l11 = a.sqrt();
    let l21 = m[(1, 0)] / l11;
    let d = m[(1, 1)] - l21 * l21;
    if d <= 0.0 || !d.is_finite() {
        return None;
    }
    Some(Matrix2::new(l11, 0.0, l21, d.sqrt()))
}

/// Bivariate normal draw with mean `mean` and covariance `cov`.
pub fn mvn2<R: Rng + ?Sized>(rng: &mut R, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Vector2<f64> {
    let l = chol2(cov).expect("covariance must be positive definite");
    let z = Vector2::new(std_normal(rng), std_normal(rng));
    mean + l * z
}

/// Wishart(df, scale) draw via the Bartlett decomposition.
pub fn wishart2<R: Rng + ?Sized>(rng: &mut R, df: f64, scale: &Matrix2<f64>) -> Matrix2<f64> {
    let l = chol2(scale).expect("Wishart scale must be positive definite");
    let c1: f64 = ChiSquared::new(df).expect("df > 0").sample(rng);
    let c2: f64 = ChiSquared::new(df - 1.0).expect("df > 1").sample(rng);
    let a = Matrix2::new(c1.sqrt(), 0.0, std_normal(rng), c2.sqrt());
    let la = l * a;
    la * la.transpose()
}

/// Inverse-Wishart(df, scale) draw: the inverse of Wishart(df, scale⁻¹).
pub fn inverse_wishart2<R: Rng + ?Sized>(
    rng: &mut R,
    df: f64,
    scale: &Matrix2<f64>,
) -> Matrix2<f64> {
    let inv = scale
        .try_inverse()
        .expect("inverse-Wishart scale must be invertible");
    let w = wishart2(rng, df, &symmetrize(&inv));
    symmetrize(&w.try_inverse().expect("Wishart draw is positive definite"))
}

pub fn symmetrize(m: &Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty slice");
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}
