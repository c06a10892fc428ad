//! Bit-cost estimate of inter-frame attribute residuals under a learned
//! per-attribute Gaussian model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SIGMA_MIN: f64 = 1e-4;
/// Probability floor applied before taking logarithms.
pub const P_MIN: f64 = 1e-9;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Uniform rounding noise on quantized residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Off,
    /// U(-1/2, 1/2) from a ChaCha8 stream with this seed.
    Seeded(u64),
}

/// Number of quantization regions for a `bits`-deep lattice.
pub fn default_regions(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBatch {
    /// `y_t - y_prev`.
    pub delta: Vec<f64>,
    /// Normalized residuals with optional noise.
    pub quantized: Vec<f64>,
    /// `d quantized / d y_t`, i.e. `regions / (max - min)`.
    pub scale: f64,
}

/// Normalizes residuals onto `regions` quantization steps and optionally adds rounding noise.
pub fn residual_quantize(
    y_t: &[f64],
    y_prev: &[f64],
    min: f64,
    max: f64,
    regions: u32,
    noise: Noise,
) -> Result<ResidualBatch> {
    if y_t.len() != y_prev.len() {
        return Err(Error::LengthMismatch(y_t.len(), y_prev.len()));
    }
    if regions < 2 {
        return Err(Error::invalid("need at least 2 quantization regions"));
    }
    if !(max > min) || !(max - min).is_finite() {
        return Err(Error::invalid(format!("zero or invalid residual range [{min}, {max}]")));
    }
    let scale = regions as f64 / (max - min);
    let delta: Vec<f64> = y_t.iter().zip(y_prev).map(|(a, b)| a - b).collect();
    let mut rng = match noise {
        Noise::Off => None,
        Noise::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let quantized = delta
        .iter()
        .map(|d| {
            let u = rng.as_mut().map_or(0.0, |r| r.gen_range(-0.5..0.5));
            (d - min) * scale + u
        })
        .collect();
    Ok(ResidualBatch {
        delta,
        quantized,
        scale,
    })
}

/// Learnable location/spread of one attribute's residual distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyModel {
    pub params: Vec<GaussianParams>,
}

impl EntropyModel {
    pub fn new(params: Vec<GaussianParams>) -> Self {
        EntropyModel { params }
    }

    /// Fits each attribute's μ and σ to the sample mean and deviation.
    pub fn fit(residuals: &[&[f64]]) -> Self {
        let params = residuals
            .iter()
            .map(|r| {
                let n = r.len().max(1) as f64;
                let mu = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                GaussianParams {
                    mu,
                    sigma: var.sqrt().max(SIGMA_MIN),
                }
            })
            .collect();
        EntropyModel { params }
    }

    /// Projects every σ back onto `[SIGMA_MIN, ∞)`.
    pub fn clamp_sigma(&mut self) {
        for p in &mut self.params {
            p.sigma = p.sigma.max(SIGMA_MIN);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyLoss {
    /// Mean bits per splat.
    pub bits: f64,
    /// `d bits / d residual`, shaped like the input.
    pub grad_residuals: Vec<Vec<f64>>,
    pub grad_mu: Vec<f64>,
    pub grad_sigma: Vec<f64>,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * INV_SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `Φ(a) - Φ(b)` for `a > b`, evaluated on the tail that avoids cancellation.
fn cdf_difference(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        0.5 * (libm::erfc(b * INV_SQRT_2) - libm::erfc(a * INV_SQRT_2))
    } else {
        normal_cdf(a) - normal_cdf(b)
    }
}

/// Probability mass of the unit bin around `y` under N(μ, σ²), floored at [`P_MIN`].
pub fn bin_probability(y: f64, mu: f64, sigma: f64) -> f64 {
    let a = (y + 0.5 - mu) / sigma;
    let b = (y - 0.5 - mu) / sigma;
    cdf_difference(a, b).max(P_MIN)
}

/// Mean bits per splat of `residuals[attribute][element]`, with analytic gradients.
pub fn entropy_loss(residuals: &[&[f64]], model: &EntropyModel, splat_count: usize) -> Result<EntropyLoss> {
    if residuals.is_empty() || residuals.iter().all(|r| r.is_empty()) || splat_count == 0 {
        return Err(Error::invalid("entropy loss of an empty batch"));
    }
    if residuals.len() != model.params.len() {
        return Err(Error::LengthMismatch(residuals.len(), model.params.len()));
    }
    let n = splat_count as f64;
    let ln2 = std::f64::consts::LN_2;
    let mut bits = 0.0;
    let mut grad_residuals = Vec::with_capacity(residuals.len());
    let mut grad_mu = Vec::with_capacity(residuals.len());
    let mut grad_sigma = Vec::with_capacity(residuals.len());
    for (values, p) in residuals.iter().zip(&model.params) {
        if !(p.sigma >= SIGMA_MIN) {
            return Err(Error::invalid(format!("sigma {} below {SIGMA_MIN}", p.sigma)));
        }
        let mut g_y = Vec::with_capacity(values.len());
        let mut g_mu = 0.0;
        let mut g_sigma = 0.0;
        for &y in values.iter() {
            let a = (y + 0.5 - p.mu) / p.sigma;
            let b = (y - 0.5 - p.mu) / p.sigma;
            let raw = cdf_difference(a, b);
            if raw < P_MIN {
                bits += -P_MIN.log2();
                g_y.push(0.0);
                continue;
            }
            bits += -raw.log2();
            let (pa, pb) = (normal_pdf(a), normal_pdf(b));
            // d(-log2 P)/dθ = -(dP/dθ) / (P ln 2)
            let k = -1.0 / (raw * ln2 * n);
            g_y.push(k * (pa - pb) / p.sigma);
            g_mu += k * -(pa - pb) / p.sigma;
            g_sigma += k * -(pa * a - pb * b) / p.sigma;
        }
        grad_residuals.push(g_y);
        grad_mu.push(g_mu);
        grad_sigma.push(g_sigma);
    }
    Ok(EntropyLoss {
        bits: bits / n,
        grad_residuals,
        grad_mu,
        grad_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_bin_at_zero() {
        // Φ(0.5) = 0.691462..., so P = 0.382925 and -log2 P = 1.3848
        assert!((normal_cdf(0.5) - 0.691_462).abs() < 1e-6);
        let model = EntropyModel::new(vec![GaussianParams { mu: 0.0, sigma: 1.0 }]);
        let loss = entropy_loss(&[&[0.0]], &model, 1).unwrap();
        assert!((loss.bits - 1.3848).abs() < 1e-3, "{}", loss.bits);
    }

    #[test]
    fn far_outliers_hit_the_floor() {
        let model = EntropyModel::new(vec![GaussianParams { mu: 0.0, sigma: 1.0 }]);
        for y in [1e6, -1e6] {
            let loss = entropy_loss(&[&[y]], &model, 1).unwrap();
            assert!((loss.bits - 29.897).abs() < 1e-3);
            assert_eq!(loss.grad_residuals[0][0], 0.0);
        }
    }

    #[test]
    fn tail_difference_is_accurate() {
        // both bin edges far in the upper tail
        let p = bin_probability(6.0, 0.0, 1.0);
        let reference = 0.5 * (libm::erfc(5.5 * INV_SQRT_2) - libm::erfc(6.5 * INV_SQRT_2));
        assert!((p - reference).abs() < 1e-15);
        assert!(p > 1e-8);
    }

    #[test]
    fn residual_quantize_cases() {
        let y = [0.3, -0.2, 1.0];
        let off = residual_quantize(&y, &y, -1.0, 1.0, 255, Noise::Off).unwrap();
        for v in &off.quantized {
            assert!((v - 127.5).abs() < 1e-12);
        }
        let prev = [0.0; 3];
        let a = residual_quantize(&y, &prev, -1.0, 1.0, 255, Noise::Seeded(4)).unwrap();
        let b = residual_quantize(&y, &prev, -1.0, 1.0, 255, Noise::Seeded(4)).unwrap();
        assert_eq!(a, b);
        let clean = residual_quantize(&y, &prev, -1.0, 1.0, 255, Noise::Off).unwrap();
        for (n, c) in a.quantized.iter().zip(&clean.quantized) {
            assert!((n - c).abs() <= 0.5);
        }
        assert!(residual_quantize(&y, &prev, 1.0, 1.0, 255, Noise::Off).is_err());
        assert!(residual_quantize(&y, &prev[..2], 0.0, 1.0, 255, Noise::Off).is_err());
        assert!(residual_quantize(&y, &prev, 0.0, 1.0, 1, Noise::Off).is_err());
    }

    #[test]
    fn rejects_empty_and_small_sigma() {
        let model = EntropyModel::new(vec![GaussianParams { mu: 0.0, sigma: 1.0 }]);
        assert!(entropy_loss(&[&[]], &model, 1).is_err());
        let bad = EntropyModel::new(vec![GaussianParams { mu: 0.0, sigma: 1e-6 }]);
        assert!(entropy_loss(&[&[0.0]], &bad, 1).is_err());
    }
}
