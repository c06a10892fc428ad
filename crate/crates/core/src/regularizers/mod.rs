//! Compression-aware training losses: residual entropy and temporal consistency.

pub mod entropy;
pub mod temporal;

pub use self::entropy::{
    bin_probability, default_regions, entropy_loss, normal_cdf, residual_quantize, EntropyLoss, EntropyModel,
    GaussianParams, Noise, ResidualBatch, P_MIN, SIGMA_MIN,
};
pub use self::temporal::{temporal_loss, FloatPlane, TemporalLoss};

use crate::error::{Error, Result};
use crate::pack::plane_side;
use crate::splat::{Attribute, GaussianFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// D-SSIM share of the image term.
    pub lambda: f64,
    pub entropy: f64,
    pub temporal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.2,
            entropy: 1e-4,
            temporal: 1e-3,
        }
    }
}

/// Weighted training objective. Photometric and D-SSIM terms come from the caller.
pub fn combine_losses(photometric: f64, dssim: f64, entropy: f64, temporal: f64, w: &LossWeights) -> f64 {
    (1.0 - w.lambda) * photometric + w.lambda * dssim + w.entropy * entropy + w.temporal * temporal
}

/// Attributes that take part in the temporal term.
pub const TEMPORAL_ATTRIBUTES: [Attribute; 5] = [
    Attribute::Rotation,
    Attribute::Scale,
    Attribute::Opacity,
    Attribute::Color,
    Attribute::Sh,
];

/// Lays each non-position channel of `frame` out as a float plane, splat `order[i]` at pixel `i`.
pub fn appearance_planes(frame: &GaussianFrame, order: &[u32]) -> Result<Vec<FloatPlane>> {
    if order.len() != frame.len() {
        return Err(Error::LengthMismatch(order.len(), frame.len()));
    }
    let side = plane_side(frame.len());
    let splats = frame.splats();
    let mut planes = Vec::new();
    for attribute in TEMPORAL_ATTRIBUTES {
        let channels = frame.layout().channels(attribute);
        for c in 0..channels {
            let mut data = vec![0.0; side * side];
            for (px, &src) in order.iter().enumerate() {
                data[px] = splats[src as usize].attribute(attribute)[c] as f64;
            }
            planes.push(FloatPlane::new(side, side, data)?);
        }
    }
    Ok(planes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLosses {
    pub attributes: Vec<Attribute>,
    pub residuals: Vec<ResidualBatch>,
    pub model: EntropyModel,
    pub entropy: EntropyLoss,
    pub temporal: TemporalLoss,
}

/// Entropy and temporal losses between two frames with matching splat order.
///
/// Residual ranges cover both frames per attribute; the entropy model is fitted to the residuals.
pub fn pair_losses(prev: &GaussianFrame, cur: &GaussianFrame, noise: Noise) -> Result<PairLosses> {
    if prev.len() != cur.len() {
        return Err(Error::SplatCountMismatch {
            frame: cur.frame_index,
            expected: prev.len(),
            found: cur.len(),
        });
    }
    if prev.sh_degree != cur.sh_degree {
        return Err(Error::ShDegreeMismatch {
            expected: prev.sh_degree,
            found: cur.sh_degree,
        });
    }
    let layout = cur.layout();
    let mut attributes = Vec::new();
    let mut residuals = Vec::new();
    for (k, entry) in layout.entries.iter().enumerate() {
        if entry.channels == 0 {
            continue;
        }
        let collect = |f: &GaussianFrame| -> Vec<f64> {
            f.splats()
                .iter()
                .flat_map(|s| s.attribute(entry.attribute).iter().map(|v| *v as f64))
                .collect()
        };
        let (y_prev, y_t) = (collect(prev), collect(cur));
        let (mut min, mut max) = y_prev
            .iter()
            .chain(&y_t)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if max <= min {
            max = min + crate::quant::DEGENERATE_EPSILON;
        }
        if !min.is_finite() {
            min = 0.0;
        }
        let seeded = match noise {
            Noise::Off => Noise::Off,
            Noise::Seeded(s) => Noise::Seeded(s.wrapping_add(k as u64)),
        };
        attributes.push(entry.attribute);
        residuals.push(residual_quantize(&y_t, &y_prev, min, max, default_regions(entry.bits), seeded)?);
    }
    let refs: Vec<&[f64]> = residuals.iter().map(|r| r.quantized.as_slice()).collect();
    let model = EntropyModel::fit(&refs);
    let entropy = entropy_loss(&refs, &model, cur.len())?;
    let order: Vec<u32> = (0..cur.len() as u32).collect();
    let temporal = temporal_loss(&appearance_planes(cur, &order)?, &appearance_planes(prev, &order)?)?;
    Ok(PairLosses {
        attributes,
        residuals,
        model,
        entropy,
        temporal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_frame, smooth_sequence};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_samples(n: usize, mu: f64, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
                mu + sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect()
    }

    fn rel_err(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
    }

    #[test]
    fn combine_cases() {
        let w = LossWeights::default();
        assert_eq!((w.lambda, w.entropy, w.temporal), (0.2, 1e-4, 1e-3));
        assert_eq!(combine_losses(0.0, 0.0, 0.0, 0.0, &w), 0.0);
        assert!((combine_losses(1.0, 0.0, 0.0, 0.0, &w) - 0.8).abs() < 1e-15);
        assert!((combine_losses(0.0, 1.0, 2.0, 3.0, &w) - (0.2 + 2e-4 + 3e-3)).abs() < 1e-15);
    }

    #[test]
    fn entropy_gradients_match_finite_differences() {
        let h = 1e-4;
        for seed in 0..5 {
            let a = gaussian_samples(40, 0.3, 1.7, seed);
            let b = gaussian_samples(25, -2.0, 0.6, seed + 100);
            let model = EntropyModel::new(vec![
                GaussianParams { mu: 0.1, sigma: 1.5 },
                GaussianParams { mu: -1.8, sigma: 0.8 },
            ]);
            let n = 40;
            let loss = entropy_loss(&[&a, &b], &model, n).unwrap();
            let eval = |a: &[f64], b: &[f64], m: &EntropyModel| entropy_loss(&[a, b], m, n).unwrap().bits;
            for i in [0, 7, 39] {
                let (mut up, mut dn) = (a.clone(), a.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (eval(&up, &b, &model) - eval(&dn, &b, &model)) / (2.0 * h);
                assert!(rel_err(loss.grad_residuals[0][i], fd) < 1e-4, "y[{i}]");
            }
            for k in 0..2 {
                let mut up = model.clone();
                let mut dn = model.clone();
                up.params[k].mu += h;
                dn.params[k].mu -= h;
                let fd = (eval(&a, &b, &up) - eval(&a, &b, &dn)) / (2.0 * h);
                assert!(rel_err(loss.grad_mu[k], fd) < 1e-4, "mu[{k}]");
                let mut up = model.clone();
                let mut dn = model.clone();
                up.params[k].sigma += h;
                dn.params[k].sigma -= h;
                let fd = (eval(&a, &b, &up) - eval(&a, &b, &dn)) / (2.0 * h);
                assert!(rel_err(loss.grad_sigma[k], fd) < 1e-4, "sigma[{k}]");
            }
        }
    }

    #[test]
    fn temporal_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut mk = || FloatPlane::new(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let cur = vec![mk(), mk()];
        let prev = vec![mk(), mk()];
        let loss = temporal_loss(&cur, &prev).unwrap();
        let h = 1e-6;
        for p in 0..2 {
            for i in 0..6 {
                let mut up = cur.clone();
                let mut dn = cur.clone();
                up[p].data[i] += h;
                dn[p].data[i] -= h;
                let fd = (temporal_loss(&up, &prev).unwrap().value - temporal_loss(&dn, &prev).unwrap().value)
                    / (2.0 * h);
                assert!(rel_err(loss.grad[p][i], fd) < 1e-4);
            }
        }
    }

    #[test]
    fn mean_minimizes_entropy() {
        let samples = gaussian_samples(4000, 3.2, 2.5, 1);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let bits = |mu: f64| {
            let m = EntropyModel::new(vec![GaussianParams { mu, sigma: 2.5 }]);
            entropy_loss(&[&samples], &m, samples.len()).unwrap().bits
        };
        let best = (-200..=200)
            .map(|i| mean + i as f64 * 0.01)
            .min_by(|a, b| bits(*a).total_cmp(&bits(*b)))
            .unwrap();
        assert!((best - mean).abs() <= 0.02, "best {best} mean {mean}");
    }

    #[test]
    fn pair_losses_on_static_and_moving_frames() {
        let f = random_frame(200, 1, 3);
        let same = pair_losses(&f, &f, Noise::Off).unwrap();
        assert_eq!(same.temporal.value, 0.0);
        let seq = smooth_sequence(200, 2, 1, 3);
        let moving = pair_losses(&seq[0], &seq[1], Noise::Off).unwrap();
        assert!(moving.temporal.value > 0.0);
        assert!(moving.entropy.bits.is_finite());
        assert_eq!(moving.attributes.len(), 6);
        assert!(pair_losses(&f, &random_frame(10, 1, 3), Noise::Off).is_err());
    }

    proptest! {
        #[test]
        fn shrinking_spread_never_costs_bits(seed in 0u64..1000, k in 0.05f64..1.0) {
            let samples = gaussian_samples(300, 0.7, 3.0, seed);
            let model = EntropyModel::new(vec![GaussianParams { mu: 0.7, sigma: 3.0 }]);
            let shrunk: Vec<f64> = samples.iter().map(|v| 0.7 + k * (v - 0.7)).collect();
            let before = entropy_loss(&[&samples], &model, 300).unwrap().bits;
            let after = entropy_loss(&[&shrunk], &model, 300).unwrap().bits;
            prop_assert!(after <= before + 1e-9);
        }

        #[test]
        fn noise_stays_within_half_a_step(seed in any::<u64>(), vals in prop::collection::vec(-5.0f64..5.0, 1..50)) {
            let prev = vec![0.0; vals.len()];
            let on = residual_quantize(&vals, &prev, -5.0, 5.0, 255, Noise::Seeded(seed)).unwrap();
            let off = residual_quantize(&vals, &prev, -5.0, 5.0, 255, Noise::Off).unwrap();
            for (a, b) in on.quantized.iter().zip(&off.quantized) {
                prop_assert!((a - b).abs() <= 0.5);
            }
        }

        #[test]
        fn temporal_metric_like(a in prop::collection::vec(-3.0f64..3.0, 16), b in prop::collection::vec(-3.0f64..3.0, 16)) {
            let pa = vec![FloatPlane::new(4, 4, a.clone()).unwrap()];
            let pb = vec![FloatPlane::new(4, 4, b.clone()).unwrap()];
            let ab = temporal_loss(&pa, &pb).unwrap().value;
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, temporal_loss(&pb, &pa).unwrap().value);
            prop_assert_eq!(ab == 0.0, a == b);
        }
    }
}
