//! Uniform scalar quantization onto 8- or 16-bit lattices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width substituted for a degenerate (constant) channel range.
pub const DEGENERATE_EPSILON: f64 = 1e-6;

/// Quantization range of a single channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantRange {
    pub min: f64,
    pub max: f64,
    pub bits: u8,
}

impl QuantRange {
    /// A range with `max > min`. Equal bounds are widened by [`DEGENERATE_EPSILON`].
    pub fn new(min: f64, max: f64, bits: u8) -> Result<Self> {
        if bits != 8 && bits != 16 {
            return Err(Error::BitDepth(bits));
        }
        if !min.is_finite() || !max.is_finite() || max < min {
            return Err(Error::invalid(format!("bad quantization range [{min}, {max}]")));
        }
        let max = if max > min { max } else { min + DEGENERATE_EPSILON };
        Ok(QuantRange { min, max, bits })
    }

    /// Tightest range covering `values`.
    pub fn covering<T: Copy + Into<f64>>(values: &[T], bits: u8) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (index, v) in values.iter().enumerate() {
            let v: f64 = (*v).into();
            if !v.is_finite() {
                return Err(Error::NonFinite { index, value: v });
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if values.is_empty() {
            return Err(Error::invalid("cannot derive a range from no values"));
        }
        QuantRange::new(lo, hi, bits)
    }

    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Largest reconstruction error of a value inside the range.
    pub fn max_error(&self) -> f64 {
        (self.max - self.min) / (2.0 * self.levels() as f64)
    }

    pub fn quantize(&self, v: f64) -> u32 {
        let levels = self.levels() as f64;
        // f64::round rounds half away from zero.
        let q = ((v - self.min) / (self.max - self.min) * levels).round();
        q.clamp(0.0, levels) as u32
    }

    pub fn dequantize(&self, q: u32) -> f64 {
        self.min + q as f64 / self.levels() as f64 * (self.max - self.min)
    }
}

pub fn quantize_channel<T: Copy + Into<f64>>(values: &[T], range: &QuantRange) -> Result<Vec<u32>> {
    values
        .iter()
        .enumerate()
        .map(|(index, v)| {
            let v: f64 = (*v).into();
            if v.is_finite() {
                Ok(range.quantize(v))
            } else {
                Err(Error::NonFinite { index, value: v })
            }
        })
        .collect()
}

pub fn dequantize_channel(q: &[u32], range: &QuantRange) -> Result<Vec<f64>> {
    let levels = range.levels();
    q.iter()
        .enumerate()
        .map(|(index, &value)| {
            if value > levels {
                Err(Error::QuantOutOfRange {
                    index,
                    value,
                    bits: range.bits,
                })
            } else {
                Ok(range.dequantize(value))
            }
        })
        .collect()
}

/// High and low bytes of a 16-bit sample.
pub fn split_u16(q: u16) -> (u8, u8) {
    ((q >> 8) as u8, (q & 0xff) as u8)
}

pub fn merge_u16(hi: u8, lo: u8) -> u16 {
    (hi as u16) << 8 | lo as u16
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounds_and_midpoint() {
        let r = QuantRange::new(-2.0, 6.0, 8).unwrap();
        assert_eq!(r.quantize(-2.0), 0);
        assert_eq!(r.quantize(6.0), 255);
        // 127.5 rounds away from zero
        assert_eq!(r.quantize(2.0), 128);
        assert_eq!(r.dequantize(0), -2.0);
        assert_eq!(r.dequantize(255), 6.0);
        let r16 = QuantRange::new(0.0, 1.0, 16).unwrap();
        assert_eq!(r16.quantize(1.0), 65535);
        assert_eq!(r16.dequantize(65535), 1.0);
    }

    #[test]
    fn out_of_range_inputs_clamp() {
        let r = QuantRange::new(0.0, 1.0, 8).unwrap();
        assert_eq!(r.quantize(-5.0), 0);
        assert_eq!(r.quantize(5.0), 255);
    }

    #[test]
    fn rejects_bad_inputs() {
        let r = QuantRange::new(0.0, 1.0, 8).unwrap();
        assert!(matches!(
            quantize_channel(&[0.5f64, f64::NAN], &r),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            dequantize_channel(&[256], &r),
            Err(Error::QuantOutOfRange { value: 256, .. })
        ));
        assert!(matches!(QuantRange::new(0.0, 1.0, 12), Err(Error::BitDepth(12))));
        assert!(QuantRange::new(1.0, 0.0, 8).is_err());
    }

    #[test]
    fn degenerate_range_is_widened() {
        let r = QuantRange::covering(&[3.0f64, 3.0, 3.0], 8).unwrap();
        assert!(r.max > r.min);
        assert!((r.max - r.min - DEGENERATE_EPSILON).abs() < 1e-12);
        let q = quantize_channel(&[3.0f64, 3.0], &r).unwrap();
        assert_eq!(q, vec![0, 0]);
        assert_eq!(dequantize_channel(&q, &r).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn random_round_trip_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for bits in [8u8, 16] {
            let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(-3.0..5.0)).collect();
            let r = QuantRange::covering(&values, bits).unwrap();
            let back = dequantize_channel(&quantize_channel(&values, &r).unwrap(), &r).unwrap();
            let bound = r.max_error() * (1.0 + 1e-9);
            for (a, b) in values.iter().zip(&back) {
                assert!((a - b).abs() <= bound, "{a} {b} {bound}");
            }
        }
    }

    #[test]
    fn split_merge_exhaustive() {
        assert_eq!(split_u16(0x1234), (0x12, 0x34));
        assert_eq!(split_u16(0), (0, 0));
        for q in 0..=u16::MAX {
            let (hi, lo) = split_u16(q);
            assert_eq!(hi as u16, q / 256);
            assert_eq!(lo as u16, q % 256);
            assert_eq!(merge_u16(hi, lo), q);
        }
    }

    proptest! {
        #[test]
        fn lattice_values_are_exact(lo in -100.0f64..100.0, width in 1e-3f64..50.0, q in 0u32..=255) {
            let r = QuantRange::new(lo, lo + width, 8).unwrap();
            let v = r.dequantize(q);
            prop_assert_eq!(r.quantize(v), q);
        }

        #[test]
        fn round_trip_bound(lo in -100.0f64..100.0, width in 1e-3f64..50.0, t in 0.0f64..=1.0, bits in prop::sample::select(vec![8u8, 16])) {
            let r = QuantRange::new(lo, lo + width, bits).unwrap();
            let v = lo + t * width;
            let back = r.dequantize(r.quantize(v));
            prop_assert!((back - v).abs() <= r.max_error() * (1.0 + 1e-9));
        }
    }
}
