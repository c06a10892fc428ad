//! 3D Morton (Z-order) codes over 21-bit integer coordinates.

use crate::error::{Error, Result};
use crate::splat::GaussianFrame;

pub const MORTON_BITS: u32 = 21;
pub const MORTON_MAX: u32 = (1 << MORTON_BITS) - 1;

/// Spreads the low 21 bits of `v` so that bit `i` lands at bit `3i`.
#[inline]
fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact_bits(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | x >> 2) & 0x10c3_0c30_c30c_30c3;
    x = (x | x >> 4) & 0x100f_00f0_0f00_f00f;
    x = (x | x >> 8) & 0x001f_0000_ff00_00ff;
    x = (x | x >> 16) & 0x001f_0000_0000_ffff;
    x = (x | x >> 32) & 0x1f_ffff;
    x as u32
}

/// Interleaves three 21-bit coordinates: x at bit `3i`, y at `3i+1`, z at `3i+2`.
pub fn morton_code(ix: u32, iy: u32, iz: u32) -> Result<u64> {
    for c in [ix, iy, iz] {
        if c > MORTON_MAX {
            return Err(Error::MortonOverflow(c));
        }
    }
    Ok(spread_bits(ix) | spread_bits(iy) << 1 | spread_bits(iz) << 2)
}

pub fn morton_decode(code: u64) -> (u32, u32, u32) {
    (compact_bits(code), compact_bits(code >> 1), compact_bits(code >> 2))
}

/// Maps a position into the 21-bit lattice spanned by `min..max`.
/// Axes with zero extent map to 0.
fn lattice_coord(p: f32, min: f32, max: f32) -> u32 {
    let extent = max as f64 - min as f64;
    if extent <= 0.0 {
        return 0;
    }
    let t = ((p as f64 - min as f64) / extent).clamp(0.0, 1.0);
    (t * MORTON_MAX as f64).round() as u32
}

/// Permutation ordering splats by the Morton code of their bbox-normalized
/// position; equal codes keep their original relative order.
pub fn sort_splats_morton(frame: &GaussianFrame) -> Vec<u32> {
    let bb = frame.bbox();
    let mut keyed: Vec<(u64, u32)> = frame
        .splats()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let c = [0, 1, 2].map(|k| lattice_coord(s.position[k], bb.min[k], bb.max[k]));
            let code = morton_code(c[0], c[1], c[2]).expect("lattice coordinates are 21-bit");
            (code, i as u32)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::GaussianSplat;
    use proptest::prelude::*;

    fn naive_interleave(ix: u32, iy: u32, iz: u32) -> u64 {
        let mut out = 0u64;
        for i in 0..21 {
            out |= ((ix as u64 >> i) & 1) << (3 * i);
            out |= ((iy as u64 >> i) & 1) << (3 * i + 1);
            out |= ((iz as u64 >> i) & 1) << (3 * i + 2);
        }
        out
    }

    #[test]
    fn known_codes() {
        assert_eq!(morton_code(0, 0, 0).unwrap(), 0);
        assert_eq!(naive_interleave(1, 2, 3), 53);
        assert_eq!(morton_code(1, 2, 3).unwrap(), 53);
        assert_eq!(naive_interleave(MORTON_MAX, MORTON_MAX, MORTON_MAX), (1u64 << 63) - 1);
        assert_eq!(
            morton_code(MORTON_MAX, MORTON_MAX, MORTON_MAX).unwrap(),
            (1u64 << 63) - 1
        );
        assert!(matches!(
            morton_code(1 << 21, 0, 0),
            Err(Error::MortonOverflow(_))
        ));
    }

    fn frame_from(points: &[[f32; 3]]) -> GaussianFrame {
        let splats = points
            .iter()
            .map(|&position| GaussianSplat {
                position,
                ..Default::default()
            })
            .collect();
        GaussianFrame::new(0, splats).unwrap()
    }

    #[test]
    fn single_splat_is_identity() {
        assert_eq!(sort_splats_morton(&frame_from(&[[1.0, 2.0, 3.0]])), vec![0]);
    }

    #[test]
    fn sorted_input_is_identity() {
        // x-axis walk along a line is already in Morton order
        let pts: Vec<[f32; 3]> = (0..16).map(|i| [i as f32, 0.0, 0.0]).collect();
        let perm = sort_splats_morton(&frame_from(&pts));
        assert_eq!(perm, (0..16).collect::<Vec<u32>>());
    }

    #[test]
    fn degenerate_axes_and_ties() {
        let pts = [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        let perm = sort_splats_morton(&frame_from(&pts));
        // y and z have zero extent; equal codes keep index order
        assert_eq!(perm, vec![2, 0, 1]);
    }

    proptest! {
        #[test]
        fn matches_naive_oracle(x in 0u32..=MORTON_MAX, y in 0u32..=MORTON_MAX, z in 0u32..=MORTON_MAX) {
            let code = morton_code(x, y, z).unwrap();
            prop_assert_eq!(code, naive_interleave(x, y, z));
            prop_assert_eq!(morton_decode(code), (x, y, z));
        }

        #[test]
        fn sort_is_bijective_and_idempotent(pts in prop::collection::vec((-10.0f32..10.0, -10.0f32..10.0, -10.0f32..10.0), 1..200)) {
            let pts: Vec<[f32; 3]> = pts.into_iter().map(|(a, b, c)| [a, b, c]).collect();
            let frame = frame_from(&pts);
            let perm = sort_splats_morton(&frame);
            let mut seen = perm.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..pts.len() as u32).collect::<Vec<_>>());
            let sorted = frame.permuted(&perm).unwrap();
            let again = sort_splats_morton(&sorted);
            prop_assert_eq!(again, (0..pts.len() as u32).collect::<Vec<_>>());
        }
    }
}
