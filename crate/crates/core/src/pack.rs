//! Baking a frame group into per-channel square planes and reading it back.
//!
//! Every channel of every splat attribute becomes one `side × side` plane per
//! frame. Splat `i` (after the group's Morton permutation) occupies pixel
//! `(i % side, i / side)` in every plane, so reconstruction is a single
//! synchronous scan over the pixels with no mapping table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morton::sort_splats_morton;
use crate::quant::QuantRange;
use crate::splat::{
    attribute_layout, normalize_quat, Attribute, AttributeLayout, GaussianFrame, GaussianSplat,
    OPACITY_LOGIT_CLAMP,
};

pub const TILE: usize = 8;

/// Smallest multiple of 8 whose square holds `splat_count` pixels.
pub fn plane_side(splat_count: usize) -> usize {
    let mut side = (splat_count.max(1) as f64).sqrt().ceil() as usize;
    side = side.div_ceil(TILE) * TILE;
    // guard against sqrt rounding in either direction
    while side * side < splat_count {
        side += TILE;
    }
    while side > TILE && (side - TILE) * (side - TILE) >= splat_count {
        side -= TILE;
    }
    side
}

/// Per-channel quantization ranges of one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeQuant {
    pub attribute: Attribute,
    pub bits: u8,
    pub ranges: Vec<QuantRange>,
}

/// A frame group baked into integer planes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneStack {
    side: usize,
    splat_count: usize,
    sh_degree: u8,
    start_frame: usize,
    quant: Vec<AttributeQuant>,
    permutation: Vec<u32>,
    /// `[frame][flat channel][pixel]`
    planes: Vec<Vec<Vec<u16>>>,
}

fn raw_value(attribute: Attribute, v: f32) -> f32 {
    match attribute {
        Attribute::Opacity => v.clamp(-OPACITY_LOGIT_CLAMP, OPACITY_LOGIT_CLAMP),
        _ => v,
    }
}

impl PlaneStack {
    /// Assembles a stack from decoded planes, validating every dimension.
    pub fn from_parts(
        side: usize,
        splat_count: usize,
        sh_degree: u8,
        start_frame: usize,
        quant: Vec<AttributeQuant>,
        permutation: Vec<u32>,
        planes: Vec<Vec<Vec<u16>>>,
    ) -> Result<Self> {
        let layout = attribute_layout(sh_degree as u32)?;
        if side == 0 || side % TILE != 0 {
            return Err(Error::PlaneShape(format!("side {side} is not a positive multiple of 8")));
        }
        if side * side < splat_count {
            return Err(Error::PlaneShape(format!(
                "side {side} cannot hold {splat_count} splats"
            )));
        }
        if !permutation.is_empty() && permutation.len() != splat_count {
            return Err(Error::PlaneShape(format!(
                "permutation has {} entries for {splat_count} splats",
                permutation.len()
            )));
        }
        if quant.len() != layout.entries.len()
            || quant
                .iter()
                .zip(&layout.entries)
                .any(|(q, e)| q.attribute != e.attribute || q.ranges.len() != e.channels)
        {
            return Err(Error::PlaneShape("quantization table does not match layout".into()));
        }
        let flat = layout.flat_channels();
        for (t, frame) in planes.iter().enumerate() {
            if frame.len() != layout.total_dims {
                return Err(Error::PlaneShape(format!(
                    "frame {t} has {} channels, expected {}",
                    frame.len(),
                    layout.total_dims
                )));
            }
            for (c, plane) in frame.iter().enumerate() {
                if plane.len() != side * side {
                    return Err(Error::PlaneShape(format!(
                        "frame {t} channel {c} has {} pixels, expected {}",
                        plane.len(),
                        side * side
                    )));
                }
                if flat[c].0.bits() == 8 && plane.iter().any(|&v| v > 255) {
                    return Err(Error::PlaneShape(format!(
                        "frame {t} channel {c} exceeds 8-bit range"
                    )));
                }
            }
        }
        Ok(PlaneStack {
            side,
            splat_count,
            sh_degree,
            start_frame,
            quant,
            permutation,
            planes,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn splat_count(&self) -> usize {
        self.splat_count
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn start_frame(&self) -> usize {
        self.start_frame
    }

    pub fn num_frames(&self) -> usize {
        self.planes.len()
    }

    pub fn quant(&self) -> &[AttributeQuant] {
        &self.quant
    }

    pub fn quant_for(&self, attribute: Attribute) -> &AttributeQuant {
        self.quant
            .iter()
            .find(|q| q.attribute == attribute)
            .expect("every attribute has a quantization entry")
    }

    pub fn permutation(&self) -> &[u32] {
        &self.permutation
    }

    pub fn layout(&self) -> AttributeLayout {
        attribute_layout(self.sh_degree as u32).expect("validated at construction")
    }

    /// All channel planes of frame `t`.
    pub fn frame_planes(&self, t: usize) -> &[Vec<u16>] {
        &self.planes[t]
    }

    pub fn plane(&self, t: usize, channel: usize) -> &[u16] {
        &self.planes[t][channel]
    }

    pub fn into_planes(self) -> Vec<Vec<Vec<u16>>> {
        self.planes
    }
}

/// Packs a frame group using the Morton order of its keyframe (the first frame).
pub fn pack_group(frames: &[GaussianFrame], layout: &AttributeLayout) -> Result<PlaneStack> {
    let keyframe = frames.first().ok_or(Error::EmptyGroup)?;
    let permutation = sort_splats_morton(keyframe);
    pack_group_with_permutation(frames, layout, permutation)
}

/// Packs a frame group with an explicit splat order shared by every frame.
pub fn pack_group_with_permutation(
    frames: &[GaussianFrame],
    layout: &AttributeLayout,
    permutation: Vec<u32>,
) -> Result<PlaneStack> {
    let keyframe = frames.first().ok_or(Error::EmptyGroup)?;
    let splat_count = keyframe.len();
    for (i, f) in frames.iter().enumerate() {
        if f.len() != splat_count {
            return Err(Error::SplatCountMismatch {
                frame: i,
                expected: splat_count,
                found: f.len(),
            });
        }
        if f.sh_degree != layout.sh_degree {
            return Err(Error::ShDegreeMismatch {
                expected: layout.sh_degree,
                found: f.sh_degree,
            });
        }
    }
    if permutation.len() != splat_count {
        return Err(Error::LengthMismatch(permutation.len(), splat_count));
    }

    // Group-wide per-channel ranges.
    let mut quant = Vec::with_capacity(layout.entries.len());
    for entry in &layout.entries {
        let mut ranges = Vec::with_capacity(entry.channels);
        for c in 0..entry.channels {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for f in frames {
                for s in f.splats() {
                    let v = raw_value(entry.attribute, s.attribute(entry.attribute)[c]) as f64;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            ranges.push(QuantRange::new(lo, hi, entry.bits)?);
        }
        quant.push(AttributeQuant {
            attribute: entry.attribute,
            bits: entry.bits,
            ranges,
        });
    }

    let side = plane_side(splat_count);
    let pixels = side * side;
    let planes = frames
        .iter()
        .map(|f| {
            let splats = f.splats();
            let mut channels = Vec::with_capacity(layout.total_dims);
            for aq in &quant {
                for (c, range) in aq.ranges.iter().enumerate() {
                    let mut plane = vec![0u16; pixels];
                    for (pixel, &src) in permutation.iter().enumerate() {
                        let v = raw_value(aq.attribute, splats[src as usize].attribute(aq.attribute)[c]);
                        plane[pixel] = range.quantize(v as f64) as u16;
                    }
                    channels.push(plane);
                }
            }
            channels
        })
        .collect();

    Ok(PlaneStack {
        side,
        splat_count,
        sh_degree: layout.sh_degree,
        start_frame: keyframe.frame_index,
        quant,
        permutation,
        planes,
    })
}

/// Rebuilds frame `t` of the group in pixel-scan order.
pub fn unpack_frame(stack: &PlaneStack, t: usize) -> Result<GaussianFrame> {
    if t >= stack.num_frames() {
        return Err(Error::FrameOutOfRange {
            frame: t,
            len: stack.num_frames(),
        });
    }
    if stack.splat_count == 0 {
        return Err(Error::EmptyFrame);
    }
    let planes = &stack.planes[t];
    let layout = stack.layout();
    if planes.len() != layout.total_dims {
        return Err(Error::PlaneShape(format!(
            "{} planes for {} channels",
            planes.len(),
            layout.total_dims
        )));
    }

    // Dequantization lookup for 8-bit channels.
    let luts: Vec<Option<Vec<f32>>> = stack
        .quant
        .iter()
        .flat_map(|aq| aq.ranges.iter().map(move |r| (aq.bits, *r)))
        .map(|(bits, r)| (bits == 8).then(|| (0..256).map(|q| r.dequantize(q) as f32).collect()))
        .collect();
    let ranges: Vec<QuantRange> = stack.quant.iter().flat_map(|aq| aq.ranges.iter().copied()).collect();
    let sh_channels = layout.channels(Attribute::Sh);

    let mut splats = Vec::with_capacity(stack.splat_count);
    for pixel in 0..stack.splat_count {
        let value = |c: usize| -> f32 {
            let q = planes[c][pixel];
            match &luts[c] {
                Some(lut) => lut[q as usize],
                None => ranges[c].dequantize(q as u32) as f32,
            }
        };
        let mut splat = GaussianSplat {
            sh: Vec::with_capacity(sh_channels),
            ..Default::default()
        };
        let mut c = 0;
        for entry in &layout.entries {
            let dst = splat.attribute_mut_for_unpack(entry.attribute, entry.channels);
            for v in dst.iter_mut() {
                *v = value(c);
                c += 1;
            }
        }
        splat.rotation = normalize_quat(splat.rotation);
        splats.push(splat);
    }
    GaussianFrame::new(stack.start_frame + t, splats)
}

impl GaussianSplat {
    fn attribute_mut_for_unpack(&mut self, attribute: Attribute, channels: usize) -> &mut [f32] {
        if attribute == Attribute::Sh {
            self.sh.resize(channels, 0.0);
        }
        self.attribute_mut(attribute)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn side_examples() {
        assert_eq!(plane_side(1), 8);
        assert_eq!(plane_side(64), 8);
        assert_eq!(plane_side(65), 16);
        // 312^2 = 97344 < 100000 <= 320^2
        assert_eq!(plane_side(100_000), 320);
    }

    #[test]
    fn side_is_minimal() {
        for n in 1..5000 {
            let s = plane_side(n);
            assert_eq!(s % 8, 0);
            assert!(s * s >= n);
            assert!(s == 8 || (s - 8) * (s - 8) < n, "n={n} s={s}");
        }
    }

    #[test]
    fn single_frame_tail_is_zero() {
        let frame = synth::random_frame(64, 0, 1);
        let stack = pack_group(&[frame], &attribute_layout(0).unwrap()).unwrap();
        assert_eq!(stack.side(), 8);
        let f = synth::random_frame(50, 0, 2);
        let stack = pack_group(&[f], &attribute_layout(0).unwrap()).unwrap();
        for c in 0..14 {
            assert!(stack.plane(0, c)[50..].iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn identical_frames_give_identical_planes() {
        let f = synth::random_frame(300, 1, 3);
        let mut g = f.clone();
        g.frame_index = 1;
        let stack = pack_group(&[f, g], &attribute_layout(1).unwrap()).unwrap();
        assert_eq!(stack.frame_planes(0), stack.frame_planes(1));
    }

    #[test]
    fn count_mismatch_rejected() {
        let a = synth::random_frame(10, 0, 1);
        let b = synth::random_frame(11, 0, 2);
        let err = pack_group(&[a, b], &attribute_layout(0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::SplatCountMismatch { frame: 1, .. }));
    }

    #[test]
    fn unpack_rejects_bad_index_and_empty() {
        let f = synth::random_frame(10, 0, 1);
        let stack = pack_group(&[f], &attribute_layout(0).unwrap()).unwrap();
        assert!(matches!(unpack_frame(&stack, 1), Err(Error::FrameOutOfRange { .. })));

        let empty = PlaneStack::from_parts(
            8,
            0,
            0,
            0,
            stack.quant().to_vec(),
            vec![],
            vec![vec![vec![0; 64]; 14]],
        )
        .unwrap();
        assert!(matches!(unpack_frame(&empty, 0), Err(Error::EmptyFrame)));
    }

    #[test]
    fn from_parts_validates_shape() {
        let f = synth::random_frame(10, 0, 1);
        let stack = pack_group(&[f], &attribute_layout(0).unwrap()).unwrap();
        let q = stack.quant().to_vec();
        assert!(PlaneStack::from_parts(12, 10, 0, 0, q.clone(), vec![], vec![]).is_err());
        assert!(PlaneStack::from_parts(8, 10, 0, 0, q.clone(), vec![], vec![vec![vec![0; 63]; 14]]).is_err());
        assert!(PlaneStack::from_parts(8, 10, 0, 0, q, vec![], vec![vec![vec![0; 64]; 13]]).is_err());
    }

    #[test]
    fn round_trip_within_bounds() {
        let frames = synth::smooth_sequence(500, 4, 1, 11);
        let layout = attribute_layout(1).unwrap();
        let stack = pack_group(&frames, &layout).unwrap();
        for (t, original) in frames.iter().enumerate() {
            let back = unpack_frame(&stack, t).unwrap();
            assert_eq!(back.frame_index, original.frame_index);
            let sorted = original.permuted(stack.permutation()).unwrap();
            for (a, b) in sorted.splats().iter().zip(back.splats()) {
                for aq in stack.quant() {
                    if aq.attribute == Attribute::Rotation {
                        continue;
                    }
                    for (c, r) in aq.ranges.iter().enumerate() {
                        let va = raw_value(aq.attribute, a.attribute(aq.attribute)[c]) as f64;
                        let vb = b.attribute(aq.attribute)[c] as f64;
                        // f32 storage adds a few ulps on top of the lattice bound
                        let tol = r.max_error() + 1e-6 * va.abs().max(1.0);
                        assert!((va - vb).abs() <= tol, "{:?}[{c}] {va} {vb}", aq.attribute);
                    }
                }
                let n: f32 = b.rotation.iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }
}
