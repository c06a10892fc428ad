//! Splat and frame types plus the per-attribute channel layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest supported spherical-harmonics degree.
pub const MAX_SH_DEGREE: u32 = 3;

/// Logits are clamped to this magnitude before quantization.
pub const OPACITY_LOGIT_CLAMP: f32 = 10.0;

/// The six attribute groups of a splat, in packing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Position,
    Rotation,
    Scale,
    Opacity,
    Color,
    Sh,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::Position,
        Attribute::Rotation,
        Attribute::Scale,
        Attribute::Opacity,
        Attribute::Color,
        Attribute::Sh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Position => "position",
            Attribute::Rotation => "rotation",
            Attribute::Scale => "scale",
            Attribute::Opacity => "opacity",
            Attribute::Color => "color",
            Attribute::Sh => "sh",
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            Attribute::Position => 16,
            _ => 8,
        }
    }
}

impl std::fmt::Display for Attribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub attribute: Attribute,
    pub channels: usize,
    pub bits: u8,
}

/// Channel layout of a splat for a given SH degree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeLayout {
    pub sh_degree: u8,
    pub entries: Vec<LayoutEntry>,
    pub total_dims: usize,
}

/// Number of higher-order SH coefficients (all three colour channels) for a degree.
pub fn sh_coeff_count(sh_degree: u32) -> usize {
    let per_channel = (sh_degree as usize + 1).pow(2) - 1;
    3 * per_channel
}

pub fn attribute_layout(sh_degree: u32) -> Result<AttributeLayout> {
    if sh_degree > MAX_SH_DEGREE {
        return Err(Error::ShDegree(sh_degree));
    }
    let entries: Vec<LayoutEntry> = Attribute::ALL
        .iter()
        .map(|&attribute| LayoutEntry {
            attribute,
            channels: match attribute {
                Attribute::Position => 3,
                Attribute::Rotation => 4,
                Attribute::Scale => 3,
                Attribute::Opacity => 1,
                Attribute::Color => 3,
                Attribute::Sh => sh_coeff_count(sh_degree),
            },
            bits: attribute.bits(),
        })
        .collect();
    let total_dims = entries.iter().map(|e| e.channels).sum();
    Ok(AttributeLayout {
        sh_degree: sh_degree as u8,
        entries,
        total_dims,
    })
}

impl AttributeLayout {
    pub fn channels(&self, attribute: Attribute) -> usize {
        self.entries
            .iter()
            .find(|e| e.attribute == attribute)
            .map_or(0, |e| e.channels)
    }

    /// Offset of the attribute's first channel in the flattened channel list.
    pub fn channel_offset(&self, attribute: Attribute) -> usize {
        self.entries
            .iter()
            .take_while(|e| e.attribute != attribute)
            .map(|e| e.channels)
            .sum()
    }

    /// `(attribute, channel index within attribute)` for every flattened channel.
    pub fn flat_channels(&self) -> Vec<(Attribute, usize)> {
        self.entries
            .iter()
            .flat_map(|e| (0..e.channels).map(move |c| (e.attribute, c)))
            .collect()
    }
}

/// One Gaussian primitive, stored in raw (pre-activation) parameters.
///
/// `log_scale` is exponentiated and `opacity_logit` passed through a sigmoid
/// to obtain the rendered values. `color` is the base RGB colour; `sh` holds
/// the higher-order coefficients in channel-major order (all red
/// coefficients, then green, then blue).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSplat {
    pub position: [f32; 3],
    /// Quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub log_scale: [f32; 3],
    pub opacity_logit: f32,
    pub color: [f32; 3],
    pub sh: Vec<f32>,
}

impl Default for GaussianSplat {
    fn default() -> Self {
        GaussianSplat {
            position: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            opacity_logit: 0.0,
            color: [0.0; 3],
            sh: Vec::new(),
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f32) -> f32 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}

pub fn normalize_quat(q: [f32; 4]) -> [f32; 4] {
    let n = q.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q.map(|v| (v as f64 / n) as f32)
}

impl GaussianSplat {
    pub fn opacity(&self) -> f32 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> [f32; 3] {
        self.log_scale.map(f32::exp)
    }

    pub fn normalized(mut self) -> Self {
        self.rotation = normalize_quat(self.rotation);
        self
    }

    /// Raw channel values of one attribute.
    pub fn attribute(&self, attribute: Attribute) -> &[f32] {
        match attribute {
            Attribute::Position => &self.position,
            Attribute::Rotation => &self.rotation,
            Attribute::Scale => &self.log_scale,
            Attribute::Opacity => std::slice::from_ref(&self.opacity_logit),
            Attribute::Color => &self.color,
            Attribute::Sh => &self.sh,
        }
    }

    pub fn attribute_mut(&mut self, attribute: Attribute) -> &mut [f32] {
        match attribute {
            Attribute::Position => &mut self.position,
            Attribute::Rotation => &mut self.rotation,
            Attribute::Scale => &mut self.log_scale,
            Attribute::Opacity => std::slice::from_mut(&mut self.opacity_logit),
            Attribute::Color => &mut self.color,
            Attribute::Sh => &mut self.sh,
        }
    }

    fn is_finite(&self) -> bool {
        Attribute::ALL
            .iter()
            .all(|&a| self.attribute(a).iter().all(|v| v.is_finite()))
    }
}

/// Axis-aligned bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a [f32; 3]>) -> Option<Aabb> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            for k in 0..3 {
                bb.min[k] = bb.min[k].min(p[k]);
                bb.max[k] = bb.max[k].max(p[k]);
            }
        }
        Some(bb)
    }

    pub fn extent(&self) -> [f32; 3] {
        [0, 1, 2].map(|k| self.max[k] - self.min[k])
    }

    pub fn diagonal(&self) -> f32 {
        self.extent().iter().map(|e| e * e).sum::<f32>().sqrt()
    }

    pub fn contains(&self, p: &[f32; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// One frame's splat set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFrame {
    pub frame_index: usize,
    pub sh_degree: u8,
    splats: Vec<GaussianSplat>,
    bbox: Aabb,
}

impl GaussianFrame {
    /// Builds a frame, inferring the SH degree from the first splat.
    pub fn new(frame_index: usize, splats: Vec<GaussianSplat>) -> Result<Self> {
        let first = splats.first().ok_or(Error::EmptyFrame)?;
        let sh_len = first.sh.len();
        let sh_degree = (0..=MAX_SH_DEGREE)
            .find(|&d| sh_coeff_count(d) == sh_len)
            .ok_or_else(|| Error::invalid(format!("{sh_len} SH coefficients match no degree")))?;
        for (i, s) in splats.iter().enumerate() {
            if s.sh.len() != sh_len {
                return Err(Error::invalid(format!(
                    "splat {i} has {} SH coefficients, expected {sh_len}",
                    s.sh.len()
                )));
            }
            if !s.is_finite() {
                return Err(Error::invalid(format!("splat {i} has non-finite attributes")));
            }
        }
        let bbox = Aabb::from_points(splats.iter().map(|s| &s.position)).unwrap();
        Ok(GaussianFrame {
            frame_index,
            sh_degree: sh_degree as u8,
            splats,
            bbox,
        })
    }

    pub fn splats(&self) -> &[GaussianSplat] {
        &self.splats
    }

    pub fn into_splats(self) -> Vec<GaussianSplat> {
        self.splats
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    pub fn layout(&self) -> AttributeLayout {
        attribute_layout(self.sh_degree as u32).expect("degree validated at construction")
    }

    /// Reorders splats so that output slot `i` holds input splat `order[i]`.
    pub fn permuted(&self, order: &[u32]) -> Result<GaussianFrame> {
        if order.len() != self.splats.len() {
            return Err(Error::LengthMismatch(order.len(), self.splats.len()));
        }
        let splats = order
            .iter()
            .map(|&i| self.splats[i as usize].clone())
            .collect();
        GaussianFrame::new(self.frame_index, splats)
    }

    /// Keeps only the splats at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<GaussianFrame> {
        let splats = indices.iter().map(|&i| self.splats[i].clone()).collect();
        GaussianFrame::new(self.frame_index, splats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_dimensions() {
        assert_eq!(attribute_layout(0).unwrap().total_dims, 14);
        let l1 = attribute_layout(1).unwrap();
        assert_eq!(l1.channels(Attribute::Sh), 9);
        assert_eq!(l1.total_dims, 23);
        let l3 = attribute_layout(3).unwrap();
        assert_eq!(l3.channels(Attribute::Sh), 45);
        assert_eq!(l3.total_dims, 59);
        assert!(matches!(attribute_layout(4), Err(Error::ShDegree(4))));
    }

    #[test]
    fn only_position_is_16_bit() {
        for d in 0..=3 {
            let l = attribute_layout(d).unwrap();
            assert_eq!(l.total_dims, l.entries.iter().map(|e| e.channels).sum::<usize>());
            for e in &l.entries {
                assert_eq!(e.bits == 16, e.attribute == Attribute::Position);
            }
        }
    }

    #[test]
    fn channel_offsets() {
        let l = attribute_layout(1).unwrap();
        assert_eq!(l.channel_offset(Attribute::Position), 0);
        assert_eq!(l.channel_offset(Attribute::Rotation), 3);
        assert_eq!(l.channel_offset(Attribute::Opacity), 10);
        assert_eq!(l.channel_offset(Attribute::Sh), 14);
        assert_eq!(l.flat_channels().len(), 23);
    }

    #[test]
    fn empty_frame_rejected() {
        assert!(matches!(GaussianFrame::new(0, vec![]), Err(Error::EmptyFrame)));
    }

    #[test]
    fn bbox_contains_all_positions() {
        let splats: Vec<_> = (0..10)
            .map(|i| GaussianSplat {
                position: [i as f32, -(i as f32), 0.5 * i as f32],
                ..Default::default()
            })
            .collect();
        let f = GaussianFrame::new(3, splats).unwrap();
        assert!(f.splats().iter().all(|s| f.bbox().contains(&s.position)));
        assert_eq!(f.bbox().min, [0.0, -9.0, 0.0]);
    }

    #[test]
    fn quat_normalization() {
        let q = normalize_quat([2.0, 0.0, 0.0, 2.0]);
        let n: f32 = q.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-6);
        assert_eq!(normalize_quat([0.0; 4]), [1.0, 0.0, 0.0, 0.0]);
    }
}
