//! Per-attribute video coding of baked plane stacks.
//!
//! Each attribute segment holds one monochrome 8-bit stream per channel.
//! 16-bit positions are split into a high-byte segment (`pos_hi`, always
//! lossless) and a low-byte segment (`pos_lo`).

pub mod container;
pub mod h264;
pub mod lossless;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use container::{read_manifest, write_container, GroupEntry, Manifest, SegmentEntry};
pub use h264::H264External;
pub use lossless::LosslessCodec;

use crate::error::{Error, Result};
use crate::pack::{AttributeQuant, PlaneStack};
use crate::quant::{merge_u16, split_u16};
use crate::splat::{attribute_layout, Attribute};

pub const MAX_QP: u8 = 51;
/// QP ceiling for colour, scale and rotation streams.
pub const SENSITIVE_QP_CAP: u8 = 22;

/// Quantizer for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QpSetting {
    Lossless,
    Qp(u8),
}

impl fmt::Display for QpSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QpSetting::Lossless => f.write_str("lossless"),
            QpSetting::Qp(q) => write!(f, "{q}"),
        }
    }
}

impl std::str::FromStr for QpSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("lossless") {
            return Ok(QpSetting::Lossless);
        }
        let q: u8 = s
            .parse()
            .map_err(|_| Error::invalid(format!("bad qp `{s}`")))?;
        if q > MAX_QP {
            return Err(Error::invalid(format!("qp {q} exceeds {MAX_QP}")));
        }
        Ok(QpSetting::Qp(q))
    }
}

/// The attribute segments of a group, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    PosHi,
    PosLo,
    Rotation,
    Scale,
    Opacity,
    Color,
    Sh,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 7] = [
        SegmentKind::PosHi,
        SegmentKind::PosLo,
        SegmentKind::Rotation,
        SegmentKind::Scale,
        SegmentKind::Opacity,
        SegmentKind::Color,
        SegmentKind::Sh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SegmentKind::PosHi => "pos_hi",
            SegmentKind::PosLo => "pos_lo",
            SegmentKind::Rotation => "rotation",
            SegmentKind::Scale => "scale",
            SegmentKind::Opacity => "opacity",
            SegmentKind::Color => "color",
            SegmentKind::Sh => "sh",
        }
    }

    pub fn from_name(name: &str) -> Option<SegmentKind> {
        SegmentKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn attribute(self) -> Attribute {
        match self {
            SegmentKind::PosHi | SegmentKind::PosLo => Attribute::Position,
            SegmentKind::Rotation => Attribute::Rotation,
            SegmentKind::Scale => Attribute::Scale,
            SegmentKind::Opacity => Attribute::Opacity,
            SegmentKind::Color => Attribute::Color,
            SegmentKind::Sh => Attribute::Sh,
        }
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-segment quantizers for a base QP.
///
/// Up to the cap every stream uses `base_qp`; above it colour, scale and
/// rotation stay at the cap while the rest follow `base_qp`. The position
/// high byte is lossless in every case.
pub fn qp_policy(base_qp: u8) -> Result<BTreeMap<SegmentKind, QpSetting>> {
    if base_qp > MAX_QP {
        return Err(Error::invalid(format!("base qp {base_qp} exceeds {MAX_QP}")));
    }
    Ok(SegmentKind::ALL
        .into_iter()
        .map(|kind| {
            let qp = match kind {
                SegmentKind::PosHi => QpSetting::Lossless,
                SegmentKind::Color | SegmentKind::Scale | SegmentKind::Rotation => {
                    QpSetting::Qp(base_qp.min(SENSITIVE_QP_CAP))
                }
                _ => QpSetting::Qp(base_qp),
            };
            (kind, qp)
        })
        .collect())
}

/// A codec over sequences of 8-bit monochrome planes.
pub trait PlaneCodec: Send + Sync {
    fn id(&self) -> &'static str;

    fn encode_stream(
        &self,
        width: usize,
        height: usize,
        frames: &[Vec<u8>],
        qp: QpSetting,
    ) -> Result<Vec<u8>>;

    fn decode_stream(
        &self,
        width: usize,
        height: usize,
        num_frames: usize,
        data: &[u8],
    ) -> Result<Vec<Vec<u8>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    LosslessInternal,
    H264External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecConfig {
    pub backend: Backend,
    pub base_qp: u8,
    /// Group-of-pictures length; equal to the frame-group length.
    pub gop: usize,
}

impl CodecConfig {
    pub fn new(backend: Backend, base_qp: u8, gop: usize) -> Result<Self> {
        if base_qp > MAX_QP {
            return Err(Error::invalid(format!("base qp {base_qp} exceeds {MAX_QP}")));
        }
        if gop == 0 {
            return Err(Error::invalid("gop must be at least 1"));
        }
        Ok(CodecConfig { backend, base_qp, gop })
    }

    pub fn lossless(gop: usize) -> Self {
        CodecConfig {
            backend: Backend::LosslessInternal,
            base_qp: 0,
            gop: gop.max(1),
        }
    }
}

/// Resolves a codec by its stream id.
pub fn codec_for_id(id: &str) -> Result<Box<dyn PlaneCodec>> {
    match id {
        lossless::LOSSLESS_ID => Ok(Box::new(LosslessCodec)),
        h264::H264_ID => Ok(Box::new(H264External::discover()?)),
        other => Err(Error::BackendUnavailable(format!("unknown codec `{other}`"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupHeader {
    pub start_frame: usize,
    pub num_frames: usize,
    pub splat_count: usize,
    pub side: usize,
    pub sh_degree: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSegment {
    pub kind: SegmentKind,
    pub codec: String,
    pub qp: QpSetting,
    pub channels: usize,
    /// Framed channel streams, see [`frame_streams`].
    pub data: Vec<u8>,
}

impl EncodedSegment {
    pub fn lossless(&self) -> bool {
        self.codec == lossless::LOSSLESS_ID || self.qp == QpSetting::Lossless
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGroup {
    pub header: GroupHeader,
    pub quant: Vec<AttributeQuant>,
    pub segments: Vec<EncodedSegment>,
}

impl EncodedGroup {
    pub fn total_bytes(&self) -> usize {
        self.segments.iter().map(|s| s.data.len()).sum()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&EncodedSegment> {
        self.segments.iter().find(|s| s.kind == kind)
    }
}

const SEGMENT_MAGIC: &[u8; 4] = b"GVS1";

/// Segment file layout: `"GVS1"`, `u32` channel count, one `u32` byte length
/// per channel (all little-endian), then the channel streams back to back.
pub fn frame_streams(streams: &[Vec<u8>]) -> Vec<u8> {
    let body: usize = streams.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(8 + 4 * streams.len() + body);
    out.extend_from_slice(SEGMENT_MAGIC);
    out.extend_from_slice(&(streams.len() as u32).to_le_bytes());
    for s in streams {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    }
    for s in streams {
        out.extend_from_slice(s);
    }
    out
}

pub fn unframe_streams(data: &[u8]) -> Result<Vec<&[u8]>> {
    let word = |at: usize| -> Result<usize> {
        data.get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| Error::Bitstream("segment header truncated".into()))
    };
    if data.get(..4) != Some(SEGMENT_MAGIC.as_slice()) {
        return Err(Error::Bitstream("bad segment magic".into()));
    }
    let count = word(4)?;
    let mut offset = 8 + 4 * count;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let len = word(8 + 4 * i)?;
        let stream = data
            .get(offset..offset + len)
            .ok_or_else(|| Error::Bitstream(format!("channel {i} truncated")))?;
        out.push(stream);
        offset += len;
    }
    if offset != data.len() {
        return Err(Error::Bitstream("trailing bytes after segment".into()));
    }
    Ok(out)
}

/// 8-bit planes `[channel][frame]` carried by one segment.
fn segment_planes(stack: &PlaneStack, kind: SegmentKind) -> Vec<Vec<Vec<u8>>> {
    let layout = stack.layout();
    let offset = layout.channel_offset(kind.attribute());
    let channels = layout.channels(kind.attribute());
    (offset..offset + channels)
        .map(|c| {
            (0..stack.num_frames())
                .map(|t| {
                    let plane = stack.plane(t, c);
                    match kind {
                        SegmentKind::PosHi => plane.iter().map(|&v| split_u16(v).0).collect(),
                        SegmentKind::PosLo => plane.iter().map(|&v| split_u16(v).1).collect(),
                        _ => plane.iter().map(|&v| v as u8).collect(),
                    }
                })
                .collect()
        })
        .collect()
}

pub fn encode_group(stack: &PlaneStack, cfg: &CodecConfig) -> Result<EncodedGroup> {
    let policy = qp_policy(cfg.base_qp)?;
    let lossy: Option<H264External> = match cfg.backend {
        Backend::LosslessInternal => None,
        Backend::H264External => Some(H264External::discover()?),
    };
    let side = stack.side();
    let layout = stack.layout();
    let kinds: Vec<SegmentKind> = SegmentKind::ALL
        .into_iter()
        .filter(|k| layout.channels(k.attribute()) > 0)
        .collect();

    let segments = kinds
        .par_iter()
        .map(|&kind| -> Result<EncodedSegment> {
            let (codec, qp): (&dyn PlaneCodec, QpSetting) = match (&lossy, policy[&kind]) {
                (Some(h264), QpSetting::Qp(q)) => (h264, QpSetting::Qp(q)),
                _ => (&LosslessCodec, QpSetting::Lossless),
            };
            let planes = segment_planes(stack, kind);
            let streams = planes
                .par_iter()
                .map(|frames| codec.encode_stream(side, side, frames, qp))
                .collect::<Result<Vec<_>>>()?;
            Ok(EncodedSegment {
                kind,
                codec: codec.id().to_string(),
                qp,
                channels: streams.len(),
                data: frame_streams(&streams),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EncodedGroup {
        header: GroupHeader {
            start_frame: stack.start_frame(),
            num_frames: stack.num_frames(),
            splat_count: stack.splat_count(),
            side,
            sh_degree: stack.sh_degree(),
        },
        quant: stack.quant().to_vec(),
        segments,
    })
}

/// Decodes one group using only its own segments and manifest entry.
pub fn decode_group(enc: &EncodedGroup, entry: &GroupEntry) -> Result<PlaneStack> {
    let h = &enc.header;
    if h.side != entry.side || h.num_frames != entry.length || h.splat_count != entry.splat_count {
        return Err(Error::PlaneShape(format!(
            "group header {}x{} ({} frames, {} splats) disagrees with manifest {}x{} ({} frames, {} splats)",
            h.side, h.side, h.num_frames, h.splat_count,
            entry.side, entry.side, entry.length, entry.splat_count
        )));
    }
    let layout = attribute_layout(h.sh_degree as u32)?;
    let side = h.side;
    let pixels = side * side;

    // decoded[kind] = [channel][frame][pixel]
    let decoded: Vec<(SegmentKind, Vec<Vec<Vec<u8>>>)> = enc
        .segments
        .par_iter()
        .map(|seg| -> Result<_> {
            let codec = codec_for_id(&seg.codec)?;
            let streams = unframe_streams(&seg.data)?;
            let expected = layout.channels(seg.kind.attribute());
            if streams.len() != expected {
                return Err(Error::Bitstream(format!(
                    "segment {} has {} channels, expected {expected}",
                    seg.kind,
                    streams.len()
                )));
            }
            let channels = streams
                .par_iter()
                .map(|s| codec.decode_stream(side, side, h.num_frames, s))
                .collect::<Result<Vec<_>>>()?;
            Ok((seg.kind, channels))
        })
        .collect::<Result<Vec<_>>>()?;
    let find = |kind: SegmentKind| {
        decoded
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, planes)| planes)
            .ok_or_else(|| Error::Bitstream(format!("missing segment {kind}")))
    };

    let mut planes: Vec<Vec<Vec<u16>>> = vec![Vec::with_capacity(layout.total_dims); h.num_frames];
    for entry in &layout.entries {
        if entry.channels == 0 {
            continue;
        }
        if entry.attribute == Attribute::Position {
            let hi = find(SegmentKind::PosHi)?;
            let lo = find(SegmentKind::PosLo)?;
            for c in 0..entry.channels {
                for (t, frame) in planes.iter_mut().enumerate() {
                    let merged: Vec<u16> = hi[c][t]
                        .iter()
                        .zip(&lo[c][t])
                        .map(|(&a, &b)| merge_u16(a, b))
                        .collect();
                    debug_assert_eq!(merged.len(), pixels);
                    frame.push(merged);
                }
            }
        } else {
            let kind = SegmentKind::ALL
                .into_iter()
                .find(|k| k.attribute() == entry.attribute)
                .expect("every attribute has a segment");
            let seg = find(kind)?;
            for c in 0..entry.channels {
                for (t, frame) in planes.iter_mut().enumerate() {
                    frame.push(seg[c][t].iter().map(|&v| v as u16).collect());
                }
            }
        }
    }

    PlaneStack::from_parts(
        side,
        h.splat_count,
        h.sh_degree,
        h.start_frame,
        entry.quant()?,
        Vec::new(),
        planes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::pack_group;
    use crate::synth;

    #[test]
    fn policy_examples() {
        let p20 = qp_policy(20).unwrap();
        for kind in SegmentKind::ALL {
            let want = if kind == SegmentKind::PosHi { QpSetting::Lossless } else { QpSetting::Qp(20) };
            assert_eq!(p20[&kind], want);
        }
        let p30 = qp_policy(30).unwrap();
        assert_eq!(p30[&SegmentKind::Color], QpSetting::Qp(22));
        assert_eq!(p30[&SegmentKind::Scale], QpSetting::Qp(22));
        assert_eq!(p30[&SegmentKind::Rotation], QpSetting::Qp(22));
        assert_eq!(p30[&SegmentKind::Opacity], QpSetting::Qp(30));
        assert_eq!(p30[&SegmentKind::Sh], QpSetting::Qp(30));
        assert_eq!(p30[&SegmentKind::PosLo], QpSetting::Qp(30));
        assert_eq!(p30[&SegmentKind::PosHi], QpSetting::Lossless);
        assert!(qp_policy(22).unwrap().values().all(|q| matches!(q, QpSetting::Qp(22) | QpSetting::Lossless)));
        assert!(qp_policy(52).is_err());
    }

    #[test]
    fn qp_parse() {
        assert_eq!("lossless".parse::<QpSetting>().unwrap(), QpSetting::Lossless);
        assert_eq!("30".parse::<QpSetting>().unwrap(), QpSetting::Qp(30));
        assert!("60".parse::<QpSetting>().is_err());
    }

    #[test]
    fn framing_round_trip_and_corruption() {
        let streams = vec![vec![1, 2, 3], vec![], vec![9; 10]];
        let data = frame_streams(&streams);
        let back = unframe_streams(&data).unwrap();
        assert_eq!(back, vec![&[1u8, 2, 3][..], &[][..], &[9u8; 10][..]]);
        assert!(unframe_streams(&data[..data.len() - 1]).is_err());
        assert!(unframe_streams(b"XXXX").is_err());
    }

    #[test]
    fn lossless_group_is_bit_exact() {
        let frames = synth::smooth_sequence(200, 5, 1, 3);
        let stack = pack_group(&frames, &attribute_layout(1).unwrap()).unwrap();
        let enc = encode_group(&stack, &CodecConfig::lossless(5)).unwrap();
        assert!(enc.segment(SegmentKind::PosHi).unwrap().lossless());
        let entry = GroupEntry::describe(0, &enc);
        let dec = decode_group(&enc, &entry).unwrap();
        for t in 0..5 {
            assert_eq!(dec.frame_planes(t), stack.frame_planes(t));
        }
        assert_eq!(dec.quant(), stack.quant());
    }

    #[test]
    fn side_mismatch_detected() {
        let frames = synth::random_sequence(70, 2, 0, 1);
        let stack = pack_group(&frames, &attribute_layout(0).unwrap()).unwrap();
        let enc = encode_group(&stack, &CodecConfig::lossless(2)).unwrap();
        let mut entry = GroupEntry::describe(0, &enc);
        entry.side = 8;
        assert!(matches!(decode_group(&enc, &entry), Err(Error::PlaneShape(_))));
    }
}
