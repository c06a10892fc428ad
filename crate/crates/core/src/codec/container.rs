//! On-disk container: `manifest.json` plus `group_NNNN/<segment>.bin` files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EncodedGroup, EncodedSegment, GroupHeader, QpSetting, SegmentKind};
use crate::error::{Error, Result};
use crate::pack::{AttributeQuant, TILE};
use crate::quant::QuantRange;
use crate::splat::{attribute_layout, Attribute};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_FPS: f32 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub frame_count: usize,
    pub fps: f32,
    pub sh_degree: u8,
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub index: usize,
    pub start_frame: usize,
    pub length: usize,
    pub splat_count: usize,
    pub side: usize,
    pub attributes: Vec<AttributeEntry>,
    pub segments: Vec<SegmentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub attribute: Attribute,
    pub channels: usize,
    pub bits: u8,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub name: SegmentKind,
    pub channels: usize,
    pub codec: String,
    /// Quantizer used; 0 for lossless streams.
    pub qp: u8,
    pub lossless: bool,
    /// Path relative to the manifest directory.
    pub path: String,
    pub bytes: u64,
}

pub fn segment_path(group: usize, kind: SegmentKind) -> String {
    format!("group_{group:04}/{}.bin", kind.name())
}

impl GroupEntry {
    /// Manifest entry for an encoded group stored as group `index`.
    pub fn describe(index: usize, enc: &EncodedGroup) -> GroupEntry {
        GroupEntry {
            index,
            start_frame: enc.header.start_frame,
            length: enc.header.num_frames,
            splat_count: enc.header.splat_count,
            side: enc.header.side,
            attributes: enc
                .quant
                .iter()
                .map(|q| AttributeEntry {
                    attribute: q.attribute,
                    channels: q.ranges.len(),
                    bits: q.bits,
                    min: q.ranges.iter().map(|r| r.min).collect(),
                    max: q.ranges.iter().map(|r| r.max).collect(),
                })
                .collect(),
            segments: enc
                .segments
                .iter()
                .map(|s| SegmentEntry {
                    name: s.kind,
                    channels: s.channels,
                    codec: s.codec.clone(),
                    qp: match s.qp {
                        QpSetting::Lossless => 0,
                        QpSetting::Qp(q) => q,
                    },
                    lossless: s.lossless(),
                    path: segment_path(index, s.kind),
                    bytes: s.data.len() as u64,
                })
                .collect(),
        }
    }

    pub fn quant(&self) -> Result<Vec<AttributeQuant>> {
        self.attributes
            .iter()
            .map(|a| {
                if a.min.len() != a.channels || a.max.len() != a.channels {
                    return Err(Error::Manifest(format!(
                        "{} range arrays do not match {} channels",
                        a.attribute, a.channels
                    )));
                }
                let ranges = a
                    .min
                    .iter()
                    .zip(&a.max)
                    .map(|(&lo, &hi)| QuantRange::new(lo, hi, a.bits))
                    .collect::<Result<Vec<_>>>()?;
                Ok(AttributeQuant {
                    attribute: a.attribute,
                    bits: a.bits,
                    ranges,
                })
            })
            .collect()
    }

    pub fn end_frame(&self) -> usize {
        self.start_frame + self.length
    }

    /// Rebuilds the encoded group from segment payloads in `segments` order.
    pub fn assemble(&self, sh_degree: u8, payloads: Vec<Vec<u8>>) -> Result<EncodedGroup> {
        if payloads.len() != self.segments.len() {
            return Err(Error::LengthMismatch(payloads.len(), self.segments.len()));
        }
        let segments = self
            .segments
            .iter()
            .zip(payloads)
            .map(|(s, data)| {
                if data.len() as u64 != s.bytes {
                    return Err(Error::Bitstream(format!(
                        "segment {} has {} bytes, manifest says {}",
                        s.path,
                        data.len(),
                        s.bytes
                    )));
                }
                Ok(EncodedSegment {
                    kind: s.name,
                    codec: s.codec.clone(),
                    qp: if s.lossless { QpSetting::Lossless } else { QpSetting::Qp(s.qp) },
                    channels: s.channels,
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedGroup {
            header: GroupHeader {
                start_frame: self.start_frame,
                num_frames: self.length,
                splat_count: self.splat_count,
                side: self.side,
                sh_degree,
            },
            quant: self.quant()?,
            segments,
        })
    }
}

impl Manifest {
    pub fn from_json(bytes: &[u8]) -> Result<Manifest> {
        let m: Manifest = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::ManifestVersion {
                expected: MANIFEST_VERSION,
                found: self.version,
            });
        }
        if self.groups.is_empty() {
            return Err(Error::Manifest("no groups".into()));
        }
        let layout = attribute_layout(self.sh_degree as u32)?;
        let mut next = 0;
        for (i, g) in self.groups.iter().enumerate() {
            if g.index != i {
                return Err(Error::Manifest(format!("group {i} has index {}", g.index)));
            }
            if g.start_frame != next || g.length == 0 {
                return Err(Error::Manifest(format!(
                    "group {i} covers [{}, {}) but must start at {next}",
                    g.start_frame,
                    g.end_frame()
                )));
            }
            if g.side == 0 || g.side % TILE != 0 || g.side * g.side < g.splat_count || g.splat_count == 0 {
                return Err(Error::Manifest(format!("group {i} has invalid side {}", g.side)));
            }
            if g.attributes.len() != layout.entries.len() {
                return Err(Error::Manifest(format!("group {i} attribute table is incomplete")));
            }
            for s in &g.segments {
                if s.path.contains("..") || s.path.starts_with('/') {
                    return Err(Error::Manifest(format!("unsafe segment path {}", s.path)));
                }
            }
            g.quant()?;
            next = g.end_frame();
        }
        if next != self.frame_count {
            return Err(Error::Manifest(format!(
                "groups cover {next} frames, manifest says {}",
                self.frame_count
            )));
        }
        Ok(())
    }

    /// Index of the group containing `frame`.
    pub fn group_of(&self, frame: usize) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| frame >= g.start_frame && frame < g.end_frame())
    }

    pub fn total_segment_bytes(&self) -> u64 {
        self.groups
            .iter()
            .flat_map(|g| &g.segments)
            .map(|s| s.bytes)
            .sum()
    }
}

/// Writes every group's segments under `dir` and the manifest describing them.
pub fn write_container(groups: &[EncodedGroup], dir: &Path, fps: f32) -> Result<Manifest> {
    let first = groups
        .first()
        .ok_or_else(|| Error::Manifest("cannot write a container with no groups".into()))?;
    let mut entries = Vec::with_capacity(groups.len());
    for (index, g) in groups.iter().enumerate() {
        let entry = GroupEntry::describe(index, g);
        fs::create_dir_all(dir.join(format!("group_{index:04}")))?;
        for (seg, meta) in g.segments.iter().zip(&entry.segments) {
            fs::write(dir.join(&meta.path), &seg.data)?;
        }
        entries.push(entry);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        frame_count: entries.last().map_or(0, GroupEntry::end_frame),
        fps,
        sh_degree: first.header.sh_degree,
        groups: entries,
    };
    manifest.validate()?;
    fs::write(dir.join(MANIFEST_FILE), manifest.to_json()?)?;
    Ok(manifest)
}

/// Reads a manifest and checks that every segment exists with its recorded size.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let manifest = Manifest::from_json(&fs::read(path)?)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for s in manifest.groups.iter().flat_map(|g| &g.segments) {
        let p: PathBuf = dir.join(&s.path);
        let meta = fs::metadata(&p).map_err(|_| Error::MissingSegment(p.clone()))?;
        if meta.len() != s.bytes {
            return Err(Error::Manifest(format!(
                "{} is {} bytes, manifest says {}",
                p.display(),
                meta.len(),
                s.bytes
            )));
        }
    }
    Ok(manifest)
}

/// Loads group `index` from a container directory.
pub fn load_group(dir: &Path, manifest: &Manifest, index: usize) -> Result<EncodedGroup> {
    let entry = manifest
        .groups
        .get(index)
        .ok_or_else(|| Error::Manifest(format!("no group {index}")))?;
    let payloads = entry
        .segments
        .iter()
        .map(|s| {
            let p = dir.join(&s.path);
            fs::read(&p).map_err(|_| Error::MissingSegment(p))
        })
        .collect::<Result<Vec<_>>>()?;
    entry.assemble(manifest.sh_degree, payloads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_group, encode_group, CodecConfig};
    use crate::pack::pack_group;
    use crate::synth;

    fn encoded(groups: usize) -> Vec<EncodedGroup> {
        let frames = synth::smooth_sequence(100, groups * 3, 0, 5);
        let layout = attribute_layout(0).unwrap();
        frames
            .chunks(3)
            .map(|g| encode_group(&pack_group(g, &layout).unwrap(), &CodecConfig::lossless(3)).unwrap())
            .collect()
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let groups = encoded(2);
        let written = write_container(&groups, dir.path(), DEFAULT_FPS).unwrap();
        let read = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(read, written);
        assert_eq!(read.frame_count, 6);
        for (i, g) in groups.iter().enumerate() {
            let loaded = load_group(dir.path(), &read, i).unwrap();
            assert_eq!(&loaded, g);
            decode_group(&loaded, &read.groups[i]).unwrap();
        }
        for s in read.groups.iter().flat_map(|g| &g.segments) {
            let len = fs::metadata(dir.path().join(&s.path)).unwrap().len();
            assert_eq!(len, s.bytes);
        }
    }

    #[test]
    fn empty_group_list_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_container(&[], dir.path(), 30.0), Err(Error::Manifest(_))));
    }

    #[test]
    fn missing_segment_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_container(&encoded(1), dir.path(), 30.0).unwrap();
        fs::remove_file(dir.path().join(&m.groups[0].segments[0].path)).unwrap();
        assert!(matches!(
            read_manifest(&dir.path().join(MANIFEST_FILE)),
            Err(Error::MissingSegment(_))
        ));

        let mut bad = m.clone();
        bad.version = 9;
        let err = Manifest::from_json(bad.to_json().unwrap().as_bytes()).unwrap_err();
        assert!(matches!(err, Error::ManifestVersion { found: 9, .. }));
    }

    #[test]
    fn groups_must_tile() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_container(&encoded(2), dir.path(), 30.0).unwrap();
        m.groups[1].start_frame += 1;
        assert!(m.validate().is_err());
        m.groups[1].start_frame -= 1;
        m.frame_count += 1;
        assert!(m.validate().is_err());
        m.frame_count -= 1;
        assert_eq!(m.group_of(4), Some(1));
        assert_eq!(m.group_of(6), None);
    }
}
