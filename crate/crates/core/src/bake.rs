//! Frame sequence to streamable container.

use std::path::Path;
use std::time::{Duration, Instant};

use crate::codec::container::{write_container, Manifest, DEFAULT_FPS};
use crate::codec::{encode_group, Backend, CodecConfig, EncodedGroup};
use crate::error::{Error, Result};
use crate::motion::{prune_selection, DEFAULT_PRUNE_RATIO, DEFAULT_TARGET_COUNT};
use crate::pack::pack_group;
use crate::splat::{sh_coeff_count, GaussianFrame, GaussianSplat};

pub const DEFAULT_GROUP_SIZE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BakeConfig {
    pub group_size: usize,
    /// Truncate spherical harmonics to this degree; `None` keeps the input degree.
    pub sh_degree: Option<u8>,
    pub prune_ratio: f64,
    pub target_count: usize,
    pub backend: Backend,
    pub base_qp: u8,
    pub fps: f32,
}

impl Default for BakeConfig {
    fn default() -> Self {
        BakeConfig {
            group_size: DEFAULT_GROUP_SIZE,
            sh_degree: None,
            prune_ratio: DEFAULT_PRUNE_RATIO,
            target_count: DEFAULT_TARGET_COUNT,
            backend: Backend::LosslessInternal,
            base_qp: 0,
            fps: DEFAULT_FPS,
        }
    }
}

impl BakeConfig {
    pub fn codec(&self) -> Result<CodecConfig> {
        CodecConfig::new(self.backend, self.base_qp, self.group_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub index: usize,
    pub start_frame: usize,
    pub frames: usize,
    pub input_splats: usize,
    pub splats: usize,
    pub prune_rounds: usize,
    pub bytes: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct BakeReport {
    pub groups: Vec<GroupStats>,
    pub elapsed: Duration,
}

impl BakeReport {
    pub fn frame_count(&self) -> usize {
        self.groups.iter().map(|g| g.frames).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.groups.iter().map(|g| g.bytes).sum()
    }

    pub fn bytes_per_frame(&self) -> f64 {
        self.total_bytes() as f64 / self.frame_count().max(1) as f64
    }

    pub fn seconds_per_frame(&self) -> f64 {
        self.elapsed.as_secs_f64() / self.frame_count().max(1) as f64
    }
}

/// Drops spherical-harmonic coefficients above `degree`.
pub fn truncate_sh(frame: &GaussianFrame, degree: u8) -> Result<GaussianFrame> {
    if degree > frame.sh_degree {
        return Err(Error::invalid(format!(
            "cannot raise SH degree from {} to {degree}",
            frame.sh_degree
        )));
    }
    if degree == frame.sh_degree {
        return Ok(frame.clone());
    }
    let per_in = sh_coeff_count(frame.sh_degree as u32) / 3;
    let per_out = sh_coeff_count(degree as u32) / 3;
    let splats = frame
        .splats()
        .iter()
        .map(|s| GaussianSplat {
            sh: (0..3).flat_map(|c| s.sh[c * per_in..c * per_in + per_out].iter().copied()).collect(),
            ..s.clone()
        })
        .collect();
    GaussianFrame::new(frame.frame_index, splats)
}

/// Prunes, sorts, packs and encodes one group. Frames must share the keyframe's splat count.
pub fn bake_group(frames: &[GaussianFrame], cfg: &BakeConfig) -> Result<(EncodedGroup, GroupStats)> {
    let start = Instant::now();
    let keyframe = frames.first().ok_or(Error::EmptyGroup)?;
    for f in frames {
        if f.len() != keyframe.len() {
            return Err(Error::SplatCountMismatch {
                frame: f.frame_index,
                expected: keyframe.len(),
                found: f.len(),
            });
        }
    }
    let opacity: Vec<f32> = keyframe.splats().iter().map(|s| s.opacity_logit).collect();
    let (keep, rounds) = prune_selection(&opacity, cfg.prune_ratio, cfg.target_count)?;
    let group: Vec<GaussianFrame> = frames
        .iter()
        .map(|f| {
            let f = if rounds > 0 { f.select(&keep)? } else { f.clone() };
            match cfg.sh_degree {
                Some(d) => truncate_sh(&f, d),
                None => Ok(f),
            }
        })
        .collect::<Result<_>>()?;
    let stack = pack_group(&group, &group[0].layout())?;
    let enc = encode_group(&stack, &cfg.codec()?)?;
    let stats = GroupStats {
        index: 0,
        start_frame: keyframe.frame_index,
        frames: frames.len(),
        input_splats: keyframe.len(),
        splats: group[0].len(),
        prune_rounds: rounds,
        bytes: enc.total_bytes(),
        elapsed: start.elapsed(),
    };
    Ok((enc, stats))
}

/// Bakes a whole sequence into encoded groups held in memory.
///
/// Frames are renumbered from 0 in sequence order.
pub fn bake_groups(frames: &[GaussianFrame], cfg: &BakeConfig) -> Result<(Vec<EncodedGroup>, BakeReport)> {
    if cfg.group_size == 0 {
        return Err(Error::invalid("group size must be at least 1"));
    }
    if frames.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let start = Instant::now();
    let mut groups = Vec::new();
    let mut stats = Vec::new();
    for (index, chunk) in frames.chunks(cfg.group_size).enumerate() {
        let renumbered: Vec<GaussianFrame> = chunk
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let mut f = f.clone();
                f.frame_index = index * cfg.group_size + k;
                f
            })
            .collect();
        let (enc, mut s) = bake_group(&renumbered, cfg)?;
        s.index = index;
        groups.push(enc);
        stats.push(s);
    }
    let sh = groups[0].header.sh_degree;
    if let Some(g) = groups.iter().find(|g| g.header.sh_degree != sh) {
        return Err(Error::ShDegreeMismatch {
            expected: sh,
            found: g.header.sh_degree,
        });
    }
    Ok((
        groups,
        BakeReport {
            groups: stats,
            elapsed: start.elapsed(),
        },
    ))
}

/// Bakes `frames` into a container directory.
pub fn bake(frames: &[GaussianFrame], out_dir: &Path, cfg: &BakeConfig) -> Result<(Manifest, BakeReport)> {
    let start = Instant::now();
    let (groups, mut report) = bake_groups(frames, cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let manifest = write_container(&groups, out_dir, cfg.fps)?;
    report.elapsed = start.elapsed();
    Ok((manifest, report))
}

pub fn bake_dir(input_dir: &Path, out_dir: &Path, cfg: &BakeConfig) -> Result<(Manifest, BakeReport)> {
    let frames = crate::io::read_sequence(input_dir)?;
    bake(&frames, out_dir, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub group_size: usize,
    pub groups: usize,
    pub total_bytes: usize,
    pub bytes_per_frame: f64,
}

/// Encoded size per frame for each candidate group size.
pub fn group_size_ablation(frames: &[GaussianFrame], sizes: &[usize], cfg: &BakeConfig) -> Result<Vec<AblationRow>> {
    sizes
        .iter()
        .map(|&group_size| {
            let cfg = BakeConfig { group_size, ..*cfg };
            let (groups, report) = bake_groups(frames, &cfg)?;
            Ok(AblationRow {
                group_size,
                groups: groups.len(),
                total_bytes: report.total_bytes(),
                bytes_per_frame: report.bytes_per_frame(),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("group_size,groups,total_bytes,kb_per_frame\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.group_size,
            r.groups,
            r.total_bytes,
            r.bytes_per_frame / 1000.0
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::container::{load_group, read_manifest, MANIFEST_FILE};
    use crate::codec::decode_group;
    use crate::pack::unpack_frame;
    use crate::synth::{random_frame, random_sequence, smooth_sequence};

    #[test]
    fn bake_and_reload() {
        let frames = smooth_sequence(300, 7, 1, 1);
        let dir = tempfile::tempdir().unwrap();
        let cfg = BakeConfig {
            group_size: 3,
            ..BakeConfig::default()
        };
        let (manifest, report) = bake(&frames, dir.path(), &cfg).unwrap();
        assert_eq!(manifest.groups.len(), 3);
        assert_eq!(manifest.frame_count, 7);
        assert_eq!(report.frame_count(), 7);
        assert_eq!(report.total_bytes() as u64, manifest.total_segment_bytes());
        let m = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m, manifest);
        let g = load_group(dir.path(), &m, 2).unwrap();
        let stack = decode_group(&g, &m.groups[2]).unwrap();
        let f = unpack_frame(&stack, 0).unwrap();
        assert_eq!(f.frame_index, 6);
        assert_eq!(f.len(), 300);
    }

    #[test]
    fn keyframe_pruning_applies_to_the_group() {
        let frames = smooth_sequence(1000, 4, 0, 2);
        let cfg = BakeConfig {
            group_size: 4,
            target_count: 500,
            ..BakeConfig::default()
        };
        let (groups, report) = bake_groups(&frames, &cfg).unwrap();
        assert_eq!(report.groups[0].prune_rounds, 2);
        assert_eq!(report.groups[0].splats, 490);
        assert_eq!(groups[0].header.splat_count, 490);
    }

    #[test]
    fn group_size_one_makes_every_frame_a_keyframe() {
        let frames = smooth_sequence(64, 5, 0, 3);
        let cfg = BakeConfig {
            group_size: 1,
            ..BakeConfig::default()
        };
        let (groups, _) = bake_groups(&frames, &cfg).unwrap();
        assert_eq!(groups.len(), 5);
        assert!(groups.iter().enumerate().all(|(i, g)| g.header.start_frame == i && g.header.num_frames == 1));
    }

    #[test]
    fn count_mismatch_inside_a_group_is_rejected() {
        let frames = vec![random_frame(50, 0, 1), random_frame(40, 0, 2)];
        let cfg = BakeConfig {
            group_size: 2,
            ..BakeConfig::default()
        };
        assert!(matches!(bake_groups(&frames, &cfg), Err(Error::SplatCountMismatch { .. })));
        let split = BakeConfig {
            group_size: 1,
            ..BakeConfig::default()
        };
        assert!(bake_groups(&frames, &split).is_ok());
    }

    #[test]
    fn sh_truncation() {
        let f = random_frame(20, 3, 4);
        let t = truncate_sh(&f, 1).unwrap();
        assert_eq!(t.sh_degree, 1);
        let s = &f.splats()[0].sh;
        assert_eq!(t.splats()[0].sh, [&s[0..3], &s[15..18], &s[30..33]].concat());
        assert!(truncate_sh(&t, 2).is_err());
    }

    #[test]
    fn static_content_is_much_smaller_than_random() {
        let still: Vec<_> = (0..20).map(|_| random_frame(2000, 1, 5)).collect();
        let noisy = random_sequence(2000, 20, 1, 5);
        let cfg = BakeConfig::default();
        let (_, a) = bake_groups(&still, &cfg).unwrap();
        let (_, b) = bake_groups(&noisy, &cfg).unwrap();
        assert!(a.bytes_per_frame() < 0.25 * b.bytes_per_frame());
    }

    #[test]
    fn ablation_csv_shape() {
        let frames = smooth_sequence(200, 12, 0, 6);
        let rows = group_size_ablation(&frames, &[3, 6], &BakeConfig::default()).unwrap();
        let csv = ablation_csv(&rows);
        assert!(csv.starts_with("group_size,groups,total_bytes,kb_per_frame\n"));
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(rows[0].groups, 4);
    }
}
