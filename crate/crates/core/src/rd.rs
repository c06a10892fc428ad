//! Encoded size versus rendered quality across quantizer settings.

use crate::bake::{bake_groups, BakeConfig};
use crate::codec::container::GroupEntry;
use crate::codec::{decode_group, Backend, QpSetting};
use crate::error::{Error, Result};
use crate::pack::unpack_frame;
use crate::render::{psnr, render, Camera, RenderOptions};
use crate::splat::GaussianFrame;

pub const RD_CSV_HEADER: &str = "qp,kb_per_frame,psnr_db";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdRow {
    pub qp: QpSetting,
    pub bytes_per_frame: f64,
    /// Mean over frames and cameras.
    pub psnr_db: f64,
}

/// Bakes `frames` at each setting, decodes, renders from every camera and compares against
/// renders of the input frames.
///
/// `Lossless` uses the internal lossless codec; numeric QPs use the external H.264 encoder.
/// No pruning is applied, so the reference and the decoded frames hold the same splats.
pub fn rate_distortion_sweep(
    frames: &[GaussianFrame],
    qps: &[QpSetting],
    cameras: &[Camera],
    group_size: usize,
    opts: &RenderOptions,
) -> Result<Vec<RdRow>> {
    if cameras.is_empty() {
        return Err(Error::invalid("rate-distortion sweep needs at least one camera"));
    }
    let reference: Vec<Vec<_>> = frames
        .iter()
        .map(|f| cameras.iter().map(|c| render(f, c, opts).image).collect())
        .collect();
    let mut rows = Vec::with_capacity(qps.len());
    for &qp in qps {
        let cfg = BakeConfig {
            group_size,
            prune_ratio: 0.5,
            target_count: usize::MAX,
            backend: match qp {
                QpSetting::Lossless => Backend::LosslessInternal,
                QpSetting::Qp(_) => Backend::H264External,
            },
            base_qp: match qp {
                QpSetting::Lossless => 0,
                QpSetting::Qp(q) => q,
            },
            ..BakeConfig::default()
        };
        let (groups, report) = bake_groups(frames, &cfg)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for (gi, g) in groups.iter().enumerate() {
            let entry = GroupEntry::describe(gi, g);
            let stack = decode_group(g, &entry)?;
            for t in 0..stack.num_frames() {
                let decoded = unpack_frame(&stack, t)?;
                for (ci, cam) in cameras.iter().enumerate() {
                    let img = render(&decoded, cam, opts).image;
                    total += psnr(&reference[decoded.frame_index][ci], &img)?;
                    count += 1;
                }
            }
        }
        rows.push(RdRow {
            qp,
            bytes_per_frame: report.bytes_per_frame(),
            psnr_db: total / count.max(1) as f64,
        });
    }
    Ok(rows)
}

pub fn rd_csv(rows: &[RdRow]) -> String {
    let mut out = format!("{RD_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{:.3},{:.4}\n", r.qp, r.bytes_per_frame / 1000.0, r.psnr_db));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::smooth_sequence;

    #[test]
    fn lossless_row_matches_quantization_only() {
        let frames = smooth_sequence(400, 4, 0, 1);
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 48, 48).unwrap();
        let opts = RenderOptions::default();
        let rows = rate_distortion_sweep(&frames, &[QpSetting::Lossless], &[cam.clone()], 4, &opts).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].psnr_db > 40.0, "{}", rows[0].psnr_db);

        // same number without the codec in the loop
        let layout = frames[0].layout();
        let stack = crate::pack::pack_group(&frames, &layout).unwrap();
        let mut total = 0.0;
        for t in 0..4 {
            let q = unpack_frame(&stack, t).unwrap();
            total += psnr(&render(&frames[t], &cam, &opts).image, &render(&q, &cam, &opts).image).unwrap();
        }
        assert!((rows[0].psnr_db - total / 4.0).abs() < 1e-9);
        let csv = rd_csv(&rows);
        assert!(csv.starts_with("qp,kb_per_frame,psnr_db\nlossless,"));
    }

    #[test]
    fn needs_a_camera() {
        let frames = smooth_sequence(10, 1, 0, 1);
        assert!(rate_distortion_sweep(&frames, &[QpSetting::Lossless], &[], 1, &RenderOptions::default()).is_err());
    }
}
