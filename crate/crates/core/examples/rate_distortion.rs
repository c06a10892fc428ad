//! Lossless and H.264 rate-distortion points plus a group-size ablation, printed as CSV.

use gvv::bake::{ablation_csv, group_size_ablation, BakeConfig};
use gvv::codec::{H264External, QpSetting};
use gvv::rd::{rate_distortion_sweep, rd_csv};
use gvv::render::{Camera, RenderOptions};
use gvv::synth::smooth_sequence;

fn main() -> gvv::Result<()> {
    let frames = smooth_sequence(8_000, 30, 0, 21);
    let mut qps = vec![QpSetting::Lossless];
    if H264External::is_available() {
        qps.extend([15, 25, 35].map(QpSetting::Qp));
    } else {
        eprintln!("ffmpeg not found; set GVV_FFMPEG for the H.264 rows");
    }
    let cam = Camera::framing(&frames[0].bbox(), 320, 240)?;
    let rows = rate_distortion_sweep(&frames, &qps, &[cam], 10, &RenderOptions::default())?;
    print!("{}", rd_csv(&rows));
    println!();
    let rows = group_size_ablation(&frames, &[5, 10, 15, 30], &BakeConfig::default())?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
