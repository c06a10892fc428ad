//! Writes a smooth synthetic splat sequence as PLY frames.
//!
//! cargo run --example synth_frames -- out/frames [splats] [frames]

use std::path::PathBuf;

use gvv::io::write_sequence;
use gvv::synth::smooth_sequence;

fn main() -> gvv::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "frames".into()));
    let splats = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let frames = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let seq = smooth_sequence(splats, frames, 1, 7);
    write_sequence(&dir, &seq, "ply")?;
    println!("{frames} frames x {splats} splats -> {}", dir.display());
    Ok(())
}
