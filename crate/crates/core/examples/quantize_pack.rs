//! Morton-sorts a frame group, quantizes it into attribute planes and reports the
//! worst-case error per attribute after unpacking.

use gvv::pack::{pack_group, unpack_frame};
use gvv::splat::Attribute;
use gvv::synth::smooth_sequence;

fn main() -> gvv::Result<()> {
    let frames = smooth_sequence(10_000, 5, 1, 3);
    let stack = pack_group(&frames, &frames[0].layout())?;
    println!(
        "{} splats on a {side}x{side} plane, {} channels, {} frames",
        stack.splat_count(),
        stack.layout().total_dims,
        stack.num_frames(),
        side = stack.side()
    );
    let order = stack.permutation();
    for t in 0..stack.num_frames() {
        let back = unpack_frame(&stack, t)?;
        let mut line = format!("frame {t}:");
        for aq in stack.quant() {
            // rotation is renormalized on unpack
            if aq.ranges.is_empty() || aq.attribute == Attribute::Rotation {
                continue;
            }
            let mut worst: f64 = 0.0;
            for (px, &src) in order.iter().enumerate() {
                let a = frames[t].splats()[src as usize].attribute(aq.attribute);
                let b = back.splats()[px].attribute(aq.attribute);
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((*x as f64 - *y as f64).abs());
                }
            }
            line += &format!(" {}={worst:.2e}", aq.attribute.name());
        }
        println!("{line}");
    }
    Ok(())
}
