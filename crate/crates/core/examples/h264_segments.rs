//! Encodes one frame group with the external H.264 encoder and lists the per-segment QP,
//! size and decoded error.

use gvv::codec::{decode_group, encode_group, Backend, CodecConfig, GroupEntry, H264External};
use gvv::pack::pack_group;
use gvv::synth::smooth_sequence;

fn main() -> gvv::Result<()> {
    if !H264External::is_available() {
        eprintln!("ffmpeg not found on PATH or at $GVV_FFMPEG");
        return Ok(());
    }
    let frames = smooth_sequence(4_096, 10, 0, 1);
    let stack = pack_group(&frames, &frames[0].layout())?;
    let enc = encode_group(&stack, &CodecConfig::new(Backend::H264External, 30, 10)?)?;
    let entry = GroupEntry::describe(0, &enc);
    let dec = decode_group(&enc, &entry)?;
    for seg in &enc.segments {
        println!("{:<9} qp {:<9} {:>7} bytes", seg.kind.name(), seg.qp.to_string(), seg.data.len());
    }
    let layout = stack.layout();
    for aq in stack.quant() {
        let c0 = layout.channel_offset(aq.attribute);
        let mut worst = 0u16;
        for t in 0..stack.num_frames() {
            for c in c0..c0 + aq.ranges.len() {
                for (a, b) in stack.plane(t, c).iter().zip(dec.plane(t, c)) {
                    worst = worst.max(a.abs_diff(*b));
                }
            }
        }
        println!("{:<9} max error {worst} of {} levels", aq.attribute.name(), (1u32 << aq.bits) - 1);
    }
    Ok(())
}
