//! Iterative opacity pruning of a keyframe down to a target count.

use gvv::motion::prune_keyframe;
use gvv::synth::random_frame;

fn main() -> gvv::Result<()> {
    let frame = random_frame(250_000, 0, 1);
    // the hook is where keyframe refinement would run between rounds
    let report = prune_keyframe(frame, 0.3, 100_000, &mut |f| Ok(f))?;
    println!("{} rounds: {:?}", report.rounds, report.counts);
    Ok(())
}
