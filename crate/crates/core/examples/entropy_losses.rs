//! Residual entropy and temporal losses between consecutive frames of a smooth sequence and
//! of two unrelated frames.

use gvv::regularizers::entropy::{bin_probability, Noise};
use gvv::regularizers::{combine_losses, pair_losses, LossWeights};
use gvv::synth::{random_frame, smooth_sequence};

fn main() -> gvv::Result<()> {
    println!("bits at the mode of N(0, 1): {:.4}", -bin_probability(0.0, 0.0, 1.0).log2());

    let seq = smooth_sequence(5_000, 2, 0, 9);
    let mut other = random_frame(5_000, 0, 10);
    other.frame_index = 1;
    for (name, next) in [("smooth", &seq[1]), ("unrelated", &other)] {
        let l = pair_losses(&seq[0], next, Noise::Seeded(1))?;
        let total = combine_losses(0.05, 0.1, l.entropy.bits, l.temporal.value, &LossWeights::default());
        println!(
            "{name:>9}: entropy {:.2} bits/splat, temporal {:.4}, combined {total:.4}",
            l.entropy.bits, l.temporal.value
        );
    }
    Ok(())
}
