use crate::error::{Error, Result};
use crate::splat::GaussianFrame;

pub const DEFAULT_PRUNE_RATIO: f64 = 0.3;
pub const DEFAULT_TARGET_COUNT: usize = 100_000;

#[derive(Debug, Clone)]
pub struct PruneReport {
    pub frame: GaussianFrame,
    pub rounds: usize,
    /// Splat count after each round.
    pub counts: Vec<usize>,
}

/// Splats removed by one round at `count`.
pub fn round_removal(count: usize, ratio: f64) -> usize {
    ((count as f64 * ratio).round() as usize).clamp(1, count.saturating_sub(1).max(1))
}

fn check_args(ratio: f64, target_count: usize) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("prune ratio {ratio} outside (0, 1)")));
    }
    if target_count < 1 {
        return Err(Error::invalid("target count must be at least 1"));
    }
    Ok(())
}

/// Indices surviving one round, ascending. Ties break by index, so the earlier splat goes first.
fn round_survivors(opacity: Vec<f32>, ratio: f64) -> Vec<usize> {
    let n = opacity.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| opacity[a].total_cmp(&opacity[b]).then(a.cmp(&b)));
    let mut keep = order.split_off(round_removal(n, ratio));
    keep.sort_unstable();
    keep
}

/// Indices into `opacity` that survive pruning without a fine-tune step, plus the round count.
pub fn prune_selection(opacity: &[f32], ratio: f64, target_count: usize) -> Result<(Vec<usize>, usize)> {
    check_args(ratio, target_count)?;
    let mut alive: Vec<usize> = (0..opacity.len()).collect();
    let mut rounds = 0;
    while alive.len() > target_count {
        let keep = round_survivors(alive.iter().map(|i| opacity[*i]).collect(), ratio);
        alive = keep.into_iter().map(|k| alive[k]).collect();
        rounds += 1;
    }
    Ok((alive, rounds))
}

/// Repeatedly drops the `ratio` fraction of lowest-opacity splats until at most
/// `target_count` remain, calling `finetune` after every round. Survivors keep their relative order.
pub fn prune_keyframe(
    frame: GaussianFrame,
    ratio: f64,
    target_count: usize,
    finetune: &mut dyn FnMut(GaussianFrame) -> Result<GaussianFrame>,
) -> Result<PruneReport> {
    check_args(ratio, target_count)?;
    let mut frame = frame;
    let mut counts = Vec::new();
    while frame.len() > target_count {
        let before = frame.len();
        let keep = round_survivors(frame.splats().iter().map(|s| s.opacity_logit).collect(), ratio);
        frame = finetune(frame.select(&keep)?)?;
        if frame.len() >= before {
            return Err(Error::invalid("fine-tune hook grew the splat count"));
        }
        counts.push(frame.len());
    }
    Ok(PruneReport {
        rounds: counts.len(),
        counts,
        frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::GaussianSplat;
    use crate::synth::random_frame;
    use proptest::prelude::*;

    fn with_opacities(ops: &[f32]) -> GaussianFrame {
        let base = random_frame(ops.len(), 0, 1);
        let splats = base
            .splats()
            .iter()
            .zip(ops)
            .map(|(s, o)| GaussianSplat {
                opacity_logit: *o,
                ..s.clone()
            })
            .collect();
        GaussianFrame::new(0, splats).unwrap()
    }

    fn identity(f: GaussianFrame) -> Result<GaussianFrame> {
        Ok(f)
    }

    #[test]
    fn ten_splats_lose_three_lowest() {
        let ops = [0.5, -2.0, 3.0, -1.0, 0.0, 2.0, -3.0, 1.0, 4.0, 1.5];
        let frame = with_opacities(&ops);
        let r = prune_keyframe(frame.clone(), 0.3, 7, &mut identity).unwrap();
        assert_eq!(r.rounds, 1);
        assert_eq!(r.frame.len(), 7);
        let kept: Vec<f32> = r.frame.splats().iter().map(|s| s.opacity_logit).collect();
        assert_eq!(kept, vec![0.5, 3.0, 0.0, 2.0, 1.0, 4.0, 1.5]);
        assert_eq!(r.frame.splats()[0], frame.splats()[0]);
    }

    #[test]
    fn small_frames_pass_through() {
        let frame = random_frame(50, 1, 2);
        let r = prune_keyframe(frame.clone(), 0.3, 100, &mut identity).unwrap();
        assert_eq!(r.rounds, 0);
        assert_eq!(r.frame.splats(), frame.splats());
    }

    #[test]
    fn round_counts_for_large_keyframe() {
        let mut n = 250_000;
        let mut rounds = 0;
        while n > 100_000 {
            n -= round_removal(n, 0.3);
            rounds += 1;
        }
        assert_eq!((rounds, n), (3, 85_750));
    }

    #[test]
    fn uniform_opacity_ties_break_by_index() {
        let frame = with_opacities(&[1.0; 6]);
        let r = prune_keyframe(frame.clone(), 0.5, 3, &mut identity).unwrap();
        assert_eq!(r.frame.splats(), &frame.splats()[3..]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = random_frame(10, 0, 1);
        assert!(prune_keyframe(f.clone(), 0.0, 5, &mut identity).is_err());
        assert!(prune_keyframe(f.clone(), 1.0, 5, &mut identity).is_err());
        assert!(prune_keyframe(f, 0.3, 0, &mut identity).is_err());
    }

    #[test]
    fn hook_runs_every_round() {
        let mut calls = 0;
        let mut hook = |f: GaussianFrame| {
            calls += 1;
            Ok(f)
        };
        let r = prune_keyframe(random_frame(1000, 0, 3), 0.3, 100, &mut hook).unwrap();
        assert_eq!(calls, r.rounds);
        assert!(r.frame.len() <= 100);
    }

    #[test]
    fn selection_matches_identity_hook() {
        let frame = random_frame(3000, 0, 4);
        let ops: Vec<f32> = frame.splats().iter().map(|s| s.opacity_logit).collect();
        let (keep, rounds) = prune_selection(&ops, 0.3, 500).unwrap();
        let r = prune_keyframe(frame.clone(), 0.3, 500, &mut identity).unwrap();
        assert_eq!(rounds, r.rounds);
        assert_eq!(frame.select(&keep).unwrap().splats(), r.frame.splats());
    }

    proptest! {
        #[test]
        fn survivors_dominate_pruned(ops in prop::collection::vec(-5.0f32..5.0, 2..80), ratio in 0.05f64..0.95, target in 1usize..40) {
            let frame = with_opacities(&ops);
            let r = prune_keyframe(frame.clone(), ratio, target, &mut identity).unwrap();
            prop_assert!(r.frame.len() <= target);
            prop_assert!(r.frame.len() <= frame.len());
            let min_kept = r.frame.splats().iter().map(|s| s.opacity_logit).fold(f32::INFINITY, f32::min);
            let kept: Vec<&GaussianSplat> = r.frame.splats().iter().collect();
            let pruned = frame.splats().iter().filter(|s| !kept.contains(s));
            for s in pruned {
                prop_assert!(s.opacity_logit <= min_kept);
            }
            for s in r.frame.splats() {
                prop_assert!(frame.splats().contains(s));
            }
        }
    }
}
