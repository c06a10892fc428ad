//! Seeded synthetic splat scenes for examples, benchmarks and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::splat::{normalize_quat, sh_coeff_count, GaussianFrame, GaussianSplat};

fn random_splat(rng: &mut ChaCha8Rng, sh_degree: u32) -> GaussianSplat {
    let position = [0; 3].map(|_| rng.gen_range(-1.0f32..1.0));
    let rotation = normalize_quat([0; 4].map(|_| rng.gen_range(-1.0f32..1.0)));
    let log_scale = [0; 3].map(|_| rng.gen_range(0.004f32..0.03).ln());
    GaussianSplat {
        position,
        rotation,
        log_scale,
        opacity_logit: rng.gen_range(-2.0..4.0),
        color: [0; 3].map(|_| rng.gen_range(0.0..1.0)),
        sh: (0..sh_coeff_count(sh_degree))
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect(),
    }
}

/// `count` random splats in `[-1, 1]³`.
pub fn random_frame(count: usize, sh_degree: u32, seed: u64) -> GaussianFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = (0..count).map(|_| random_splat(&mut rng, sh_degree)).collect();
    GaussianFrame::new(0, splats).expect("count > 0")
}

/// Independent random frames with a shared splat count.
pub fn random_sequence(count: usize, frames: usize, sh_degree: u32, seed: u64) -> Vec<GaussianFrame> {
    (0..frames)
        .map(|t| {
            let mut f = random_frame(count, sh_degree, seed.wrapping_add(t as u64 * 7919));
            f.frame_index = t;
            f
        })
        .collect()
}

/// Deforms a point with a slow rotation about +y, a drift along +x and a travelling wave.
pub fn smooth_motion(p: [f32; 3], t: f32) -> [f32; 3] {
    let angle = 0.01 * t;
    let (s, c) = angle.sin_cos();
    let x = c * p[0] + s * p[2];
    let z = -s * p[0] + c * p[2];
    let y = p[1] + 0.02 * (2.0 * p[0] + 0.2 * t).sin();
    [x + 0.004 * t, y, z]
}

/// A temporally coherent sequence: the same splats advected by [`smooth_motion`]
/// with a slow colour drift.
pub fn smooth_sequence(count: usize, frames: usize, sh_degree: u32, seed: u64) -> Vec<GaussianFrame> {
    let base = random_frame(count, sh_degree, seed);
    (0..frames)
        .map(|t| {
            let tf = t as f32;
            let splats = base
                .splats()
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.position = smooth_motion(s.position, tf);
                    for c in &mut s.color {
                        *c = (*c + 0.001 * tf).min(1.0);
                    }
                    s
                })
                .collect();
            GaussianFrame::new(t, splats).expect("non-empty")
        })
        .collect()
}

/// `count` points uniformly filling `[-1, 1]³`.
pub fn random_points(count: usize, seed: u64) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| [0; 3].map(|_| rng.gen_range(-1.0f32..1.0)))
        .collect()
}
