//! Wall-clock budgets. Built with optimizations through the workspace test profile.

use std::time::{Duration, Instant};

use gvv::bake::{bake_groups, BakeConfig};
use gvv::render::{render, Camera, RenderOptions};
use gvv::synth::{random_frame, smooth_sequence};

#[test]
fn render_100k_at_1080p_single_threaded() {
    let frame = random_frame(100_000, 0, 1);
    let cam = Camera::orbit([0.0; 3], 3.0, 20.0, 10.0, 50.0, 1920, 1080).unwrap();
    let opts = RenderOptions {
        sh_degree: 0,
        parallel: false,
    };
    let mut best = Duration::MAX;
    for _ in 0..2 {
        let t0 = Instant::now();
        let out = render(&frame, &cam, &opts);
        best = best.min(t0.elapsed());
        assert_eq!(out.image.width, 1920);
    }
    assert!(best < Duration::from_secs(1), "{best:?}");
}

#[test]
fn bake_100k_under_two_seconds_per_frame() {
    let frames = smooth_sequence(100_000, 4, 0, 2);
    let (_, report) = bake_groups(&frames, &BakeConfig::default()).unwrap();
    assert!(report.seconds_per_frame() < 2.0, "{:.3} s/frame", report.seconds_per_frame());
}
