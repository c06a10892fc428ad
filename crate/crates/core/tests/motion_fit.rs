use std::time::Instant;

use gvv::motion::{fit_motion, Chamfer, FitOptions, HashGridConfig, MotionObjective, SupervisedL2};
use gvv::splat::Aabb;
use gvv::synth::random_points;

fn mean_error(a: &[[f32; 3]], b: &[[f32; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (0..3).map(|k| (p[k] as f64 - q[k] as f64).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / a.len() as f64
}

#[test]
fn affine_deformation_supervised() {
    let pts = random_points(2000, 13);
    let affine = |p: &[f32; 3]| [1.05 * p[0] + 0.03 * p[1], 0.97 * p[1] + 0.02, p[2] - 0.04 * p[0]];
    let target: Vec<[f32; 3]> = pts.iter().map(affine).collect();
    let diag = Aabb::from_points(&pts).unwrap().diagonal() as f64;
    let t = Instant::now();
    let report = fit_motion(&pts, &SupervisedL2::new(&target), HashGridConfig::default(), &FitOptions::default()).unwrap();
    let err = mean_error(&report.field.warp(&pts), &target);
    println!("affine: mean error {err:.3e} (limit {:.3e}), {:.1} s", 1e-3 * diag, t.elapsed().as_secs_f64());
    assert!(err < 1e-3 * diag);
}

#[test]
fn bend_chamfer_drops_tenfold() {
    let pts = random_points(3000, 12);
    let bend = |p: &[f32; 3]| [p[0], p[1] + 0.15 * (2.0 * p[0]).sin(), p[2]];
    let target: Vec<[f32; 3]> = pts.iter().map(bend).collect();
    let chamfer = Chamfer::new(&target).unwrap();
    let p64: Vec<[f64; 3]> = pts.iter().map(|p| p.map(|v| v as f64)).collect();
    let before = chamfer.evaluate(&p64).unwrap().0;
    let report = fit_motion(&pts, &chamfer, HashGridConfig::default(), &FitOptions::default()).unwrap();
    println!("bend: chamfer {before:.3e} -> {:.3e}", report.final_loss);
    assert!(report.final_loss * 10.0 <= before);
}
