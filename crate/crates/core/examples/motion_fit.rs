//! Fits a hash-grid motion field to a bend deformation, first with known correspondence and
//! then with the chamfer objective.

use gvv::motion::{fit_motion, Chamfer, FitOptions, HashGridConfig, SupervisedL2};
use gvv::synth::random_points;

fn main() -> gvv::Result<()> {
    let prev = random_points(3_000, 4);
    let next: Vec<[f32; 3]> = prev
        .iter()
        .map(|p| [p[0], p[1] + 0.15 * (2.0 * p[0]).sin(), p[2]])
        .collect();
    let opts = FitOptions {
        iterations: 200,
        ..FitOptions::default()
    };
    let cfg = HashGridConfig::default();

    let sup = fit_motion(&prev, &SupervisedL2::new(&next), cfg, &opts)?;
    let chamfer = Chamfer::new(&next)?;
    let cd = fit_motion(&prev, &chamfer, cfg, &opts)?;
    let as_f64 = |pts: &[[f32; 3]]| pts.iter().map(|p| p.map(|v| v as f64)).collect::<Vec<_>>();
    println!("chamfer distance before fitting {:.3e}", chamfer.distance(&as_f64(&prev))?);
    for (name, r) in [("supervised", &sup), ("chamfer", &cd)] {
        let warped = r.field.warp(&prev);
        println!(
            "{name:>10}: loss {:.3e} -> {:.3e}, chamfer distance after {:.3e}, {:.1} s",
            r.losses[0],
            r.final_loss,
            chamfer.distance(&as_f64(&warped))?,
            r.elapsed.as_secs_f64()
        );
    }
    let path = std::env::temp_dir().join("gvv-motion.bin");
    sup.field.save(&path)?;
    println!("checkpoint: {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    Ok(())
}
