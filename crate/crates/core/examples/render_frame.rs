//! Renders a synthetic frame from four orbit positions to PNG.

use std::time::Instant;

use gvv::render::{render, Camera, RenderOptions};
use gvv::synth::random_frame;

fn main() -> gvv::Result<()> {
    let frame = random_frame(100_000, 1, 2);
    let out = std::env::temp_dir();
    for az in [0.0, 90.0, 180.0, 270.0] {
        let cam = Camera::orbit([0.0; 3], 3.5, az, 15.0, 50.0, 960, 540)?;
        let t0 = Instant::now();
        let r = render(&frame, &cam, &RenderOptions { sh_degree: 1, ..Default::default() });
        let path = out.join(format!("gvv-render-{az:03}.png"));
        r.image.save_png(&path)?;
        println!("{} in {:.0} ms ({} culled)", path.display(), t0.elapsed().as_secs_f64() * 1e3, r.culled);
    }
    Ok(())
}
