//! Mean packed-pixel distance from each point to its 8 nearest 3D neighbours, Morton order
//! against a shuffled order.

use gvv::morton::sort_splats_morton;
use gvv::pack::plane_side;
use gvv::splat::{GaussianFrame, GaussianSplat};
use gvv::synth::random_points;
use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn mean_pixel_distance(points: &[[f64; 3]], order: &[u32], side: usize) -> f64 {
    let mut pixel = vec![0usize; order.len()];
    for (px, &i) in order.iter().enumerate() {
        pixel[i as usize] = px;
    }
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(points);
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, p) in points.iter().enumerate() {
        for nb in tree.nearest_n::<SquaredEuclidean>(p, 9) {
            let j = nb.item as usize;
            if j == i {
                continue;
            }
            let (a, b) = (pixel[i], pixel[j]);
            let dx = (a % side) as f64 - (b % side) as f64;
            let dy = (a / side) as f64 - (b / side) as f64;
            total += (dx * dx + dy * dy).sqrt();
            n += 1;
        }
    }
    total / n as f64
}

fn main() -> gvv::Result<()> {
    let pts = random_points(10_000, 1);
    let frame = GaussianFrame::new(
        0,
        pts.iter()
            .map(|&position| GaussianSplat {
                position,
                ..Default::default()
            })
            .collect(),
    )?;
    let side = plane_side(pts.len());
    let p64: Vec<[f64; 3]> = pts.iter().map(|p| p.map(|v| v as f64)).collect();
    let morton = sort_splats_morton(&frame);
    let mut shuffled: Vec<u32> = (0..pts.len() as u32).collect();
    shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(2));
    let m = mean_pixel_distance(&p64, &morton, side);
    let r = mean_pixel_distance(&p64, &shuffled, side);
    println!("morton {m:.2} px, shuffled {r:.2} px, ratio {:.3}", m / r);
    Ok(())
}
