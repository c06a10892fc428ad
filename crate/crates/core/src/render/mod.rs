//! Deterministic CPU splat rasterizer.
//!
//! Splats are projected with the local affine approximation of the
//! perspective map, depth-sorted, binned into 16×16 pixel tiles and
//! alpha-composited front to back. Tiles own their pixels, so the parallel
//! and sequential paths produce identical bytes.

pub mod camera;
pub mod image;

use rayon::prelude::*;

pub use self::camera::Camera;
pub use self::image::{psnr, ImageBuffer, PSNR_MAX};

use crate::splat::{GaussianFrame, GaussianSplat};

/// Added to the diagonal of every projected covariance, in pixels².
pub const COV2D_DILATION: f32 = 0.3;
/// Splats are evaluated inside the bounding box of their 3σ ellipse.
pub const EXTENT_SIGMA: f32 = 3.0;
/// Contributions below this alpha are skipped.
pub const MIN_ALPHA: f32 = 1.0 / 255.0;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f32 = 1.0 / 255.0;
pub const TILE_SIZE: u32 = 16;

pub type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose(a: &Mat3) -> Mat3 {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| a[j][i]))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_mat(q: [f32; 4]) -> Mat3 {
    let [w, x, y, z] = q.map(|v| v as f64);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// World-space covariance `R S Sᵀ Rᵀ`.
pub fn covariance_3d(rotation: [f32; 4], scale: [f32; 3]) -> Mat3 {
    let r = quat_to_mat(rotation);
    let m: Mat3 = [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[i][j] * scale[j] as f64));
    mat_mul(&m, &transpose(&m))
}

/// Screen-space footprint of one splat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSplat {
    pub mean: [f32; 2],
    /// Upper triangle `(xx, xy, yy)` of the dilated 2D covariance.
    pub cov: [f32; 3],
    pub depth: f32,
}

/// Projects a splat; `None` means it lies outside the near/far range.
pub fn project_splat(splat: &GaussianSplat, camera: &Camera) -> Option<ProjectedSplat> {
    let t = camera.to_camera(splat.position);
    let (tx, ty, tz) = (t[0] as f64, t[1] as f64, t[2] as f64);
    if !(tz > camera.near as f64 && tz < camera.far as f64) {
        return None;
    }
    let (fx, fy) = (camera.fx as f64, camera.fy as f64);
    // Clamp the Jacobian's evaluation point to a bit beyond the frustum.
    let lim_x = 1.3 * (0.5 * camera.width as f64 / fx);
    let lim_y = 1.3 * (0.5 * camera.height as f64 / fy);
    let jx = (tx / tz).clamp(-lim_x, lim_x) * tz;
    let jy = (ty / tz).clamp(-lim_y, lim_y) * tz;
    let j: Mat3 = [
        [fx / tz, 0.0, -fx * jx / (tz * tz)],
        [0.0, fy / tz, -fy * jy / (tz * tz)],
        [0.0, 0.0, 0.0],
    ];
    let w: Mat3 = camera.rotation().map(|row| row.map(|v| v as f64));
    let sigma = covariance_3d(splat.rotation, splat.scale());
    let jw = mat_mul(&j, &w);
    let cov = mat_mul(&mat_mul(&jw, &sigma), &transpose(&jw));
    Some(ProjectedSplat {
        mean: [
            (fx * tx / tz + camera.cx as f64) as f32,
            (fy * ty / tz + camera.cy as f64) as f32,
        ],
        cov: [
            (cov[0][0] + COV2D_DILATION as f64) as f32,
            cov[0][1] as f32,
            (cov[1][1] + COV2D_DILATION as f64) as f32,
        ],
        depth: tz as f32,
    })
}

const SH_C1: f32 = 0.488_602_5;
const SH_C2: [f32; 5] = [1.092_548_5, -1.092_548_5, 0.315_391_57, -1.092_548_5, 0.546_274_2];
const SH_C3: [f32; 7] = [
    -0.590_043_6, 2.890_611_4, -0.457_045_8, 0.373_176_33, -0.457_045_8, 1.445_305_7, -0.590_043_6,
];

fn sh_basis(d: [f32; 3], degree: u32) -> Vec<f32> {
    let [x, y, z] = d;
    let mut b = Vec::with_capacity(15);
    if degree >= 1 {
        b.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b.extend([
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]);
        if degree >= 3 {
            b.extend([
                SH_C3[0] * y * (3.0 * xx - yy),
                SH_C3[1] * x * y * z,
                SH_C3[2] * y * (4.0 * zz - xx - yy),
                SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
                SH_C3[4] * x * (4.0 * zz - xx - yy),
                SH_C3[5] * z * (xx - yy),
                SH_C3[6] * x * (xx - 3.0 * yy),
            ]);
        }
    }
    b
}

/// View-dependent colour: base colour plus SH terms up to `degree`, clamped at 0.
pub fn splat_color(splat: &GaussianSplat, splat_degree: u8, eye: [f32; 3], degree: u32) -> [f32; 3] {
    let degree = degree.min(splat_degree as u32);
    if degree == 0 || splat.sh.is_empty() {
        return splat.color;
    }
    let d = [0, 1, 2].map(|k| splat.position[k] - eye[k]);
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
    let basis = sh_basis(d.map(|v| v / n), degree);
    let per_channel = splat.sh.len() / 3;
    [0, 1, 2].map(|ch| {
        let coeffs = &splat.sh[ch * per_channel..];
        let v: f32 = basis.iter().zip(coeffs).map(|(b, c)| b * c).sum();
        (splat.color[ch] + v).max(0.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Highest SH degree evaluated.
    pub sh_degree: u32,
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            sh_degree: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: ImageBuffer,
    /// Splats outside the near/far range or the image.
    pub culled: usize,
    /// Splats skipped because their 2D covariance was not invertible.
    pub singular: usize,
}

#[derive(Debug, Clone, Copy)]
struct Prepared {
    mean: [f32; 2],
    conic: [f32; 3],
    half_extent: [f32; 2],
    color: [f32; 3],
    opacity: f32,
    depth: f32,
}

impl Prepared {
    /// Total order on everything that affects the splat's contribution.
    fn sort_key(&self) -> [u32; 11] {
        let b = f32::to_bits;
        [
            b(self.mean[0]), b(self.mean[1]),
            b(self.conic[0]), b(self.conic[1]), b(self.conic[2]),
            b(self.half_extent[0]), b(self.half_extent[1]),
            b(self.color[0]), b(self.color[1]), b(self.color[2]),
            b(self.opacity),
        ]
    }
}

fn prepare(frame: &GaussianFrame, camera: &Camera, opts: &RenderOptions) -> (Vec<Prepared>, usize, usize) {
    let eye = camera.center();
    let (w, h) = (camera.width as f32, camera.height as f32);
    let mut culled = 0;
    let mut singular = 0;
    let mut out = Vec::with_capacity(frame.len());
    for s in frame.splats() {
        let Some(p) = project_splat(s, camera) else {
            culled += 1;
            continue;
        };
        let [a, b, c] = p.cov;
        let det = a * c - b * b;
        if !(det > 0.0) || !det.is_finite() {
            singular += 1;
            continue;
        }
        let half_extent = [EXTENT_SIGMA * a.sqrt(), EXTENT_SIGMA * c.sqrt()];
        if p.mean[0] + half_extent[0] < 0.0
            || p.mean[0] - half_extent[0] > w
            || p.mean[1] + half_extent[1] < 0.0
            || p.mean[1] - half_extent[1] > h
        {
            culled += 1;
            continue;
        }
        out.push(Prepared {
            mean: p.mean,
            conic: [c / det, -b / det, a / det],
            half_extent,
            color: splat_color(s, frame.sh_degree, eye, opts.sh_degree),
            opacity: s.opacity(),
            depth: p.depth,
        });
    }
    // Depth first, then content, so the result does not depend on input order.
    out.sort_by(|x, y| {
        x.depth
            .total_cmp(&y.depth)
            .then_with(|| x.sort_key().cmp(&y.sort_key()))
    });
    (out, culled, singular)
}

fn tile_range(center: f32, half: f32, limit: u32) -> Option<(u32, u32)> {
    let lo = ((center - half).floor().max(0.0) as u32) / TILE_SIZE;
    let hi_px = (center + half).ceil();
    if hi_px < 0.0 {
        return None;
    }
    let hi = ((hi_px as u32).min(limit.saturating_sub(1))) / TILE_SIZE;
    (lo <= hi).then_some((lo, hi))
}

/// Pixel values `[r, g, b, alpha]` of one tile, row-major within the tile.
fn render_tile(splats: &[Prepared], list: &[u32], x0: u32, y0: u32, x1: u32, y1: u32) -> Vec<[f32; 4]> {
    let mut out = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
    for py in y0..y1 {
        for px in x0..x1 {
            let (sx, sy) = (px as f32 + 0.5, py as f32 + 0.5);
            let mut transmittance = 1.0f32;
            let mut rgb = [0.0f32; 3];
            for &i in list {
                let s = &splats[i as usize];
                let dx = sx - s.mean[0];
                let dy = sy - s.mean[1];
                if dx.abs() > s.half_extent[0] || dy.abs() > s.half_extent[1] {
                    continue;
                }
                let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
                if power > 0.0 {
                    continue;
                }
                let alpha = s.opacity * power.exp();
                if alpha < MIN_ALPHA {
                    continue;
                }
                let weight = alpha * transmittance;
                for k in 0..3 {
                    rgb[k] += s.color[k] * weight;
                }
                transmittance *= 1.0 - alpha;
                if transmittance < MIN_TRANSMITTANCE {
                    break;
                }
            }
            out.push([rgb[0], rgb[1], rgb[2], 1.0 - transmittance]);
        }
    }
    out
}

/// Renders a frame over a black background.
pub fn render(frame: &GaussianFrame, camera: &Camera, opts: &RenderOptions) -> RenderOutput {
    let (splats, culled, singular) = prepare(frame, camera, opts);
    let (width, height) = (camera.width, camera.height);
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (i, s) in splats.iter().enumerate() {
        let (Some((tx0, tx1)), Some((ty0, ty1))) = (
            tile_range(s.mean[0], s.half_extent[0], width),
            tile_range(s.mean[1], s.half_extent[1], height),
        ) else {
            continue;
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[(ty * tiles_x + tx) as usize].push(i as u32);
            }
        }
    }

    let bounds = |t: usize| {
        let (tx, ty) = (t as u32 % tiles_x, t as u32 / tiles_x);
        let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
        (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
    };
    let work = |t: usize| {
        let (x0, y0, x1, y1) = bounds(t);
        render_tile(&splats, &lists[t], x0, y0, x1, y1)
    };
    let tiles: Vec<Vec<[f32; 4]>> = if opts.parallel {
        (0..lists.len()).into_par_iter().map(work).collect()
    } else {
        (0..lists.len()).map(work).collect()
    };

    let mut image = ImageBuffer::new(width, height);
    let mut alpha = vec![0.0f32; (width * height) as usize];
    for (t, pixels) in tiles.iter().enumerate() {
        let (x0, y0, x1, _) = bounds(t);
        let tw = x1 - x0;
        for (k, px) in pixels.iter().enumerate() {
            let (x, y) = (x0 + k as u32 % tw, y0 + k as u32 / tw);
            let idx = (y * width + x) as usize;
            image.rgb[3 * idx..3 * idx + 3].copy_from_slice(&px[..3]);
            alpha[idx] = px[3];
        }
    }
    image.alpha = Some(alpha);
    RenderOutput {
        image,
        culled,
        singular,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::logit;

    fn identity_camera(width: u32, height: u32, f: f32) -> Camera {
        let view = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        Camera::new(view, f, f, width as f32 / 2.0, height as f32 / 2.0, width, height).unwrap()
    }

    #[test]
    fn covariance_diagonal() {
        let s = covariance_3d([1.0, 0.0, 0.0, 0.0], [2.0, 3.0, 4.0]);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { [4.0, 9.0, 16.0][i] } else { 0.0 };
                assert!((s[i][j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isotropic_covariance_ignores_rotation() {
        let q = crate::splat::normalize_quat([0.3, -0.5, 0.7, 0.1]);
        let s = covariance_3d(q, [1.5, 1.5, 1.5]);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 2.25 } else { 0.0 };
                assert!((s[i][j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn on_axis_projection() {
        let cam = identity_camera(64, 64, 100.0);
        let splat = |z: f32| GaussianSplat {
            position: [0.0, 0.0, z],
            log_scale: [0.05f32.ln(); 3],
            ..Default::default()
        };
        let p = project_splat(&splat(2.0), &cam).unwrap();
        let expect = (0.05 * 100.0 / 2.0f64).powi(2);
        assert!(((p.cov[0] - COV2D_DILATION) as f64 - expect).abs() < 1e-4);
        assert!(((p.cov[2] - COV2D_DILATION) as f64 - expect).abs() < 1e-4);
        assert!(p.cov[1].abs() < 1e-6);
        assert_eq!(p.mean, [32.0, 32.0]);
        let far = project_splat(&splat(4.0), &cam).unwrap();
        let ratio = ((far.cov[0] - COV2D_DILATION) / (p.cov[0] - COV2D_DILATION)).sqrt();
        assert!((ratio - 0.5).abs() < 1e-4);
        assert!(project_splat(&splat(-1.0), &cam).is_none());
    }

    fn solid_splat(pos: [f32; 3], color: [f32; 3], opacity: f32) -> GaussianSplat {
        GaussianSplat {
            position: pos,
            log_scale: [0.001f32.ln(); 3],
            opacity_logit: logit(opacity),
            color,
            ..Default::default()
        }
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = identity_camera(8, 8, 10.0);
        let f = GaussianFrame::new(0, vec![solid_splat([0.0, 0.0, -1.0], [1.0; 3], 0.5)]).unwrap();
        let out = render(&f, &cam, &RenderOptions::default());
        assert_eq!(out.culled, 1);
        assert!(out.image.rgb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulated_weight_is_bounded() {
        let frame = crate::synth::random_frame(2000, 0, 4);
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 96, 64).unwrap();
        let out = render(&frame, &cam, &RenderOptions::default());
        for a in out.image.alpha.as_ref().unwrap() {
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn sh_degree_zero_is_base_color() {
        let mut s = solid_splat([0.0, 0.0, 1.0], [0.2, 0.4, 0.6], 0.9);
        s.sh = vec![0.3; 9];
        assert_eq!(splat_color(&s, 1, [0.0; 3], 0), [0.2, 0.4, 0.6]);
        let c = splat_color(&s, 1, [0.0; 3], 1);
        // direction +z: only the second degree-1 basis function is non-zero
        assert!((c[0] - (0.2 + SH_C1 * 0.3)).abs() < 1e-6);
    }
}
