//! Pinhole camera with an OpenCV-style frame: +x right, +y down, +z forward.

use std::path::Path;

use crate::error::{Error, Result};
use crate::splat::Aabb;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-to-camera transform, row-major; the last row is `[0, 0, 0, 1]`.
    pub view: [[f32; 4]; 4],
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u32,
    pub height: u32,
    pub near: f32,
    pub far: f32,
}

fn sub(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f32; 3], b: [f32; 3]) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f32; 3]) -> Option<[f32; 3]> {
    let n = dot(a, a).sqrt();
    (n > 0.0 && n.is_finite()).then(|| a.map(|v| v / n))
}

impl Camera {
    pub fn new(view: [[f32; 4]; 4], fx: f32, fy: f32, cx: f32, cy: f32, width: u32, height: u32) -> Result<Camera> {
        let cam = Camera {
            view,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near: 0.01,
            far: 1000.0,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be at least 1x1"));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::invalid("need 0 < near < far"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` pointing towards the top of the image.
    pub fn look_at(
        eye: [f32; 3],
        target: [f32; 3],
        up: [f32; 3],
        fov_y_deg: f32,
        width: u32,
        height: u32,
    ) -> Result<Camera> {
        let forward = normalize(sub(target, eye)).ok_or_else(|| Error::invalid("eye equals target"))?;
        let right = normalize(cross(forward, up)).ok_or_else(|| Error::invalid("up is parallel to view direction"))?;
        let down = cross(forward, right);
        let rows = [right, down, forward];
        let mut view = [[0.0f32; 4]; 4];
        for (r, axis) in rows.iter().enumerate() {
            view[r][..3].copy_from_slice(axis);
            view[r][3] = -dot(*axis, eye);
        }
        view[3][3] = 1.0;
        let fy = 0.5 * height as f32 / (0.5 * fov_y_deg.to_radians()).tan();
        Camera::new(view, fy, fy, 0.5 * width as f32, 0.5 * height as f32, width, height)
    }

    /// Camera on a circle of `radius` around `target` in the xz-plane, +y up.
    pub fn orbit(target: [f32; 3], radius: f32, azimuth_deg: f32, elevation_deg: f32, fov_y_deg: f32, width: u32, height: u32) -> Result<Camera> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let eye = [
            target[0] + radius * el.cos() * az.sin(),
            target[1] + radius * el.sin(),
            target[2] - radius * el.cos() * az.cos(),
        ];
        Camera::look_at(eye, target, [0.0, 1.0, 0.0], fov_y_deg, width, height)
    }

    /// Orbit camera at 20 degrees elevation with `bbox` fully in view.
    pub fn framing(bbox: &Aabb, width: u32, height: u32) -> Result<Camera> {
        let center = [0, 1, 2].map(|k| 0.5 * (bbox.min[k] + bbox.max[k]));
        let radius = (1.3 * bbox.diagonal()).max(1e-3);
        Camera::orbit(center, radius, 0.0, 20.0, 50.0, width, height)
    }

    pub fn rotation(&self) -> [[f32; 3]; 3] {
        [0, 1, 2].map(|r| [self.view[r][0], self.view[r][1], self.view[r][2]])
    }

    pub fn to_camera(&self, p: [f32; 3]) -> [f32; 3] {
        [0, 1, 2].map(|r| {
            self.view[r][0] * p[0] + self.view[r][1] * p[1] + self.view[r][2] * p[2] + self.view[r][3]
        })
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> [f32; 3] {
        let r = self.rotation();
        let t = [self.view[0][3], self.view[1][3], self.view[2][3]];
        [0, 1, 2].map(|c| -(r[0][c] * t[0] + r[1][c] * t[1] + r[2][c] * t[2]))
    }

    /// Parses the camera text format.
    ///
    /// One `key value...` pair per line, `#` starts a comment:
    ///
    /// ```text
    /// width 640
    /// height 480
    /// fov_y 50          # or: fx, fy, cx, cy
    /// eye 0 0 -3
    /// target 0 0 0
    /// up 0 1 0          # optional, default +y
    /// near 0.01         # optional
    /// far 1000          # optional
    /// ```
    ///
    /// `view` followed by 16 row-major numbers may replace `eye`/`target`/`up`.
    pub fn parse(text: &str) -> Result<Camera> {
        let mut width = None;
        let mut height = None;
        let mut fov = None;
        let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
        let (mut eye, mut target, mut up) = (None, None, [0.0, 1.0, 0.0]);
        let mut view = None;
        let (mut near, mut far) = (0.01, 1000.0);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(|c: char| c.is_whitespace() || c == '=').filter(|s| !s.is_empty());
            let key = parts.next().unwrap();
            let nums = parts
                .map(|s| s.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid(format!("camera line {}: {e}", lineno + 1)))?;
            let want = |n: usize| -> Result<()> {
                if nums.len() == n {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("camera line {}: `{key}` takes {n} numbers", lineno + 1)))
                }
            };
            let v3 = |nums: &[f32]| [nums[0], nums[1], nums[2]];
            match key {
                "width" => { want(1)?; width = Some(nums[0] as u32) }
                "height" => { want(1)?; height = Some(nums[0] as u32) }
                "fov_y" => { want(1)?; fov = Some(nums[0]) }
                "fx" => { want(1)?; fx = Some(nums[0]) }
                "fy" => { want(1)?; fy = Some(nums[0]) }
                "cx" => { want(1)?; cx = Some(nums[0]) }
                "cy" => { want(1)?; cy = Some(nums[0]) }
                "near" => { want(1)?; near = nums[0] }
                "far" => { want(1)?; far = nums[0] }
                "eye" => { want(3)?; eye = Some(v3(&nums)) }
                "target" => { want(3)?; target = Some(v3(&nums)) }
                "up" => { want(3)?; up = v3(&nums) }
                "view" => {
                    want(16)?;
                    let mut m = [[0.0; 4]; 4];
                    for (i, v) in nums.iter().enumerate() {
                        m[i / 4][i % 4] = *v;
                    }
                    view = Some(m);
                }
                other => return Err(Error::invalid(format!("unknown camera key `{other}`"))),
            }
        }
        let width = width.ok_or_else(|| Error::invalid("camera needs width"))?;
        let height = height.ok_or_else(|| Error::invalid("camera needs height"))?;
        let mut cam = match (view, eye, target) {
            (Some(view), _, _) => Camera::new(view, 1.0, 1.0, 0.0, 0.0, width, height)?,
            (None, Some(eye), Some(target)) => Camera::look_at(eye, target, up, fov.unwrap_or(50.0), width, height)?,
            _ => return Err(Error::invalid("camera needs `view` or `eye` and `target`")),
        };
        if let Some(fov) = fov {
            let f = 0.5 * height as f32 / (0.5 * fov.to_radians()).tan();
            cam.fx = f;
            cam.fy = f;
        }
        if view.is_some() && fov.is_none() && fx.is_none() {
            return Err(Error::invalid("camera with `view` needs `fov_y` or `fx`"));
        }
        cam.fx = fx.unwrap_or(cam.fx);
        cam.fy = fy.unwrap_or(fx.unwrap_or(cam.fy));
        cam.cx = cx.unwrap_or(0.5 * width as f32);
        cam.cy = cy.unwrap_or(0.5 * height as f32);
        cam.near = near;
        cam.far = far;
        cam.validate()?;
        Ok(cam)
    }

    pub fn load(path: &Path) -> Result<Camera> {
        Camera::parse(&std::fs::read_to_string(path)?)
    }
}
