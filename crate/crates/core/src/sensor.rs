//! Pinhole depth camera: ray casting against plant cylinders and the ground plane,
//! followed by the additive uniform + depth-proportional noise model.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point2, Pose2};
use crate::world::{PlantInstance, VineyardWorld};

/// Side length of the square depth frame consumed by the networks.
pub const IMAGE_SIZE: usize = 112;
pub const MAX_RANGE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraParams {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub hfov: f64,
    /// Vertical field of view in radians.
    pub vfov: f64,
    pub max_range: f64,
    pub render_ground: bool,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
            hfov: 87f64.to_radians(),
            vfov: 58f64.to_radians(),
            max_range: MAX_RANGE,
            render_ground: true,
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if self.width != IMAGE_SIZE || self.height != IMAGE_SIZE {
            return Err(Error::Shape {
                expected: format!("{IMAGE_SIZE}x{IMAGE_SIZE} camera"),
                actual: format!("{}x{}", self.width, self.height),
            });
        }
        if !(self.hfov > 0.0 && self.hfov < 3.0 && self.vfov > 0.0 && self.vfov < 3.0) {
            return Err(Error::Config("camera field of view must lie in (0, 3) rad".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Config("max_range must be > 0".into()));
        }
        Ok(())
    }

    /// Normalized image-plane coordinates of a pixel centre: (right, up).
    fn image_plane(&self, col: usize, row: usize) -> (f64, f64) {
        let tx = (0.5 * self.hfov).tan();
        let ty = (0.5 * self.vfov).tan();
        let xn = (2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0) * tx;
        let yn = (1.0 - 2.0 * (row as f64 + 0.5) / self.height as f64) * ty;
        (xn, yn)
    }

    /// World-space ray through the centre of pixel (`col`, `row`).
    pub fn pixel_ray(&self, pose: &CameraPose, col: usize, row: usize) -> Ray {
        let (xn, yn) = self.image_plane(col, row);
        let (f, l, u) = pose.axes();
        let d = [
            f[0] - xn * l[0] + yn * u[0],
            f[1] - xn * l[1] + yn * u[1],
            f[2] - xn * l[2] + yn * u[2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        Ray {
            origin: pose.position,
            dir: [d[0] / n, d[1] / n, d[2] / n],
            axis_cos: 1.0 / n,
        }
    }
}

/// Camera position and orientation. Positive pitch tilts the optical axis upwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
}

impl CameraPose {
    /// Camera rigidly mounted `forward` ahead of and `up` above the robot centre.
    pub fn from_robot(pose: &Pose2, forward: f64, up: f64, pitch: f64) -> Self {
        let (s, c) = pose.yaw.sin_cos();
        Self {
            position: [pose.x + forward * c, pose.y + forward * s, up],
            yaw: pose.yaw,
            pitch,
        }
    }

    /// Forward, left and up unit axes.
    fn axes(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        ([cp * cy, cp * sy, sp], [-sy, cy, 0.0], [-sp * cy, -sp * sy, cp])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit direction.
    pub dir: [f64; 3],
    /// Cosine between the ray and the optical axis; range × axis_cos = depth.
    pub axis_cos: f64,
}

/// Vertical solid cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: Point2,
    pub radius: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Cylinder {
    pub fn trunk(p: &PlantInstance) -> Self {
        Self {
            center: p.position,
            radius: p.trunk_radius,
            z_min: 0.0,
            z_max: p.height,
        }
    }

    pub fn canopy(p: &PlantInstance) -> Self {
        Self {
            center: p.position,
            radius: p.canopy_half_width,
            z_min: p.canopy_base,
            z_max: p.height,
        }
    }

    fn contains(&self, o: [f64; 3]) -> bool {
        let dx = o[0] - self.center.x;
        let dy = o[1] - self.center.y;
        dx * dx + dy * dy <= self.radius * self.radius && o[2] >= self.z_min && o[2] <= self.z_max
    }

    /// First hit of a ray with the closed solid (side wall and both caps).
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        if self.contains(origin) {
            return Some(0.0);
        }
        let mut best = ray_cylinder_distance(origin, dir, self);
        if dir[2].abs() > 1e-15 {
            for z in [self.z_min, self.z_max] {
                let t = (z - origin[2]) / dir[2];
                if t >= 0.0 && best.is_none_or(|b| t < b) {
                    let x = origin[0] + t * dir[0] - self.center.x;
                    let y = origin[1] + t * dir[1] - self.center.y;
                    if x * x + y * y <= self.radius * self.radius {
                        best = Some(t);
                    }
                }
            }
        }
        best
    }
}

/// Smallest non-negative distance at which a ray meets the side wall of `cyl` within
/// its height span. `dir` must be a unit vector.
pub fn ray_cylinder_distance(origin: [f64; 3], dir: [f64; 3], cyl: &Cylinder) -> Option<f64> {
    let ox = origin[0] - cyl.center.x;
    let oy = origin[1] - cyl.center.y;
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    if a < 1e-18 {
        return None;
    }
    let half_b = ox * dir[0] + oy * dir[1];
    let c = ox * ox + oy * oy - cyl.radius * cyl.radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let q = -(half_b + half_b.signum() * disc.sqrt());
    let (mut t0, mut t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    [t0, t1].into_iter().find(|&t| {
        let z = origin[2] + t * dir[2];
        t >= 0.0 && z >= cyl.z_min && z <= cyl.z_max
    })
}

/// Row-major grid of depths in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Arc<[f32]>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape {
                expected: format!("{} pixels", width * height),
                actual: data.len().to_string(),
            });
        }
        Ok(Self {
            width,
            height,
            data: data.into(),
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height].into(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Binary 16-bit greymap (PGM, big-endian samples) with [0, 5] m mapped to [0, 65535].
    pub fn to_pgm16(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for &d in self.data.iter() {
            let q = ((f64::from(d) / MAX_RANGE).clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm16()).map_err(|e| Error::io(path, e))
    }
}

struct Candidate {
    cyl: Cylinder,
    bearing: f64,
    half_angle: f64,
}

/// Render the per-pixel depth (distance along the optical axis) of the nearest surface.
///
/// Pixels whose nearest hit is farther than `max_range`, or that hit nothing, read
/// `max_range`.
pub fn render_depth(world: &VineyardWorld, pose: &CameraPose, params: &CameraParams) -> DepthImage {
    let (tx, ty) = ((0.5 * params.hfov).tan(), (0.5 * params.vfov).tan());
    let max_ray = (1.0 + tx * tx + ty * ty).sqrt() * params.max_range;
    let eye = Point2::new(pose.position[0], pose.position[1]);
    let reach = max_ray + world.config.plant.canopy_half_width.max(world.config.plant.trunk_radius);
    let (sy, cy) = pose.yaw.sin_cos();

    let mut candidates = Vec::new();
    for plant in world.nearby_plants(eye, reach) {
        for cyl in [Cylinder::trunk(plant), Cylinder::canopy(plant)] {
            let q = cyl.center - eye;
            let fwd = q.x * cy + q.y * sy;
            let left = -q.x * sy + q.y * cy;
            let dist = q.norm();
            let half_angle = if dist <= cyl.radius {
                std::f64::consts::PI
            } else {
                (cyl.radius / dist).asin()
            };
            candidates.push(Candidate {
                cyl,
                bearing: left.atan2(fwd),
                half_angle,
            });
        }
    }
    render_candidates(&candidates, pose, params)
}

/// Render an explicit list of cylinders (no world lookup).
pub fn render_cylinders(cylinders: &[Cylinder], pose: &CameraPose, params: &CameraParams) -> DepthImage {
    let eye = Point2::new(pose.position[0], pose.position[1]);
    let (sy, cy) = pose.yaw.sin_cos();
    let candidates: Vec<Candidate> = cylinders
        .iter()
        .map(|&cyl| {
            let q = cyl.center - eye;
            let dist = q.norm();
            Candidate {
                cyl,
                bearing: (-q.x * sy + q.y * cy).atan2(q.x * cy + q.y * sy),
                half_angle: if dist <= cyl.radius {
                    std::f64::consts::PI
                } else {
                    (cyl.radius / dist).asin()
                },
            }
        })
        .collect();
    render_candidates(&candidates, pose, params)
}

fn render_candidates(candidates: &[Candidate], pose: &CameraPose, params: &CameraParams) -> DepthImage {
    let (w, h) = (params.width, params.height);
    let mut data = vec![params.max_range as f32; w * h];
    let (sp, cp) = pose.pitch.sin_cos();
    let mut column: Vec<&Cylinder> = Vec::with_capacity(candidates.len());
    for col in 0..w {
        // Horizontal bearing of this column's rays, relative to the yaw, over all rows.
        let (xn, y_top) = params.image_plane(col, 0);
        let (_, y_bot) = params.image_plane(col, h - 1);
        let a0 = (-xn).atan2(cp - y_top * sp);
        let a1 = (-xn).atan2(cp - y_bot * sp);
        let mid = 0.5 * (a0 + a1);
        let spread = 0.5 * (a0 - a1).abs() + 1e-9;
        column.clear();
        column.extend(
            candidates
                .iter()
                .filter(|c| wrap_angle(c.bearing - mid).abs() <= c.half_angle + spread)
                .map(|c| &c.cyl),
        );
        for row in 0..h {
            let ray = params.pixel_ray(pose, col, row);
            let mut best = f64::INFINITY;
            if params.render_ground && ray.dir[2] < 0.0 {
                best = -ray.origin[2] / ray.dir[2];
            }
            for cyl in &column {
                if let Some(t) = cyl.intersect(ray.origin, ray.dir) {
                    best = best.min(t);
                }
            }
            let depth = (best * ray.axis_cos).clamp(0.0, params.max_range);
            data[row * w + col] = depth as f32;
        }
    }
    DepthImage {
        width: w,
        height: h,
        data: data.into(),
    }
}

/// Depth noise: per pixel `d + k·n₁ + k·n₂·d/5`, clamped to [0, 5], with
/// `n₁ ~ U(−uniform, uniform)` and `n₂ ~ U(−proportional, proportional)` drawn independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub uniform: f64,
    pub proportional: f64,
    pub factor: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            uniform: 0.5,
            proportional: 0.5,
            factor: 1.0,
        }
    }
}

impl NoiseSpec {
    pub fn with_factor(factor: f64) -> Self {
        Self {
            factor,
            ..Self::default()
        }
    }
}

impl NoiseSpec {
    /// Pre-clamp perturbation for a pixel at depth `d`.
    pub fn perturbation<R: Rng + ?Sized>(&self, d: f64, rng: &mut R) -> f64 {
        let n1 = rng.random_range(-self.uniform..=self.uniform);
        let n2 = rng.random_range(-self.proportional..=self.proportional);
        self.factor * n1 + self.factor * n2 * (d / MAX_RANGE)
    }
}

pub fn apply_noise<R: Rng + ?Sized>(img: &DepthImage, spec: &NoiseSpec, rng: &mut R) -> DepthImage {
    if spec.factor == 0.0 {
        return img.clone();
    }
    let data: Vec<f32> = img
        .data
        .iter()
        .map(|&d| {
            let d = f64::from(d);
            (d + spec.perturbation(d, rng)).clamp(0.0, MAX_RANGE) as f32
        })
        .collect();
    DepthImage {
        width: img.width,
        height: img.height,
        data: data.into(),
    }
}
