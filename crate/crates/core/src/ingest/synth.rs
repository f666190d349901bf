//! Synthetic captures of superellipsoid "fruits".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{look_at, CameraIntrinsics, Pose};
use super::capture::{Capture, Observation};
use crate::error::{Error, Result};
use crate::geom::{dot, norm, scale, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub intrinsics: CameraIntrinsics,
    pub views: usize,
    /// Camera distance from the origin in meters.
    pub distance: f64,
    /// Alternating elevation band in degrees, views go `+lo, −hi, +lo, …`
    /// with a random value in `[lo, hi]` each.
    pub elevation_deg: (f64, f64),
    pub semi_axis_m: (f64, f64),
    pub exponent: (f64, f64),
    pub max_tilt_deg: f64,
    pub max_offset_m: f64,
    pub gt_points: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            intrinsics: CameraIntrinsics {
                fx: 300.0,
                fy: 300.0,
                cx: 80.0,
                cy: 60.0,
                width: 160,
                height: 120,
            },
            views: 12,
            distance: 0.4,
            elevation_deg: (35.0, 40.0),
            semi_axis_m: (0.03, 0.06),
            exponent: (0.7, 1.3),
            max_tilt_deg: 20.0,
            max_offset_m: 0.005,
            gt_points: 8192,
        }
    }
}

/// `|x/a|^(2/e) + |y/b|^(2/e) + |z/c|^(2/e) = 1` placed by a rigid pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Superellipsoid {
    pub axes: [f64; 3],
    pub exponent: f64,
    /// Object-to-world.
    pub pose: Pose,
}

impl Superellipsoid {
    /// Implicit value in the object frame, negative inside.
    pub fn implicit(&self, p: [f64; 3]) -> f64 {
        let q = 2.0 / self.exponent;
        (0..3).map(|k| (p[k] / self.axes[k]).abs().powf(q)).sum::<f64>() - 1.0
    }

    fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let q = 2.0 / self.exponent;
        std::array::from_fn(|k| {
            let s = p[k] / self.axes[k];
            q * s.signum() * s.abs().powf(q - 1.0) / self.axes[k]
        })
    }

    /// Surface point along the object-frame unit direction `u`.
    fn radial(&self, u: [f64; 3]) -> [f64; 3] {
        let q = 2.0 / self.exponent;
        let s: f64 = (0..3).map(|k| (u[k] / self.axes[k]).abs().powf(q)).sum();
        scale(u, s.powf(-1.0 / q))
    }

    /// Nearest ray parameter `t ≥ 0` where `origin + t·dir` (world frame)
    /// meets the surface.
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let o = self.pose.apply_inverse(origin);
        let d = {
            let m = self.pose.matrix();
            let d: [f64; 3] = std::array::from_fn(|i| m[0][i] * dir[0] + m[1][i] * dir[1] + m[2][i] * dir[2]);
            d
        };
        // slab test against the bounding box
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            let a = self.axes[k];
            if d[k].abs() < 1e-15 {
                if o[k].abs() > a {
                    return None;
                }
                continue;
            }
            let (ta, tb) = ((-a - o[k]) / d[k], (a - o[k]) / d[k]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        if t0 >= t1 {
            return None;
        }
        let f = |t: f64| self.implicit([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
        if f(t0) <= 0.0 {
            return Some(t0);
        }
        // F is convex along the ray: ternary search until a point inside
        let (mut lo, mut hi) = (t0, t1);
        let mut inside = None;
        for _ in 0..80 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            let (f1, f2) = (f(m1), f(m2));
            if f1 <= 0.0 {
                inside = Some(m1);
                break;
            }
            if f2 <= 0.0 {
                inside = Some(m2);
                break;
            }
            if f1 < f2 {
                hi = m2;
            } else {
                lo = m1;
            }
            if hi - lo < 1e-10 {
                break;
            }
        }
        let (mut a, mut b) = (t0, inside?);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        Some(0.5 * (a + b))
    }

    /// Area-uniform surface samples in the world frame.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
        let draw_dir = |rng: &mut dyn rand::RngCore| loop {
            let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let r = norm(v);
            if r > 1e-6 && r <= 1.0 {
                break scale(v, 1.0 / r);
            }
        };
        // dA = r² / (n·u) dΩ for a radial parametrization
        let weight = |u: [f64; 3]| {
            let p = self.radial(u);
            let g = self.gradient(p);
            let r = norm(p);
            r * r * norm(g) / dot(g, u)
        };
        let mut w_max = 0.0f64;
        for _ in 0..4096 {
            w_max = w_max.max(weight(draw_dir(rng)));
        }
        w_max *= 1.1;
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let u = draw_dir(rng);
            if rng.random::<f64>() * w_max <= weight(u) {
                out.push(self.pose.apply(self.radial(u)));
            }
        }
        out
    }

    fn world_normal(&self, object_point: [f64; 3]) -> [f64; 3] {
        let g = self.pose.rotate(self.gradient(object_point));
        scale(g, 1.0 / norm(g))
    }
}

fn rotation(yaw: f64, tilt: f64, tilt_axis: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    // tilt about a horizontal axis at angle `tilt_axis`
    let k = [tilt_axis.cos(), tilt_axis.sin(), 0.0];
    let (s, c) = tilt.sin_cos();
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let rt: [[f64; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let eye = if i == j { 1.0 } else { 0.0 };
            let kk: f64 = (0..3).map(|m| kx[i][m] * kx[m][j]).sum();
            eye + s * kx[i][j] + (1.0 - c) * kk
        })
    });
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|m| rt[i][m] * rz[m][j]).sum()))
}

/// Random superellipsoid under `config`.
pub fn random_shape(config: &SynthConfig, rng: &mut impl Rng) -> Result<Superellipsoid> {
    let (lo, hi) = config.semi_axis_m;
    let axes = std::array::from_fn(|_| rng.random_range(lo..=hi));
    let exponent = rng.random_range(config.exponent.0..=config.exponent.1);
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt = rng.random_range(0.0..=config.max_tilt_deg.to_radians());
    let tilt_axis = rng.random_range(0.0..std::f64::consts::TAU);
    let off = config.max_offset_m;
    let t = std::array::from_fn(|_| rng.random_range(-off..=off));
    Ok(Superellipsoid {
        axes,
        exponent,
        pose: Pose::from_parts(rotation(yaw, tilt, tilt_axis), t)?,
    })
}

/// Camera poses on a ring around the origin with alternating elevation.
pub fn view_ring(config: &SynthConfig, rng: &mut impl Rng) -> Result<Vec<Pose>> {
    (0..config.views)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / config.views as f64;
            let mut el = rng.random_range(config.elevation_deg.0..=config.elevation_deg.1).to_radians();
            if k % 2 == 1 {
                el = -el;
            }
            let eye = scale([el.cos() * az.cos(), el.cos() * az.sin(), el.sin()], config.distance);
            look_at(eye, [0.0; 3], [0.0, 0.0, 1.0])
        })
        .collect()
}

/// Depth, mask and a shaded color image of `shape` seen from `pose`.
pub fn render(shape: &Superellipsoid, intr: &CameraIntrinsics, pose: &Pose) -> Result<Observation> {
    let n = intr.pixel_count();
    let mut depth = vec![0u16; n];
    let mut mask = vec![0u8; n];
    let mut color = vec![[0u8; 3]; n];
    let eye = pose.translation();
    for v in 0..intr.height {
        for u in 0..intr.width {
            // camera ray with unit z so the parameter is depth
            let dc = [(u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0];
            let dir = pose.rotate(dc);
            let Some(z) = shape.intersect(eye, dir) else {
                continue;
            };
            let mm = (z * 1000.0).round();
            if !(1.0..=65535.0).contains(&mm) {
                continue;
            }
            let k = v * intr.width + u;
            depth[k] = mm as u16;
            mask[k] = 255;
            let hit = [eye[0] + z * dir[0], eye[1] + z * dir[1], eye[2] + z * dir[2]];
            let nrm = shape.world_normal(shape.pose.apply_inverse(hit));
            let view = scale(dir, -1.0 / norm(dir));
            let shade = dot(nrm, view).clamp(0.0, 1.0);
            color[k] = [
                (60.0 + 180.0 * shade) as u8,
                (20.0 + 60.0 * shade) as u8,
                (10.0 + 30.0 * shade) as u8,
            ];
        }
    }
    Observation::new(intr.width, intr.height, depth, mask, *pose, Some(color))
}

/// One capture drawn from `rng`, with its analytic shape.
pub fn synth_capture(config: &SynthConfig, rng: &mut impl Rng) -> Result<(Capture, Superellipsoid)> {
    if config.views == 0 || config.gt_points == 0 {
        return Err(Error::Parameter("synthetic capture needs views and GT points".into()));
    }
    let shape = random_shape(config, rng)?;
    let poses = view_ring(config, rng)?;
    let observations = poses
        .iter()
        .map(|p| render(&shape, &config.intrinsics, p))
        .collect::<Result<Vec<_>>>()?;
    let gt = PointCloud::from_f64(&shape.sample_surface(config.gt_points, rng))?;
    Ok((Capture::new(observations, config.intrinsics, Some(gt))?, shape))
}

/// Capture `index` of the stream for `seed`; independent of how many
/// captures are generated.
pub fn synth_indexed(config: &SynthConfig, seed: u64, index: usize) -> Result<(Capture, Superellipsoid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    synth_capture(config, &mut rng)
}

pub fn gen_synthetic(seed: u64, count: usize) -> Result<Vec<Capture>> {
    gen_synthetic_with(&SynthConfig::default(), seed, count)
}

pub fn gen_synthetic_with(config: &SynthConfig, seed: u64, count: usize) -> Result<Vec<Capture>> {
    if count == 0 {
        return Err(Error::Parameter("synthetic count must be at least 1".into()));
    }
    (0..count)
        .map(|i| synth_indexed(config, seed, i).map(|(c, _)| c))
        .collect()
}

/// Train/validation sizes for `count` captures: one in five for validation.
pub fn split_counts(count: usize) -> (usize, usize) {
    let val = count / 5;
    (count - val, val)
}

