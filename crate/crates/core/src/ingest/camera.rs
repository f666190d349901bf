use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if !ok {
            return Err(Error::Validation(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Rigid camera-to-world transform, row-major 4×4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    m: [[f64; 4]; 4],
}

/// Allowed deviation of `RᵀR` from the identity.
pub const ORTHONORMAL_TOL: f64 = 1e-4;

impl Pose {
    pub fn new(m: [[f64; 4]; 4]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("pose has non-finite entries".into()));
        }
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Validation(format!("pose last row is {:?}", m[3])));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > ORTHONORMAL_TOL {
                    return Err(Error::Validation(format!(
                        "pose rotation is not orthonormal (RᵀR[{i}][{j}] = {d})"
                    )));
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det < 0.0 {
            return Err(Error::Validation("pose rotation is a reflection".into()));
        }
        Ok(Pose { m })
    }

    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Pose { m }
    }

    /// From rotation columns and a translation.
    pub fn from_parts(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&rotation[i]);
            m[i][3] = translation[i];
        }
        m[3][3] = 1.0;
        Pose::new(m)
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::Validation(format!("pose needs 16 numbers, got {}", values.len())));
        }
        let mut m = [[0.0; 4]; 4];
        for (k, v) in values.iter().enumerate() {
            m[k / 4][k % 4] = *v;
        }
        Pose::new(m)
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.m
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.m.iter().flatten().copied().collect()
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    /// Camera point to world.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3])
    }

    /// Rotation only, for directions.
    pub fn rotate(&self, d: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        std::array::from_fn(|i| m[i][0] * d[0] + m[i][1] * d[1] + m[i][2] * d[2])
    }

    /// World point to camera.
    pub fn apply_inverse(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        let q = [p[0] - m[0][3], p[1] - m[1][3], p[2] - m[2][3]];
        std::array::from_fn(|i| m[0][i] * q[0] + m[1][i] * q[1] + m[2][i] * q[2])
    }
}

/// World point at pixel `(u, v)` with camera depth `z` meters.
pub fn backproject_pixel(intr: &CameraIntrinsics, pose: &Pose, u: f64, v: f64, z: f64) -> [f64; 3] {
    pose.apply([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])
}

/// Pixel coordinates and camera depth of a world point, `None` behind the
/// camera.
pub fn project(intr: &CameraIntrinsics, pose: &Pose, world: [f64; 3]) -> Option<(f64, f64, f64)> {
    let c = pose.apply_inverse(world);
    if c[2] <= 0.0 {
        return None;
    }
    Some((intr.fx * c[0] / c[2] + intr.cx, intr.fy * c[1] / c[2] + intr.cy, c[2]))
}

/// Camera at `eye` looking at `target`, image y pointing away from `up`.
pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Result<Pose> {
    use crate::geom::{cross, norm, scale, sub};
    let f = sub(target, eye);
    let f = scale(f, 1.0 / norm(f));
    let r = cross(f, up);
    let rn = norm(r);
    if !(rn > 1e-9) {
        return Err(Error::Parameter("look_at: view direction parallel to up".into()));
    }
    let r = scale(r, 1.0 / rn);
    let d = cross(f, r);
    Pose::from_parts(
        [[r[0], d[0], f[0]], [r[1], d[1], f[1]], [r[2], d[2], f[2]]],
        eye,
    )
}
