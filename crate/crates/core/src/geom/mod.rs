//! Point clouds, triangle meshes and the icosphere prototypes.

mod icosphere;
mod kdtree;
mod mesh;
pub mod ply;

pub use icosphere::{icosphere, parent_map, subdivide, Prototype, MAX_LEVEL};
pub use kdtree::{brute_force_nearest, SpatialIndex};
pub use mesh::{
    face_normals, flat_grid, laplacian_over_rings, uniform_laplacian, MeshTopology, TriangleMesh,
    DEGENERATE_FACE_EPS,
};

use crate::error::{Error, Result};

/// Points in meters with optional per-point colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>) -> Result<Self> {
        Self::with_colors(points, None)
    }

    pub fn with_colors(points: Vec<[f32; 3]>, colors: Option<Vec<[u8; 3]>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::Dimension(format!(
                    "{} colors for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        Ok(PointCloud { points, colors })
    }

    pub fn from_f64(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            points
                .iter()
                .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn points_f64(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect()
    }

    /// Appends another cloud; colors survive only if both sides carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        let colors = match (self.colors.take(), other.colors.as_ref()) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if self.points.is_empty() => Some(b.clone()),
            _ => None,
        };
        self.points.extend_from_slice(&other.points);
        self.colors = colors;
    }

    /// Rows `index[k]` of this cloud, in the given order.
    pub fn select(&self, index: &[usize]) -> PointCloud {
        PointCloud {
            points: index.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| index.iter().map(|&i| c[i]).collect()),
        }
    }

    pub fn without_colors(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            colors: None,
        }
    }
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}
