use rand::seq::index::sample;
use rand::Rng;

use super::camera::{backproject_pixel, CameraIntrinsics, Pose};
use crate::error::{Error, Result};
use crate::geom::PointCloud;

/// One masked depth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    /// Millimeters, row-major, 0 marks invalid pixels.
    pub depth: Vec<u16>,
    /// 0 or 255 per pixel.
    pub mask: Vec<u8>,
    pub pose: Pose,
    pub color: Option<Vec<[u8; 3]>>,
}

impl Observation {
    pub fn new(
        width: usize,
        height: usize,
        depth: Vec<u16>,
        mask: Vec<u8>,
        pose: Pose,
        color: Option<Vec<[u8; 3]>>,
    ) -> Result<Self> {
        let obs = Observation {
            width,
            height,
            depth,
            mask,
            pose,
            color,
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if n == 0 {
            return Err(Error::Validation("observation has zero pixels".into()));
        }
        if self.depth.len() != n || self.mask.len() != n {
            return Err(Error::Validation(format!(
                "depth ({}) and mask ({}) must both hold {}×{} pixels",
                self.depth.len(),
                self.mask.len(),
                self.width,
                self.height
            )));
        }
        if self.color.as_ref().is_some_and(|c| c.len() != n) {
            return Err(Error::Validation("color image size differs from depth".into()));
        }
        if let Some(v) = self.mask.iter().find(|&&m| m != 0 && m != 255) {
            return Err(Error::Validation(format!("mask value {v} is not 0 or 255")));
        }
        Ok(())
    }

    /// Pixels that pass the mask and carry a depth reading.
    pub fn valid_pixels(&self) -> usize {
        self.depth
            .iter()
            .zip(&self.mask)
            .filter(|(&d, &m)| m == 255 && d > 0)
            .count()
    }
}

/// All frames of one object with their shared intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub observations: Vec<Observation>,
    pub intrinsics: CameraIntrinsics,
    pub gt: Option<PointCloud>,
}

impl Capture {
    pub fn new(
        observations: Vec<Observation>,
        intrinsics: CameraIntrinsics,
        gt: Option<PointCloud>,
    ) -> Result<Self> {
        let c = Capture {
            observations,
            intrinsics,
            gt,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.observations.is_empty() {
            return Err(Error::Validation("capture has no observations".into()));
        }
        for (i, o) in self.observations.iter().enumerate() {
            o.validate()?;
            if o.width != self.intrinsics.width || o.height != self.intrinsics.height {
                return Err(Error::Validation(format!(
                    "frame {i} is {}×{} but intrinsics are {}×{}",
                    o.width, o.height, self.intrinsics.width, self.intrinsics.height
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn gt(&self) -> Result<&PointCloud> {
        self.gt
            .as_ref()
            .ok_or_else(|| Error::Validation("capture has no ground-truth cloud".into()))
    }
}

/// World-frame points of the valid pixels, in row-major pixel order.
pub fn backproject(obs: &Observation, intr: &CameraIntrinsics) -> PointCloud {
    let mut points = Vec::new();
    let mut colors = obs.color.as_ref().map(|_| Vec::new());
    for v in 0..obs.height {
        for u in 0..obs.width {
            let k = v * obs.width + u;
            let d = obs.depth[k];
            if obs.mask[k] != 255 || d == 0 {
                continue;
            }
            let p = backproject_pixel(intr, &obs.pose, u as f64, v as f64, d as f64 / 1000.0);
            points.push([p[0] as f32, p[1] as f32, p[2] as f32]);
            if let (Some(out), Some(src)) = (colors.as_mut(), obs.color.as_ref()) {
                out.push(src[k]);
            }
        }
    }
    PointCloud::with_colors(points, colors).expect("finite back-projection")
}

/// Concatenated clouds of the given frames, in the order given.
pub fn fuse(capture: &Capture, frames: &[usize]) -> Result<PointCloud> {
    if frames.is_empty() {
        return Err(Error::Parameter("fuse needs at least one frame".into()));
    }
    if let Some(&bad) = frames.iter().find(|&&i| i >= capture.len()) {
        return Err(Error::Parameter(format!(
            "frame {bad} out of range for a capture of {}",
            capture.len()
        )));
    }
    let mut out = backproject(&capture.observations[frames[0]], &capture.intrinsics);
    for &i in &frames[1..] {
        out.extend(&backproject(&capture.observations[i], &capture.intrinsics));
    }
    Ok(out)
}

/// `k ~ U[k_min, k_max]` distinct frame indices, ascending.
pub fn sample_frames(rng: &mut impl Rng, n: usize, k_min: usize, k_max: usize) -> Result<Vec<usize>> {
    if !(1 <= k_min && k_min <= k_max && k_max <= n) {
        return Err(Error::Parameter(format!(
            "need 1 ≤ k_min ≤ k_max ≤ n, got k_min={k_min} k_max={k_max} n={n}"
        )));
    }
    let k = rng.random_range(k_min..=k_max);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Fusion of a random subset of the capture's frames.
pub fn sample_training_input(
    capture: &Capture,
    rng: &mut impl Rng,
    k_min: usize,
    k_max: usize,
) -> Result<PointCloud> {
    let frames = sample_frames(rng, capture.len(), k_min, k_max)?;
    fuse(capture, &frames)
}

/// Exactly `n` points: a random subset when the cloud is large enough,
/// otherwise every point once plus draws with replacement.
pub fn resample(cloud: &PointCloud, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cannot resample an empty cloud".into()));
    }
    if n == 0 {
        return Err(Error::Parameter("resample target must be positive".into()));
    }
    let len = cloud.len();
    let index: Vec<usize> = if len >= n {
        sample(rng, len, n).into_vec()
    } else {
        let mut idx: Vec<usize> = (0..len).collect();
        idx.extend((len..n).map(|_| rng.random_range(0..len)));
        idx
    };
    Ok(cloud.select(&index))
}
