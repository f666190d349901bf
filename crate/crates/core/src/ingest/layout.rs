//! On-disk capture directories.
//!
//! ```text
//! intrinsics.json
//! frames/0000.depth.pgm   16-bit millimeters
//! frames/0000.mask.pgm    8-bit 0/255
//! frames/0000.pose.json   16 numbers, row-major camera-to-world
//! frames/0000.color.ppm   optional
//! gt.ply                  optional
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::camera::{CameraIntrinsics, Pose};
use super::capture::{Capture, Observation};
use super::netpbm::{read_pgm, read_ppm, write_pgm16, write_pgm8, write_ppm};
use crate::error::{Error, Result};
use crate::geom::ply::{read_cloud, write_cloud, PlyFormat};

fn frame_path(dir: &Path, i: usize, suffix: &str) -> PathBuf {
    dir.join("frames").join(format!("{i:04}.{suffix}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn save_capture(capture: &Capture, dir: &Path) -> Result<()> {
    capture.validate()?;
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    write_json(&dir.join("intrinsics.json"), &capture.intrinsics)?;
    for (i, o) in capture.observations.iter().enumerate() {
        write_pgm16(&frame_path(dir, i, "depth.pgm"), o.width, o.height, &o.depth)?;
        write_pgm8(&frame_path(dir, i, "mask.pgm"), o.width, o.height, &o.mask)?;
        write_json(&frame_path(dir, i, "pose.json"), &o.pose.to_row_major())?;
        if let Some(c) = &o.color {
            write_ppm(&frame_path(dir, i, "color.ppm"), o.width, o.height, c)?;
        }
    }
    if let Some(gt) = &capture.gt {
        write_cloud(&dir.join("gt.ply"), gt, PlyFormat::BinaryLittleEndian)?;
    }
    Ok(())
}

pub fn load_capture(dir: &Path) -> Result<Capture> {
    let intr_path = dir.join("intrinsics.json");
    let intrinsics: CameraIntrinsics = read_json(&intr_path)?;
    intrinsics
        .validate()
        .map_err(|e| Error::format(&intr_path, e.to_string()))?;
    let mut observations = Vec::new();
    loop {
        let i = observations.len();
        let depth_path = frame_path(dir, i, "depth.pgm");
        if !depth_path.exists() {
            break;
        }
        let depth = read_pgm(&depth_path)?;
        let mask_path = frame_path(dir, i, "mask.pgm");
        let mask = read_pgm(&mask_path)?;
        for (path, w, h) in [(&depth_path, depth.width, depth.height), (&mask_path, mask.width, mask.height)] {
            if (w, h) != (intrinsics.width, intrinsics.height) {
                return Err(Error::format(
                    path,
                    format!("image is {w}×{h}, intrinsics say {}×{}", intrinsics.width, intrinsics.height),
                ));
            }
        }
        let pose_path = frame_path(dir, i, "pose.json");
        let values: Vec<f64> = read_json(&pose_path)?;
        let pose = Pose::from_row_major(&values).map_err(|e| Error::format(&pose_path, e.to_string()))?;
        let color_path = frame_path(dir, i, "color.ppm");
        let color = if color_path.exists() {
            let img = read_ppm(&color_path)?;
            if (img.width, img.height) != (intrinsics.width, intrinsics.height) {
                return Err(Error::format(&color_path, "color image size differs from depth"));
            }
            Some(img.pixels)
        } else {
            None
        };
        let mask: Vec<u8> = mask.pixels.iter().map(|&m| m.min(255) as u8).collect();
        let obs = Observation::new(depth.width, depth.height, depth.pixels, mask, pose, color)
            .map_err(|e| Error::format(&mask_path, e.to_string()))?;
        observations.push(obs);
    }
    if observations.is_empty() {
        let p = frame_path(dir, 0, "depth.pgm");
        return Err(Error::io(
            &p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "capture has no frames"),
        ));
    }
    let gt_path = dir.join("gt.ply");
    let gt = if gt_path.exists() {
        Some(read_cloud(&gt_path)?)
    } else {
        None
    };
    Capture::new(observations, intrinsics, gt)
}

/// Capture directories directly under `dir`, sorted by name.
pub fn list_captures(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.join("intrinsics.json").is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Train and validation captures, from `train/` and `val/` subdirectories
/// when present, otherwise every capture under `dir` (or `dir` itself) for
/// training and none for validation.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Capture>, Vec<Capture>)> {
    let load_all = |d: &Path| -> Result<Vec<Capture>> {
        list_captures(d)?.iter().map(|p| load_capture(p)).collect()
    };
    let train_dir = dir.join("train");
    if train_dir.is_dir() {
        let val_dir = dir.join("val");
        let val = if val_dir.is_dir() { load_all(&val_dir)? } else { Vec::new() };
        return Ok((load_all(&train_dir)?, val));
    }
    if dir.join("intrinsics.json").is_file() {
        return Ok((vec![load_capture(dir)?], Vec::new()));
    }
    let train = load_all(dir)?;
    if train.is_empty() {
        return Err(Error::format(dir, "no capture directories found"));
    }
    Ok((train, Vec::new()))
}
