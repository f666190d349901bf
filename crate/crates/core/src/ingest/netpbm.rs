//! Binary PGM (P5) and PPM (P6) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<T>,
}

fn header(magic: &str, width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes()
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, pixels: &[u16]) -> Result<()> {
    let mut out = header("P5", width, height, 65535);
    for p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut out = header("P5", width, height, 255);
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
    let mut out = header("P6", width, height, 255);
    out.extend(pixels.iter().flatten());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Magic, width, height, maxval, and the offset of the raster.
fn parse_header(bytes: &[u8]) -> std::result::Result<(String, usize, usize, u32, usize), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field `{s}`"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad image size {w}×{h} or maxval {maxval}"));
    }
    Ok((fields[0].clone(), w, h, maxval as u32, pos))
}

fn load(path: &Path, magic: &str) -> Result<(Vec<u8>, usize, usize, u32, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (m, w, h, maxval, offset) = parse_header(&bytes).map_err(|msg| Error::format(path, msg))?;
    if m != magic {
        return Err(Error::format(path, format!("expected {magic} image, found `{m}`")));
    }
    Ok((bytes, w, h, maxval, offset))
}

fn raster<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8]> {
    let end = offset + len;
    if bytes.len() < end {
        return Err(Error::format(
            path,
            format!("raster holds {} bytes, expected {len}", bytes.len().saturating_sub(offset)),
        ));
    }
    Ok(&bytes[offset..end])
}

/// Grayscale image widened to 16 bits (8-bit files keep their values).
pub fn read_pgm(path: &Path) -> Result<Image<u16>> {
    let (bytes, w, h, maxval, offset) = load(path, "P5")?;
    let pixels = if maxval > 255 {
        raster(path, &bytes, offset, 2 * w * h)?
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        raster(path, &bytes, offset, w * h)?
            .iter()
            .map(|&b| b as u16)
            .collect()
    };
    Ok(Image {
        width: w,
        height: h,
        pixels,
    })
}

pub fn read_ppm(path: &Path) -> Result<Image<[u8; 3]>> {
    let (bytes, w, h, maxval, offset) = load(path, "P6")?;
    if maxval > 255 {
        return Err(Error::format(path, "16-bit color images are not supported"));
    }
    let pixels = raster(path, &bytes, offset, 3 * w * h)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(Image {
        width: w,
        height: h,
        pixels,
    })
}
