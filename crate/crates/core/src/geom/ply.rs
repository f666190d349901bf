//! PLY reading and writing (ASCII and binary little-endian).
//!
//! Written files carry a `vertex` element with `float x, y, z` and optional
//! `uchar red, green, blue`, plus an optional `face` element with a
//! `list uchar int vertex_indices` property. The reader accepts any scalar
//! property types and skips elements and properties it does not use.

use std::fs;
use std::io::{BufRead, Cursor, Read, Write};
use std::path::Path;

use super::{PointCloud, TriangleMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Decoded PLY content.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyData {
    pub vertices: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub faces: Option<Vec<[u32; 3]>>,
}

impl PlyData {
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        PlyData {
            vertices: cloud.points().to_vec(),
            colors: cloud.colors().map(<[_]>::to_vec),
            faces: None,
        }
    }

    pub fn from_mesh(mesh: &TriangleMesh) -> Self {
        PlyData {
            vertices: mesh
                .vertices()
                .iter()
                .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
                .collect(),
            colors: None,
            faces: Some(mesh.faces().to_vec()),
        }
    }

    pub fn to_cloud(&self) -> Result<PointCloud> {
        PointCloud::with_colors(self.vertices.clone(), self.colors.clone())
    }

    pub fn to_mesh(&self) -> Result<TriangleMesh> {
        let faces = self
            .faces
            .clone()
            .ok_or_else(|| Error::Validation("PLY file has no face element".into()))?;
        TriangleMesh::new(
            self.vertices
                .iter()
                .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
                .collect(),
            faces,
        )
    }
}

pub fn write_ply(path: &Path, data: &PlyData, format: PlyFormat) -> Result<()> {
    let bytes = encode(data, format);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::format(path, msg))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    write_ply(path, &PlyData::from_cloud(cloud), format)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    read_ply(path)?.to_cloud()
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh, format: PlyFormat) -> Result<()> {
    write_ply(path, &PlyData::from_mesh(mesh), format)
}

pub fn encode(data: &PlyData, format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        data.vertices.len()
    );
    if data.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if let Some(faces) = &data.faces {
        header.push_str(&format!(
            "element face {}\nproperty list uchar int vertex_indices\n",
            faces.len()
        ));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    match format {
        PlyFormat::Ascii => {
            for (i, p) in data.vertices.iter().enumerate() {
                let mut line = format!("{} {} {}", p[0], p[1], p[2]);
                if let Some(c) = &data.colors {
                    line.push_str(&format!(" {} {} {}", c[i][0], c[i][1], c[i][2]));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            for f in data.faces.iter().flatten() {
                out.extend_from_slice(format!("3 {} {} {}\n", f[0], f[1], f[2]).as_bytes());
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (i, p) in data.vertices.iter().enumerate() {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = &data.colors {
                    out.extend_from_slice(&c[i]);
                }
            }
            for f in data.faces.iter().flatten() {
                out.push(3);
                for &k in f {
                    out.extend_from_slice(&(k as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> std::result::Result<Self, String> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(format!("unknown property type `{other}`")),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            Scalar::I8 => bytes[0] as i8 as f64,
            Scalar::U8 => bytes[0] as f64,
            Scalar::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Values of one element instance, lists flattened in order.
type Row = Vec<Vec<f64>>;

enum Body<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary(Cursor<&'a [u8]>),
}

impl Body<'_> {
    fn scalar(&mut self, ty: Scalar) -> std::result::Result<f64, String> {
        match self {
            Body::Ascii(tokens) => {
                let tok = tokens.next().ok_or("unexpected end of data")?;
                tok.parse::<f64>()
                    .map_err(|_| format!("malformed number `{tok}`"))
            }
            Body::Binary(cursor) => {
                let mut buf = [0u8; 8];
                let n = ty.size();
                cursor
                    .read_exact(&mut buf[..n])
                    .map_err(|_| "unexpected end of data".to_string())?;
                Ok(ty.read_le(&buf[..n]))
            }
        }
    }

    fn row(&mut self, element: &Element) -> std::result::Result<Row, String> {
        element
            .properties
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, .. } => Ok(vec![self.scalar(*ty)?]),
                Property::List { count, item, .. } => {
                    let n = self.scalar(*count)?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(format!("invalid list length {n}"));
                    }
                    (0..n as usize).map(|_| self.scalar(*item)).collect()
                }
            })
            .collect()
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<PlyData, String> {
    let mut cursor = Cursor::new(bytes);
    let mut line = String::new();
    let mut next_line = |cursor: &mut Cursor<&[u8]>| -> std::result::Result<String, String> {
        line.clear();
        let n = cursor
            .read_line(&mut line)
            .map_err(|_| "header is not valid text".to_string())?;
        if n == 0 {
            return Err("header ended before end_header".into());
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(&mut cursor)?.trim() != "ply" {
        return Err("missing `ply` magic".into());
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(&mut cursor)?;
        let words: Vec<&str> = l.split_whitespace().collect();
        match words.as_slice() {
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(format!("unsupported format `{other}`")),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| format!("bad element count `{count}`"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => elements
                .last_mut()
                .ok_or("property before any element")?
                .properties
                .push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or("property before any element")?
                .properties
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                }),
            ["end_header"] => break,
            _ => return Err(format!("malformed header line `{l}`")),
        }
    }
    let format = format.ok_or("header has no format line")?;
    let offset = cursor.position() as usize;
    let mut body = match format {
        PlyFormat::Ascii => Body::Ascii(
            std::str::from_utf8(&bytes[offset..])
                .map_err(|_| "ASCII body is not valid text".to_string())?
                .split_ascii_whitespace(),
        ),
        PlyFormat::BinaryLittleEndian => Body::Binary(Cursor::new(&bytes[offset..])),
    };

    let mut out = PlyData::default();
    for element in &elements {
        match element.name.as_str() {
            "vertex" => read_vertices(&mut body, element, &mut out)?,
            "face" => read_faces(&mut body, element, &mut out)?,
            _ => {
                for _ in 0..element.count {
                    body.row(element)?;
                }
            }
        }
    }
    if let Some(faces) = &out.faces {
        let v = out.vertices.len() as u32;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&k| k >= v)) {
            return Err(format!("face {f:?} references a missing vertex"));
        }
    }
    Ok(out)
}

fn read_vertices(
    body: &mut Body<'_>,
    element: &Element,
    out: &mut PlyData,
) -> std::result::Result<(), String> {
    let find = |name: &str| element.properties.iter().position(|p| p.name() == name);
    let xyz = [find("x"), find("y"), find("z")];
    let [Some(x), Some(y), Some(z)] = xyz else {
        return Err("vertex element lacks x/y/z".into());
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    out.vertices.reserve(element.count);
    let mut colors = rgb.map(|_| Vec::with_capacity(element.count));
    for _ in 0..element.count {
        let row = body.row(element)?;
        out.vertices
            .push([row[x][0] as f32, row[y][0] as f32, row[z][0] as f32]);
        if let (Some(c), Some(idx)) = (colors.as_mut(), rgb) {
            c.push(idx.map(|k| row[k][0].clamp(0.0, 255.0) as u8));
        }
    }
    out.colors = colors;
    Ok(())
}

fn read_faces(
    body: &mut Body<'_>,
    element: &Element,
    out: &mut PlyData,
) -> std::result::Result<(), String> {
    let list = element
        .properties
        .iter()
        .position(|p| {
            matches!(p, Property::List { .. })
                && (p.name() == "vertex_indices" || p.name() == "vertex_index")
        })
        .ok_or("face element lacks a vertex_indices list")?;
    let mut faces = Vec::with_capacity(element.count);
    for i in 0..element.count {
        let row = body.row(element)?;
        let idx = &row[list];
        if idx.len() != 3 {
            return Err(format!("face {i} has {} vertices, expected 3", idx.len()));
        }
        if idx.iter().any(|&k| k < 0.0 || k.fract() != 0.0) {
            return Err(format!("face {i} has an invalid index"));
        }
        faces.push([idx[0] as u32, idx[1] as u32, idx[2] as u32]);
    }
    out.faces = Some(faces);
    Ok(())
}

/// Writes through any sink; used by the CLI for stdout-free tests.
pub fn write_to(mut sink: impl Write, data: &PlyData, format: PlyFormat) -> std::io::Result<()> {
    sink.write_all(&encode(data, format))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> PlyData {
        PlyData {
            vertices: vec![[0.0, 0.1, -0.25], [1e-7, 3.5, 2.0], [0.3, 0.2, 0.1]],
            colors: Some(vec![[255, 0, 1], [2, 3, 4], [9, 9, 9]]),
            faces: Some(vec![[0, 1, 2]]),
        }
    }

    #[test]
    fn both_formats_round_trip() {
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let d = sample();
            assert_eq!(decode(&encode(&d, fmt)).unwrap(), d);
        }
    }

    #[test]
    fn reads_foreign_layouts() {
        let text = b"ply\nformat ascii 1.0\ncomment made elsewhere\nelement vertex 2\n\
property double x\nproperty double y\nproperty double z\nproperty float nx\n\
element camera 1\nproperty int id\nend_header\n1 2 3 0.5\n4 5 6 0.5\n7\n";
        let d = decode(text).unwrap();
        assert_eq!(d.vertices, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert!(d.colors.is_none() && d.faces.is_none());
    }

    #[test]
    fn malformed_inputs() {
        assert!(decode(b"plx\n").is_err());
        assert!(decode(b"ply\nformat binary_big_endian 1.0\nend_header\n").is_err());
        assert!(decode(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").is_err());
        assert!(decode(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n").is_err());
    }

    proptest! {
        #[test]
        fn clouds_round_trip(
            pts in proptest::collection::vec(proptest::array::uniform3(-10.0f32..10.0), 1..40),
            binary in any::<bool>(),
        ) {
            let fmt = if binary { PlyFormat::BinaryLittleEndian } else { PlyFormat::Ascii };
            let d = PlyData { vertices: pts, colors: None, faces: None };
            prop_assert_eq!(decode(&encode(&d, fmt)).unwrap(), d);
        }
    }
}
