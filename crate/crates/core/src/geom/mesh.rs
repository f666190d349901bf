use std::collections::BTreeMap;

use super::{cross, norm, scale, sub};
use crate::error::{Error, Result};

/// Cross-product norm below which a face counts as zero-area.
pub const DEGENERATE_FACE_EPS: f64 = 1e-12;

/// Vertices in meters and counter-clockwise triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let v = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&k| k as usize >= v) {
                return Err(Error::Topology(format!(
                    "face {i} {f:?} references a vertex outside 0..{v}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!("face {i} {f:?} repeats a vertex")));
            }
        }
        if let Some(i) = vertices.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("vertex {i}")));
        }
        Ok(TriangleMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same faces over a new vertex set of equal size.
    pub fn with_vertices(&self, vertices: Vec<[f64; 3]>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Dimension(format!(
                "{} vertices for a mesh of {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        TriangleMesh::new(vertices, self.faces.clone())
    }

    /// Undirected edges keyed `(min, max)`, with the faces that use them, in
    /// sorted key order.
    pub fn edge_faces(&self) -> BTreeMap<(u32, u32), Vec<usize>> {
        let mut map: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    pub fn edge_count(&self) -> usize {
        self.edge_faces().len()
    }

    /// Fails on any edge used by more than two faces.
    pub fn check_manifold(&self) -> Result<()> {
        for (e, fs) in self.edge_faces() {
            if fs.len() > 2 {
                return Err(Error::Topology(format!(
                    "edge {e:?} is shared by {} faces",
                    fs.len()
                )));
            }
        }
        Ok(())
    }

    /// True when every edge borders exactly two faces.
    pub fn is_closed_manifold(&self) -> bool {
        self.edge_faces().values().all(|fs| fs.len() == 2)
    }

    /// Sorted one-ring neighbors of every vertex.
    pub fn neighbors(&self) -> Vec<Vec<u32>> {
        let mut ring: Vec<Vec<u32>> = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                ring[a as usize].push(b);
                ring[b as usize].push(a);
            }
        }
        for r in &mut ring {
            r.sort_unstable();
            r.dedup();
        }
        ring
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }
}

/// Face-derived connectivity reused by the smoothing losses.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    pub faces: Vec<[u32; 3]>,
    pub neighbors: Vec<Vec<u32>>,
    /// Unordered pairs of faces sharing an edge, each listed once.
    pub face_pairs: Vec<(u32, u32)>,
}

impl MeshTopology {
    pub fn from_mesh(mesh: &TriangleMesh) -> Result<Self> {
        mesh.check_manifold()?;
        let neighbors = mesh.neighbors();
        let face_pairs = mesh
            .edge_faces()
            .values()
            .filter(|fs| fs.len() == 2)
            .map(|fs| (fs[0].min(fs[1]) as u32, fs[0].max(fs[1]) as u32))
            .collect();
        Ok(MeshTopology {
            faces: mesh.faces().to_vec(),
            neighbors,
            face_pairs,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }
}

/// Unit normals from counter-clockwise winding.
pub fn face_normals(mesh: &TriangleMesh) -> Result<Vec<[f64; 3]>> {
    let v = mesh.vertices();
    mesh.faces()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let a = v[f[0] as usize];
            let c = cross(sub(v[f[1] as usize], a), sub(v[f[2] as usize], a));
            let n = norm(c);
            if n < DEGENERATE_FACE_EPS {
                return Err(Error::DegenerateFace { face: i, norm: n });
            }
            Ok(scale(c, 1.0 / n))
        })
        .collect()
}

/// `L[i] = p_i − mean(p_j for j in the one-ring of i)`.
pub fn uniform_laplacian(mesh: &TriangleMesh) -> Result<Vec<[f64; 3]>> {
    laplacian_over_rings(mesh.vertices(), &mesh.neighbors())
}

/// Uniform Laplacian over explicit neighbor sets.
pub fn laplacian_over_rings(points: &[[f64; 3]], rings: &[Vec<u32>]) -> Result<Vec<[f64; 3]>> {
    if points.len() != rings.len() {
        return Err(Error::Dimension(format!(
            "{} neighbor sets for {} points",
            rings.len(),
            points.len()
        )));
    }
    rings
        .iter()
        .enumerate()
        .map(|(i, ring)| {
            if ring.is_empty() {
                return Err(Error::Topology(format!("vertex {i} has no neighbors")));
            }
            let inv = 1.0 / ring.len() as f64;
            let mut out = points[i];
            for &j in ring {
                let p = points[j as usize];
                for k in 0..3 {
                    out[k] -= p[k] * inv;
                }
            }
            Ok(out)
        })
        .collect()
}

/// Regular `nx × ny` vertex grid in the z = 0 plane, each cell split along
/// the same diagonal, faces counter-clockwise seen from +z.
pub fn flat_grid(nx: usize, ny: usize, spacing: f64) -> Result<TriangleMesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::Parameter(format!("grid needs at least 2×2 vertices, got {nx}×{ny}")));
    }
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
        }
    }
    let id = |i: usize, j: usize| (j * nx + i) as u32;
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_hand_normal() {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(face_normals(&m).unwrap(), vec![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn zero_area_face_is_named() {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            face_normals(&m),
            Err(Error::DegenerateFace { face: 0, .. })
        ));
    }

    #[test]
    fn invalid_faces_rejected() {
        assert!(TriangleMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn grid_interior_laplacian_vanishes() {
        let g = flat_grid(6, 5, 0.01).unwrap();
        let lap = uniform_laplacian(&g).unwrap();
        for j in 1..4 {
            for i in 1..5 {
                let l = lap[j * 6 + i];
                assert!(norm(l) <= 1e-9, "{i},{j}: {l:?}");
            }
        }
        for n in face_normals(&g).unwrap() {
            assert!(n[0].abs() < 1e-12 && n[1].abs() < 1e-12 && (n[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_neighbor_laplacian() {
        let lap = laplacian_over_rings(&[[0.0; 3], [1.0, 0.0, 0.0]], &[vec![1], vec![0]]).unwrap();
        assert_eq!(lap[0], [-1.0, 0.0, 0.0]);
        assert_eq!(lap[1], [1.0, 0.0, 0.0]);

        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(uniform_laplacian(&m).unwrap()[0], [-0.5, -0.5, 0.0]);
    }

    #[test]
    fn isolated_vertex_is_topology_error() {
        let m = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0; 3]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(uniform_laplacian(&m), Err(Error::Topology(_))));
    }

    #[test]
    fn non_manifold_edge_detected() {
        let m = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 1, 2], [0, 3, 1], [0, 1, 4]],
        )
        .unwrap();
        assert!(matches!(m.check_manifold(), Err(Error::Topology(_))));
    }
}
