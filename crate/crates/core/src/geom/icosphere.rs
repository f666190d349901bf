use std::collections::BTreeMap;

use super::{add, norm, scale, SpatialIndex, TriangleMesh};
use crate::error::{Error, Result};

/// Deepest subdivision accepted by [`icosphere`] (655,362 vertices).
pub const MAX_LEVEL: u32 = 7;

/// Subdivided icosahedron whose vertices seed a trainable shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub base: TriangleMesh,
    pub level: u32,
    pub radius: f64,
    pub trainable: bool,
}

impl Prototype {
    pub fn vertex_count_for(level: u32) -> usize {
        10 * 4usize.pow(level) + 2
    }

    pub fn face_count_for(level: u32) -> usize {
        20 * 4usize.pow(level)
    }

    pub fn edge_count_for(level: u32) -> usize {
        30 * 4usize.pow(level)
    }

    pub fn vertex_count(&self) -> usize {
        self.base.vertex_count()
    }

    /// Base vertices scaled onto the unit sphere.
    pub fn unit_vertices(&self) -> Vec<[f64; 3]> {
        self.base
            .vertices()
            .iter()
            .map(|&p| scale(p, 1.0 / self.radius))
            .collect()
    }
}

fn icosahedron() -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|&p| scale(p, 1.0 / norm(p))).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriangleMesh::new(vertices, faces).expect("icosahedron is well formed")
}

/// Splits every face into four at its edge midpoints.
///
/// Original vertices keep their indices; midpoints follow in sorted-edge
/// order. Midpoints are not projected anywhere.
pub fn subdivide(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    mesh.check_manifold()?;
    let base = mesh.vertex_count() as u32;
    let edges = mesh.edge_faces();
    let mut midpoint: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let mut vertices = mesh.vertices().to_vec();
    for (k, &(a, b)) in edges.keys().enumerate() {
        midpoint.insert((a, b), base + k as u32);
        let v = mesh.vertices();
        vertices.push(scale(add(v[a as usize], v[b as usize]), 0.5));
    }
    let mid = |a: u32, b: u32| midpoint[&(a.min(b), a.max(b))];
    let mut faces = Vec::with_capacity(mesh.face_count() * 4);
    for &[a, b, c] in mesh.faces() {
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        faces.push([a, ab, ca]);
        faces.push([ab, b, bc]);
        faces.push([ca, bc, c]);
        faces.push([ab, bc, ca]);
    }
    TriangleMesh::new(vertices, faces)
}

/// Regular icosahedron subdivided `level` times, re-projected onto the
/// sphere of `radius` after every split.
pub fn icosphere(level: u32, radius: f64) -> Result<Prototype> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Parameter(format!("icosphere radius must be positive, got {radius}")));
    }
    if level > MAX_LEVEL {
        return Err(Error::Parameter(format!(
            "icosphere level {level} exceeds the limit of {MAX_LEVEL}"
        )));
    }
    let mut mesh = icosahedron();
    for _ in 0..level {
        let split = subdivide(&mesh)?;
        let projected = split
            .vertices()
            .iter()
            .map(|&p| scale(p, 1.0 / norm(p)))
            .collect();
        mesh = split.with_vertices(projected)?;
    }
    let scaled = mesh.vertices().iter().map(|&p| scale(p, radius)).collect();
    Ok(Prototype {
        base: mesh.with_vertices(scaled)?,
        level,
        radius,
        trainable: true,
    })
}

/// For every fine base vertex, the nearest coarse base vertex (lowest index
/// on ties).
pub fn parent_map(coarse: &Prototype, fine: &Prototype) -> Result<Vec<usize>> {
    if fine.level <= coarse.level {
        return Err(Error::Parameter(format!(
            "fine level {} must exceed coarse level {}",
            fine.level, coarse.level
        )));
    }
    if (fine.radius - coarse.radius).abs() > 1e-12 * coarse.radius.max(fine.radius) {
        return Err(Error::Parameter(format!(
            "prototype radii differ: {} vs {}",
            coarse.radius, fine.radius
        )));
    }
    let index = SpatialIndex::new(coarse.base.vertices().to_vec())?;
    Ok(fine
        .base
        .vertices()
        .iter()
        .map(|&p| index.nearest(p).0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{dot, face_normals, uniform_laplacian};

    #[test]
    fn level_zero_is_icosahedron() {
        let p = icosphere(0, 1.0).unwrap();
        assert_eq!(p.base.vertex_count(), 12);
        assert_eq!(p.base.face_count(), 20);
        assert_eq!(p.base.edge_count(), 30);
    }

    #[test]
    fn counts_follow_subdivision_formula() {
        for level in 0..=4 {
            let p = icosphere(level, 0.05).unwrap();
            assert_eq!(p.base.vertex_count(), Prototype::vertex_count_for(level));
            assert_eq!(p.base.face_count(), Prototype::face_count_for(level));
            assert_eq!(p.base.edge_count(), Prototype::edge_count_for(level));
            assert_eq!(p.base.euler_characteristic(), 2);
            assert!(p.base.is_closed_manifold());
            for v in p.base.vertices() {
                assert!((norm(*v) - 0.05).abs() <= 1e-6);
            }
        }
        assert_eq!(icosphere(2, 1.0).unwrap().vertex_count(), 162);
    }

    #[test]
    fn parameter_guards() {
        assert!(matches!(icosphere(1, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(icosphere(1, -1.0), Err(Error::Parameter(_))));
        assert!(matches!(icosphere(8, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_triangle_split() {
        let m = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let s = subdivide(&m).unwrap();
        assert_eq!(s.vertex_count(), 6);
        assert_eq!(s.face_count(), 4);
        // sorted edges (0,1), (0,2), (1,2)
        assert_eq!(s.vertices()[3], [0.5, 0.0, 0.0]);
        assert_eq!(s.vertices()[4], [0.0, 0.5, 0.0]);
        assert_eq!(s.vertices()[5], [0.5, 0.5, 0.0]);
        for n in face_normals(&s).unwrap() {
            assert_eq!(n, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn double_subdivision_matches_level_two() {
        let ico = icosphere(0, 1.0).unwrap().base;
        let once = subdivide(&ico).unwrap();
        assert_eq!((once.vertex_count(), once.face_count()), (42, 80));
        let twice = subdivide(&once).unwrap();
        let l2 = icosphere(2, 1.0).unwrap().base;
        assert_eq!(twice.faces(), l2.faces());
        assert_eq!(twice.vertex_count(), l2.vertex_count());
        assert!(twice.is_closed_manifold());
    }

    #[test]
    fn normals_point_outward() {
        for level in 0..=3 {
            let p = icosphere(level, 0.05).unwrap();
            let v = p.base.vertices();
            for (f, n) in p.base.faces().iter().zip(face_normals(&p.base).unwrap()) {
                let c = scale(
                    add(add(v[f[0] as usize], v[f[1] as usize]), v[f[2] as usize]),
                    1.0 / 3.0,
                );
                assert!(dot(n, c) > 0.0);
                assert!((norm(n) - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn icosahedron_laplacian_is_radial() {
        let p = icosphere(0, 1.0).unwrap();
        let lap = uniform_laplacian(&p.base).unwrap();
        let ring = p.base.neighbors();
        for (i, l) in lap.iter().enumerate() {
            assert_eq!(ring[i].len(), 5);
            let v = p.base.vertices()[i];
            // brute force: offset from the mean of the five ring vertices
            let mut mean = [0.0; 3];
            for &j in &ring[i] {
                mean = add(mean, scale(p.base.vertices()[j as usize], 0.2));
            }
            let expect = [v[0] - mean[0], v[1] - mean[1], v[2] - mean[2]];
            for k in 0..3 {
                assert!((l[k] - expect[k]).abs() < 1e-12);
            }
            // parallel to the vertex position, pointing away from the ring
            let cosine = dot(*l, v) / norm(*l);
            assert!((cosine - 1.0).abs() < 1e-9);
            assert!((norm(*l) - (1.0 - 5f64.sqrt() / 5.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn parent_map_properties() {
        let coarse = icosphere(1, 0.05).unwrap();
        let fine = icosphere(3, 0.05).unwrap();
        let parent = parent_map(&coarse, &fine).unwrap();
        assert_eq!(parent.len(), fine.vertex_count());
        for i in 0..coarse.vertex_count() {
            assert_eq!(parent[i], i);
        }
        let mut hist = vec![0usize; coarse.vertex_count()];
        for &p in &parent {
            hist[p] += 1;
        }
        let ratio = fine.vertex_count() as f64 / coarse.vertex_count() as f64;
        for &h in &hist {
            assert!(h as f64 >= ratio / 2.0 && h as f64 <= ratio * 2.0, "{h} vs {ratio}");
        }
        assert!(parent_map(&fine, &coarse).is_err());
        assert!(parent_map(&coarse, &icosphere(3, 0.06).unwrap()).is_err());
    }
}
