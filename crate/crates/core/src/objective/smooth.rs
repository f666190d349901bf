use crate::error::{Error, Result};
use crate::geom::{cross, dot, norm, sub, MeshTopology, DEGENERATE_FACE_EPS};

fn check_len(points: &[[f64; 3]], topo: &MeshTopology) -> Result<()> {
    if points.len() != topo.vertex_count() {
        return Err(Error::Dimension(format!(
            "{} vertices for a topology over {}",
            points.len(),
            topo.vertex_count()
        )));
    }
    Ok(())
}

/// `Σ (1 − n_i·n_j)²` over edge-adjacent face pairs, with its vertex gradient.
pub fn normal_consistency_with_grad(
    points: &[[f64; 3]],
    topo: &MeshTopology,
) -> Result<(f64, Vec<[f64; 3]>)> {
    check_len(points, topo)?;
    // unnormalized normal, its length, and the unit normal per face
    let mut raw = Vec::with_capacity(topo.faces.len());
    for (i, f) in topo.faces.iter().enumerate() {
        let a = points[f[0] as usize];
        let e1 = sub(points[f[1] as usize], a);
        let e2 = sub(points[f[2] as usize], a);
        let c = cross(e1, e2);
        let len = norm(c);
        if len < DEGENERATE_FACE_EPS {
            return Err(Error::DegenerateFace { face: i, norm: len });
        }
        raw.push((e1, e2, len, [c[0] / len, c[1] / len, c[2] / len]));
    }
    let mut dn = vec![[0.0; 3]; raw.len()];
    let mut value = 0.0;
    for &(i, j) in &topo.face_pairs {
        let (ni, nj) = (raw[i as usize].3, raw[j as usize].3);
        let r = 1.0 - dot(ni, nj);
        value += r * r;
        for k in 0..3 {
            dn[i as usize][k] -= 2.0 * r * nj[k];
            dn[j as usize][k] -= 2.0 * r * ni[k];
        }
    }
    let mut grad = vec![[0.0; 3]; points.len()];
    for (f, (&(e1, e2, len, n), g_n)) in topo.faces.iter().zip(raw.iter().zip(&dn)) {
        // through the normalization: (I − n nᵀ) g / |c|
        let along = dot(n, *g_n);
        let gc = [
            (g_n[0] - along * n[0]) / len,
            (g_n[1] - along * n[1]) / len,
            (g_n[2] - along * n[2]) / len,
        ];
        let g1 = cross(e2, gc);
        let g2 = cross(gc, e1);
        for k in 0..3 {
            grad[f[0] as usize][k] -= g1[k] + g2[k];
            grad[f[1] as usize][k] += g1[k];
            grad[f[2] as usize][k] += g2[k];
        }
    }
    Ok((value, grad))
}

/// `Σ_i |p_i − mean(N_i)|` over one-ring neighborhoods, with its gradient.
pub fn laplacian_with_grad(
    points: &[[f64; 3]],
    topo: &MeshTopology,
) -> Result<(f64, Vec<[f64; 3]>)> {
    check_len(points, topo)?;
    let lap = crate::geom::laplacian_over_rings(points, &topo.neighbors)?;
    let mut grad = vec![[0.0; 3]; points.len()];
    let mut value = 0.0;
    for (i, l) in lap.iter().enumerate() {
        let len = norm(*l);
        value += len;
        if len == 0.0 {
            continue;
        }
        let u = [l[0] / len, l[1] / len, l[2] / len];
        let ring = &topo.neighbors[i];
        let share = 1.0 / ring.len() as f64;
        for k in 0..3 {
            grad[i][k] += u[k];
        }
        for &j in ring {
            for k in 0..3 {
                grad[j as usize][k] -= u[k] * share;
            }
        }
    }
    Ok((value, grad))
}
