//! Training losses and evaluation metrics.
//!
//! Loss terms work in the units of their inputs (meters for network
//! outputs). Each term is recorded on the tape as a single scalar node whose
//! gradient is computed here in double precision.

mod chamfer;
mod metrics;
mod smooth;

pub use chamfer::{chamfer_distance, chamfer_with_grad};
pub use metrics::{eval_metrics, eval_metrics_with, nearest_distances, EvalReport, DEFAULT_TAU_MM};
pub use smooth::{laplacian_with_grad, normal_consistency_with_grad};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{MeshTopology, PointCloud, SpatialIndex, TriangleMesh};
use crate::ndiff::{Real, Tape, Var};

/// Coefficients of the coarse, fine, normal and Laplacian terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub coarse: f64,
    pub fine: f64,
    pub normal: f64,
    pub laplacian: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            coarse: 1.0,
            fine: 1.0,
            normal: 0.1,
            laplacian: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(coarse: f64, fine: f64, normal: f64, laplacian: f64) -> Result<Self> {
        let w = LossWeights {
            coarse,
            fine,
            normal,
            laplacian,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.as_array();
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter(format!(
                "loss weights must be finite and non-negative, got {all:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Parameter("loss weights are all zero".into()));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.coarse, self.fine, self.normal, self.laplacian]
    }
}

/// Unweighted values of each term from one evaluation of [`overall_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coarse: f64,
    pub fine: f64,
    pub normal: f64,
    pub laplacian: f64,
    pub total: f64,
}

/// Reads a `V×3` tape value as points.
pub fn tape_points<T: Real>(tape: &Tape<T>, v: Var) -> Result<Vec<[f64; 3]>> {
    let shape = tape.shape(v);
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::Dimension(format!("expected V×3 points, got {shape:?}")));
    }
    Ok(tape
        .data(v)
        .chunks_exact(3)
        .map(|p| [p[0].f64(), p[1].f64(), p[2].f64()])
        .collect())
}

fn record<T: Real>(tape: &mut Tape<T>, x: Var, value: f64, grad: Vec<[f64; 3]>) -> Result<Var> {
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss value {value}")));
    }
    let local = grad.iter().flatten().map(|&g| T::of(g)).collect();
    tape.scalar_fn(x, T::of(value), local)
}

/// Chamfer term of a `V×3` prediction against a fixed target.
pub fn chamfer_term<T: Real>(tape: &mut Tape<T>, pred: Var, gt: &SpatialIndex) -> Result<Var> {
    let (value, grad) = chamfer_with_grad(&tape_points(tape, pred)?, gt)?;
    record(tape, pred, value, grad)
}

pub fn normal_term<T: Real>(tape: &mut Tape<T>, verts: Var, topo: &MeshTopology) -> Result<Var> {
    let (value, grad) = normal_consistency_with_grad(&tape_points(tape, verts)?, topo)?;
    record(tape, verts, value, grad)
}

pub fn laplacian_term<T: Real>(tape: &mut Tape<T>, verts: Var, topo: &MeshTopology) -> Result<Var> {
    let (value, grad) = laplacian_with_grad(&tape_points(tape, verts)?, topo)?;
    record(tape, verts, value, grad)
}

/// Chamfer loss between two clouds.
pub fn chamfer_loss(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    chamfer_distance(&pred.points_f64(), &gt.points_f64())
}

pub fn normal_consistency(mesh: &TriangleMesh) -> Result<f64> {
    Ok(normal_consistency_with_grad(mesh.vertices(), &MeshTopology::from_mesh(mesh)?)?.0)
}

pub fn laplacian_loss(mesh: &TriangleMesh) -> Result<f64> {
    Ok(laplacian_with_grad(mesh.vertices(), &MeshTopology::from_mesh(mesh)?)?.0)
}

/// Prediction handles and fixed data consumed by [`overall_loss`].
pub struct LossInputs<'a> {
    pub coarse: Var,
    pub fine: Var,
    pub coarse_topology: &'a MeshTopology,
    pub fine_topology: &'a MeshTopology,
    pub gt: &'a SpatialIndex,
    /// Also apply the smoothing terms to the coarse mesh.
    pub smooth_coarse: bool,
}

/// `λ1·coarse + λ2·fine + λ3·normal + λ4·laplacian` as one tape scalar.
///
/// Terms with zero weight are not evaluated and report 0 in the breakdown.
pub fn overall_loss<T: Real>(
    tape: &mut Tape<T>,
    inputs: &LossInputs<'_>,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let mut meshes = vec![(inputs.fine, inputs.fine_topology)];
    if inputs.smooth_coarse {
        meshes.push((inputs.coarse, inputs.coarse_topology));
    }
    let mut terms: Vec<(Var, f64)> = Vec::new();
    let mut breakdown = LossBreakdown::default();
    let mut add = |tape: &mut Tape<T>, v: Var, w: f64, slot: &mut f64| {
        *slot += tape.data(v)[0].f64();
        terms.push((v, w));
    };
    if weights.coarse > 0.0 {
        let v = chamfer_term(tape, inputs.coarse, inputs.gt)?;
        add(tape, v, weights.coarse, &mut breakdown.coarse);
    }
    if weights.fine > 0.0 {
        let v = chamfer_term(tape, inputs.fine, inputs.gt)?;
        add(tape, v, weights.fine, &mut breakdown.fine);
    }
    for &(verts, topo) in &meshes {
        if weights.normal > 0.0 {
            let v = normal_term(tape, verts, topo)?;
            add(tape, v, weights.normal, &mut breakdown.normal);
        }
        if weights.laplacian > 0.0 {
            let v = laplacian_term(tape, verts, topo)?;
            add(tape, v, weights.laplacian, &mut breakdown.laplacian);
        }
    }
    let mut total: Option<Var> = None;
    for (v, w) in terms {
        let scaled = tape.scale(v, T::of(w));
        total = Some(match total {
            None => scaled,
            Some(t) => tape.add(t, scaled)?,
        });
    }
    let total = total.expect("validated weights keep at least one term");
    breakdown.total = tape.data(total)[0].f64();
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests;
