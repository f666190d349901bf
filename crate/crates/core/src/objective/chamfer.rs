use crate::error::{Error, Result};
use crate::geom::SpatialIndex;

/// Sum-of-means Chamfer value and its gradient with respect to `pred`.
///
/// `mean_i min_j |p_i − g_j| + mean_j min_i |g_j − p_i|`, with the
/// nearest-neighbor assignment frozen at the current points.
pub fn chamfer_with_grad(pred: &[[f64; 3]], gt: &SpatialIndex) -> Result<(f64, Vec<[f64; 3]>)> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("chamfer prediction has no points".into()));
    }
    let pred_index = SpatialIndex::new(pred.to_vec())?;
    let np = pred.len() as f64;
    let ng = gt.len() as f64;
    let mut grad = vec![[0.0; 3]; pred.len()];
    let mut forward = 0.0;
    for (i, &p) in pred.iter().enumerate() {
        let (j, d) = gt.nearest(p);
        forward += d;
        if d > 0.0 {
            let g = gt.points()[j];
            for k in 0..3 {
                grad[i][k] += (p[k] - g[k]) / (d * np);
            }
        }
    }
    let mut backward = 0.0;
    for &g in gt.points() {
        let (i, d) = pred_index.nearest(g);
        backward += d;
        if d > 0.0 {
            let p = pred[i];
            for k in 0..3 {
                grad[i][k] += (p[k] - g[k]) / (d * ng);
            }
        }
    }
    Ok((forward / np + backward / ng, grad))
}

/// Chamfer value between two point sets, in their own units.
pub fn chamfer_distance(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::EmptyInput("chamfer target has no points".into()));
    }
    Ok(chamfer_with_grad(pred, &SpatialIndex::new(gt.to_vec())?)?.0)
}
