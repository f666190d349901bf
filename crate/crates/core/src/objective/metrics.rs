use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, SpatialIndex};

/// Default F-score threshold in millimeters.
pub const DEFAULT_TAU_MM: f64 = 5.0;

/// Completion quality of one prediction against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Symmetric Chamfer distance in millimeters (mm² when squared).
    pub dc_mm: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub tau_mm: f64,
    pub n_pred: usize,
    pub n_gt: usize,
}

/// Distance from every point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyInput("nearest distances need two non-empty clouds".into()));
    }
    Ok(SpatialIndex::from_cloud(to)?.distances(&from.points_f64()))
}

pub fn eval_metrics(pred: &PointCloud, gt: &PointCloud, tau_mm: f64) -> Result<EvalReport> {
    eval_metrics_with(pred, gt, tau_mm, false)
}

/// Metrics with coordinates in meters and `tau_mm` in millimeters.
///
/// `dc_mm` averages the two directional mean nearest-neighbor distances.
/// With `squared` the distances are squared before averaging.
pub fn eval_metrics_with(
    pred: &PointCloud,
    gt: &PointCloud,
    tau_mm: f64,
    squared: bool,
) -> Result<EvalReport> {
    if !(tau_mm > 0.0 && tau_mm.is_finite()) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau_mm}")));
    }
    let to_gt = nearest_distances(pred, gt)?;
    let to_pred = nearest_distances(gt, pred)?;
    let term = |d: f64| {
        let mm = d * 1000.0;
        if squared { mm * mm } else { mm }
    };
    let mean = |ds: &[f64]| ds.iter().map(|&d| term(d)).sum::<f64>() / ds.len() as f64;
    let dc_mm = 0.5 * (mean(&to_gt) + mean(&to_pred));
    let within = |ds: &[f64]| {
        100.0 * ds.iter().filter(|&&d| d * 1000.0 <= tau_mm).count() as f64 / ds.len() as f64
    };
    let precision = within(&to_gt);
    let recall = within(&to_pred);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        dc_mm,
        fscore,
        precision,
        recall,
        tau_mm,
        n_pred: pred.len(),
        n_gt: gt.len(),
    })
}
