//! Intersection over union and its unweighted mean over image–expression
//! pairs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Mask;
use crate::synth::ExprKind;

/// Outcome for one (image, expression) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene: u64,
    pub expression: String,
    pub kind: ExprKind,
    pub intersection: usize,
    pub union: usize,
    pub iou: f64,
}

/// `|pred ∧ gt| / |pred ∨ gt|`, defined as 1 when both masks are empty.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (i, u) = counts(pred, gt)?;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Intersection and union pixel counts.
pub fn counts(pred: &Mask, gt: &Mask) -> Result<(usize, usize)> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(invalid(
            "iou",
            format!("{}x{} vs {}x{}", pred.height, pred.width, gt.height, gt.width),
        ));
    }
    let mut inter = 0;
    let mut union = 0;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok((inter, union))
}

pub fn record(scene: u64, expression: String, kind: ExprKind, pred: &Mask, gt: &Mask) -> Result<EvalRecord> {
    let (intersection, union) = counts(pred, gt)?;
    Ok(EvalRecord {
        scene,
        expression,
        kind,
        intersection,
        union,
        iou: if union == 0 { 1.0 } else { intersection as f64 / union as f64 },
    })
}

/// Unweighted mean of per-pair IoU.
pub fn mean_iou(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(invalid("mean_iou", "no records"));
    }
    Ok(records.iter().map(|r| r.iou).sum::<f64>() / records.len() as f64)
}
