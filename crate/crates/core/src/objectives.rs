//! Classification and segmentation losses.

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator guard of the Dice loss.
pub const DICE_EPS: f64 = 1e-6;

/// Multi-label soft-margin loss summed over expressions:
/// `Σ_j −ȳ_j log σ(z_j) − (1 − ȳ_j) log σ(−z_j)`.
pub fn soft_margin(g: &mut Graph, z: Var, labels: &[f64]) -> Result<Var> {
    let shape = g.shape(z).to_vec();
    if g.value(z).numel() != labels.len() {
        return Err(invalid(
            "soft_margin",
            format!("{} scores vs {} labels", g.value(z).numel(), labels.len()),
        ));
    }
    if let Some(l) = labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(invalid("soft_margin", format!("label {l} outside [0, 1]")));
    }
    let pos = g.constant(Tensor::new(shape.clone(), labels.to_vec())?);
    let neg = g.constant(Tensor::new(shape, labels.iter().map(|l| 1.0 - l).collect())?);
    let log_p = g.log_sigmoid(z)?;
    let minus_z = g.neg(z)?;
    let log_q = g.log_sigmoid(minus_z)?;
    let a = g.mul(pos, log_p)?;
    let b = g.mul(neg, log_q)?;
    let total = g.add(a, b)?;
    let total = g.sum(total)?;
    Ok(g.neg(total)?)
}

/// Dice loss `1 − 2|M∩M̄| / (|M| + |M̄| + ε)`; two empty masks score 0.
pub fn dice(g: &mut Graph, m: Var, target: &Tensor) -> Result<Var> {
    if g.shape(m) != target.shape() {
        return Err(crate::TensorError::ShapeMismatch {
            op: "dice",
            lhs: g.shape(m).to_vec(),
            rhs: target.shape().to_vec(),
        }
        .into());
    }
    let target_mass: f64 = target.data().iter().sum();
    let pred_mass: f64 = g.value(m).data().iter().sum();
    if target_mass == 0.0 && pred_mass == 0.0 {
        let zero = g.constant(Tensor::scalar(0.0));
        // Keep the prediction in the graph so callers can still backpropagate.
        let touch = g.scale(m, 0.0)?;
        let touch = g.sum(touch)?;
        return Ok(g.add(zero, touch)?);
    }
    let t = g.constant(target.clone());
    let inter = g.mul(m, t)?;
    let inter = g.sum(inter)?;
    let mass = g.sum(m)?;
    let denom = g.add_scalar(mass, target_mass + DICE_EPS)?;
    let ratio = g.div(inter, denom)?;
    let ratio = g.scale(ratio, -2.0)?;
    Ok(g.add_scalar(ratio, 1.0)?)
}

/// [`soft_margin`] on plain values.
pub fn soft_margin_loss(z: &[f64], labels: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(invalid("soft_margin", "no scores"));
    }
    let mut g = Graph::new();
    let zv = g.constant(Tensor::new(vec![z.len()], z.to_vec())?);
    let l = soft_margin(&mut g, zv, labels)?;
    Ok(g.value(l).item()?)
}

/// [`dice`] on plain values.
pub fn dice_loss(m: &Tensor, target: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let mv = g.constant(m.clone());
    let l = dice(&mut g, mv, target)?;
    Ok(g.value(l).item()?)
}
