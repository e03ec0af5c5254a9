//! Central finite-difference check of reverse-mode gradients.

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Compares the analytic gradient of a scalar function against central
/// differences at `point`.
///
/// `build` receives a fresh graph and one leaf per input tensor and must
/// return a one-element output. The result is the maximum over all input
/// coordinates of `|analytic − numeric| / max(1, |numeric|)`.
pub fn gradcheck<F>(build: F, point: &[Tensor], step: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(TensorError::Step(step));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let v = g.value(out).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TensorError::NonFinite { op: "gradcheck" })
        }
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var);
        for idx in 0..point[k].numel() {
            let orig = point[k].data()[idx];
            probe[k].data_mut()[idx] = orig + step;
            let plus = eval(&probe)?;
            probe[k].data_mut()[idx] = orig - step;
            let minus = eval(&probe)?;
            probe[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[idx];
            if !a.is_finite() {
                return Err(TensorError::NonFinite { op: "gradcheck" });
            }
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
