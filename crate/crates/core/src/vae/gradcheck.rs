//! Backpropagated gradients against central finite differences.

use ndarray::Array2;

use super::VaeModel;
use crate::error::Result;

/// Below this magnitude both gradients are treated as zero.
const ABS_FLOOR: f64 = 1e-9;

/// Largest relative difference between the analytic gradient and a central
/// difference of step `step`, over every parameter, with the
/// reparameterization noise held fixed.
pub fn max_relative_gradient_error(
    model: &VaeModel<f64>,
    x: &Array2<f64>,
    noise: &Array2<f64>,
    kl_weight: f64,
    step: f64,
) -> Result<f64> {
    let (_, grads) = model.loss_and_gradients(x.view(), noise.view(), kl_weight)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (ti, tensor) in analytic.iter().enumerate() {
        for (pi, &a) in tensor.iter().enumerate() {
            let orig = probe.params.tensors()[ti][pi];
            probe.params.tensors_mut()[ti][pi] = orig + step;
            let plus = probe.batch_loss(x.view(), noise.view(), kl_weight)?.total;
            probe.params.tensors_mut()[ti][pi] = orig - step;
            let minus = probe.batch_loss(x.view(), noise.view(), kl_weight)?.total;
            probe.params.tensors_mut()[ti][pi] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let scale = a.abs().max(numeric.abs());
            if scale > ABS_FLOOR {
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
    }
    Ok(worst)
}
