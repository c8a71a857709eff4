//! Finite-difference verification of analytic gradients.

use super::NnError;

/// Compare analytic gradients against central differences.
///
/// `loss_and_grad` evaluates the scalar loss at a parameter vector and
/// returns it together with the analytic gradient. The analytic gradient is
/// taken once at `params`; each entry is then perturbed by ±epsilon and the
/// relative error |analytic − numeric| / max(|analytic| + |numeric|, 1e-8)
/// is maximized over all entries.
pub fn grad_check<F>(mut loss_and_grad: F, params: &[f64], epsilon: f64) -> Result<f64, NnError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(NnError::InvalidArg(format!(
            "grad_check epsilon must be in [1e-7, 1e-3], got {epsilon}"
        )));
    }
    let (_, analytic) = loss_and_grad(params);
    if analytic.len() != params.len() {
        return Err(NnError::Shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut theta = params.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..theta.len() {
        let saved = theta[i];
        theta[i] = saved + epsilon;
        let (loss_plus, _) = loss_and_grad(&theta);
        theta[i] = saved - epsilon;
        let (loss_minus, _) = loss_and_grad(&theta);
        theta[i] = saved;
        let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
