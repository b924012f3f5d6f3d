use super::Objective;
use crate::error::{Error, Result};

/// Denominator floor of the relative error, so coordinates with a vanishing
/// derivative are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Result of comparing analytic derivatives with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares `compute_gradients` with `(L(θ + h e_i) - L(θ - h e_i)) / 2h` at every
/// coordinate the analytic gradient may touch (all of a dense tensor, the touched
/// rows of a row-sparse one).
///
/// The error at one coordinate is `|a - f| / max(|a|, |f|, RELATIVE_ERROR_FLOOR)`.
pub fn finite_diff_check<B, O>(model: &O, batch: &B, h: f64) -> Result<GradCheckReport>
where
    B: ?Sized,
    O: Objective<B> + Clone,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let (_, grads) = model.compute_gradients(batch)?;
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    if names.len() != grads.len() {
        return Err(Error::Shape(format!("{} tensors but {} gradients", names.len(), grads.len())));
    }
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    for (ti, g) in grads.iter().enumerate() {
        for i in g.support() {
            let orig = probe.tensors_mut()[ti].data()[i];
            probe.tensors_mut()[ti].data_mut()[i] = orig + h;
            let plus = probe.loss(batch)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig - h;
            let minus = probe.loss(batch)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = g.get(i);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(RELATIVE_ERROR_FLOOR);
            report.coordinates += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst_tensor = names[ti].clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
