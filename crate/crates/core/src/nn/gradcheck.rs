use super::param::ParamTensor;
use crate::error::{Result, StarError};

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`
/// so coordinates with vanishing gradients do not divide by ~0.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat coordinate)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares the gradients stored in `params` against central differences of
/// `loss`. Each coordinate is perturbed by `±step` in turn and restored.
pub fn finite_difference_check<F>(
    params: &mut [ParamTensor],
    step: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[ParamTensor]) -> Result<f64>,
{
    if !loss(params)?.is_finite() {
        return Err(StarError::NonFinite("finite_difference_check loss"));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for pi in 0..params.len() {
        for ci in 0..params[pi].value.as_slice().len() {
            let orig = params[pi].value.as_slice()[ci];
            params[pi].value.as_mut_slice()[ci] = orig + step;
            let plus = loss(params)?;
            params[pi].value.as_mut_slice()[ci] = orig - step;
            let minus = loss(params)?;
            params[pi].value.as_mut_slice()[ci] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(StarError::NonFinite("finite_difference_check loss"));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = params[pi].grad.as_slice()[ci];
            let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((params[pi].name.clone(), ci));
            }
        }
    }
    Ok(report)
}
