use super::Parameterized;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares the gradients stored in `params` against central differences of
/// `loss`. Values are restored exactly after each probe.
pub fn finite_diff_check<P, F>(params: &mut P, eps: f64, mut loss: F) -> Result<GradCheckReport>
where
    P: Parameterized,
    F: FnMut(&P) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let analytic: Vec<(String, Vec<f64>)> = params
        .tensors_mut()
        .into_iter()
        .map(|t| (t.name.clone(), t.grad().data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (ti, (name, grads)) in analytic.iter().enumerate() {
        for (k, &g) in grads.iter().enumerate() {
            let orig = params.tensors()[ti].value().data()[k];

            params.tensors_mut()[ti].value_mut().data_mut()[k] = orig + eps;
            let plus = loss(params)?;
            params.tensors_mut()[ti].value_mut().data_mut()[k] = orig - eps;
            let minus = loss(params)?;
            params.tensors_mut()[ti].value_mut().data_mut()[k] = orig;

            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!("loss not finite while probing {name}[{k}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (g - numeric).abs() / numeric.abs().max(1.0);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), k));
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
