use std::fmt;

use super::{Gradients, Layer};

/// Relative errors are taken against `max(|analytic|, |numeric|, FLOOR)`.
const FLOOR: f64 = 1e-7;

/// Address of one scalar parameter: `layers[layer].params[tensor][index]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLocation {
    pub layer: usize,
    pub tensor: usize,
    pub index: usize,
}

impl fmt::Display for ParamLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {} tensor {} element {}", self.layer, self.tensor, self.index)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter with the largest error.
    pub worst: Option<ParamLocation>,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "pass" } else { "FAIL" };
        write!(
            f,
            "{verdict}: {} parameters, max relative error {:.3e} (tolerance {:.1e})",
            self.checked, self.max_rel_error, self.tolerance
        )?;
        if let Some(w) = self.worst {
            write!(f, " at {w}")?;
        }
        Ok(())
    }
}

/// Compares `analytic` against central differences of `loss` with step `h`
/// for every scalar parameter.
pub fn check_gradients<F>(
    layers: &[Layer],
    analytic: &Gradients,
    h: f64,
    tolerance: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&[Layer]) -> f64,
{
    let mut work = layers.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance,
        passed: true,
    };
    for l in 0..work.len() {
        for t in 0..work[l].params.len() {
            for i in 0..work[l].params[t].len() {
                let original = work[l].params[t].data()[i];
                work[l].params[t].data_mut()[i] = original + h;
                let plus = loss(&work);
                work[l].params[t].data_mut()[i] = original - h;
                let minus = loss(&work);
                work[l].params[t].data_mut()[i] = original;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic.0[l][t].data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                report.checked += 1;
                if rel > report.max_rel_error || rel.is_nan() {
                    report.max_rel_error = rel;
                    report.worst = Some(ParamLocation {
                        layer: l,
                        tensor: t,
                        index: i,
                    });
                }
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    report
}
