use super::{Binding, ParamSet, SubstrateError, Tape, TensorId};

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all parameter coordinates.
    pub max_rel_error: f64,
    /// `(param name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Coordinates where the analytic or numeric value was not finite.
    pub non_finite: Vec<(String, usize)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_error < tol
    }
}

// Relative error floor: coordinates with both gradients below this magnitude
// compare as absolute error instead.
const DENOM_FLOOR: f64 = 1e-6;

/// Compares the tape's analytic gradient of `f` against central finite
/// differences, coordinate by coordinate, over every parameter in `params`.
///
/// `f` must rebuild the same scalar loss on any fresh tape; `eps` must lie in
/// [1e-7, 1e-3].
pub fn grad_check<F>(params: &ParamSet, eps: f64, f: F) -> Result<GradCheckReport, SubstrateError>
where
    F: Fn(&mut Tape, &Binding) -> Result<TensorId, SubstrateError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(SubstrateError::InvalidArgument(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }

    let analytic = {
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let loss = f(&mut tape, &binding)?;
        if tape.value(loss).len() != 1 {
            return Err(SubstrateError::InvalidArgument(
                "grad_check target must be scalar".into(),
            ));
        }
        tape.backward(loss)?;
        binding.gradients(&tape)
    };

    let eval = |p: &ParamSet| -> Result<f64, SubstrateError> {
        let mut tape = Tape::new();
        let binding = p.bind(&mut tape);
        let loss = f(&mut tape, &binding)?;
        Ok(tape.value(loss).as_scalar())
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        non_finite: Vec::new(),
        coords_checked: 0,
    };

    for entry_idx in 0..params.len() {
        let (name, tensor) = params.entry(entry_idx);
        let name = name.to_string();
        let ga = analytic
            .get(&name)
            .expect("analytic gradients align with params");
        for i in 0..tensor.len() {
            let orig = tensor.values()[i];
            work.entry_mut(entry_idx).values_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.entry_mut(entry_idx).values_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.entry_mut(entry_idx).values_mut()[i] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            report.coords_checked += 1;
            if !fd.is_finite() || !ga[i].is_finite() {
                report.non_finite.push((name.clone(), i));
                continue;
            }
            let denom = ga[i].abs().max(fd.abs()).max(DENOM_FLOOR);
            let rel = (ga[i] - fd).abs() / denom;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
