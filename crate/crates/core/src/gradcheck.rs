//! Central-difference gradient checks against the tape.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

/// Largest discrepancy found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of a scalar loss with central differences
/// `(L(w + eps) - L(w - eps)) / 2 eps` for every non-frozen parameter entry.
///
/// `loss` builds the scalar on a fresh tape from the bound parameters.
pub fn check_gradients<F>(store: &ParamStore, eps: f64, floor: f64, loss: F) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &Bound) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let analytic = {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, true);
        let l = loss(&mut tape, &bound)?;
        let g = tape.backward(l)?;
        bound.gradients(&tape, &g)
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let l = loss(&mut tape, &bound)?;
        Ok(tape.scalar(l))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let ids: Vec<_> = store.iter().map(|(id, name, _)| (id, name.to_owned())).collect();
    for (k, (id, name)) in ids.into_iter().enumerate() {
        if store.is_frozen(id) {
            continue;
        }
        for i in 0..store.get(id).len() {
            let w = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = w + eps;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = w - eps;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = w;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic[k].data()[i], numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
