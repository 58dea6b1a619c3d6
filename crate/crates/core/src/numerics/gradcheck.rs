//! Central finite-difference checks against the tape's analytic gradients.

use super::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error `|a - n| / max(|a| + |n|, 1e-7)` (L2 norms).
    pub max_relative_error: f64,
    /// Name of the tensor that produced `max_relative_error`.
    pub worst_param: String,
    /// Coordinates whose perturbation crossed a LeakyReLU kink.
    pub skipped: usize,
    pub checked: usize,
}

/// Compares tape gradients of `loss_fn` with central differences of step `h`.
///
/// `loss_fn` must build a fresh tape from the store each call and return the
/// scalar loss. Coordinates where `+h` and `-h` land on different sides of a
/// LeakyReLU kink are skipped and counted.
pub fn check_gradients<F>(store: &ParamStore, h: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let (tape, loss) = loss_fn(&analytic_store)?;
    tape.backward(loss, &mut analytic_store)?;

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        skipped: 0,
        checked: 0,
    };
    for id in store.ids() {
        let analytic = match analytic_store.grad(id) {
            Some(g) => g.values().to_vec(),
            None => continue,
        };
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        for k in 0..analytic.len() {
            let orig = probe.value(id).values()[k];
            probe.value_mut(id).values_mut()[k] = orig + h;
            let (tp, lp) = loss_fn(&probe)?;
            probe.value_mut(id).values_mut()[k] = orig - h;
            let (tm, lm) = loss_fn(&probe)?;
            probe.value_mut(id).values_mut()[k] = orig;
            if tp.kink_signature() != tm.kink_signature() {
                report.skipped += 1;
                continue;
            }
            let numeric = (tp.value(lp).item()? - tm.value(lm).item()?) / (2.0 * h);
            let a = analytic[k];
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
            report.checked += 1;
        }
        // floor keeps round-off on an exactly-zero gradient from reading as 100%
        let denom = (a_sq.sqrt() + n_sq.sqrt()).max(1e-7);
        let rel = diff_sq.sqrt() / denom;
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_param = store.name(id).to_string();
        }
    }
    Ok(report)
}
