//! Dense tensors, a reverse-mode tape, and the Adam / RMSProp optimizers.

pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{OptimizerKind, OptimizerState};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;

use crate::error::{Error, Result};

/// Probability floor applied inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::argument("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Numeric("empty distribution".into()));
    }
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Numeric(format!("probability outside [0, 1] in {p:?}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Numeric(format!("distribution sums to {total}")));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(-p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>())
}

/// `-ln p[target]`, with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy(target: usize, p: &[f64]) -> Result<f64> {
    let &pt = p.get(target).ok_or_else(|| {
        Error::argument(format!("target class {target} out of range for {} classes", p.len()))
    })?;
    Ok(-pt.max(PROB_FLOOR).ln())
}
