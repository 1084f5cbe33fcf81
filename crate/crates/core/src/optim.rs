//! Closed-form solutions of the two constrained problems that every update in
//! the crate reduces to, plus the log-sum-exp primitive they rely on.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `log Σ exp(x)`, stable under large magnitudes. Returns `-inf` for an empty
/// slice or when every entry is `-inf`.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Maximizer of `Σ β_ℓ log α_ℓ` over the probability simplex: `α = β / Σβ`.
pub fn solve_weighted_log<T: Scalar>(beta: &[T]) -> Result<Vec<T>> {
    if let Some(bad) = beta.iter().find(|b| !(b.is_finite() && **b >= T::zero())) {
        return Err(Error::DegenerateWeights(format!("weights must be finite and nonnegative, got {bad}")));
    }
    let total: T = beta.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    Ok(beta.iter().map(|&b| b / total).collect())
}

/// Maximizer of `Σ α_ℓ (β_ℓ − log α_ℓ)` over the probability simplex, i.e. the
/// softmax of `β`. Also returns the optimum value `log Σ exp β_ℓ`.
///
/// Entries equal to `-inf` receive zero mass.
pub fn solve_softmax_log<T: Scalar>(beta: &[T]) -> Result<(Vec<T>, T)> {
    if beta.iter().any(|b| b.is_nan() || *b == T::infinity()) {
        return Err(Error::DegenerateWeights("log-domain weights must be finite or -inf".into()));
    }
    let max = beta.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return Err(Error::DegenerateWeights("all log-domain weights are -inf".into()));
    }
    let shifted: Vec<T> = beta.iter().map(|&b| (b - max).exp()).collect();
    let total: T = shifted.iter().copied().sum();
    let probs = shifted.into_iter().map(|e| e / total).collect();
    Ok((probs, max + total.ln()))
}

/// Softmax in place of a row without reporting the optimum; `-inf` rows are an error.
pub(crate) fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) -> Result<T> {
    let (p, lse) = solve_softmax_log(logits)?;
    out.copy_from_slice(&p);
    Ok(lse)
}
