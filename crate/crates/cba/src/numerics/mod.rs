//! Deterministic numerics: dense tensors, stable softmax / log-sum-exp,
//! a seeded splitmix64 stream and a finite-difference gradient checker.
//!
//! Everything is 64-bit and pure; no hidden global state.

mod gradcheck;
mod rng;
mod tensor;

pub use gradcheck::grad_check;
pub use rng::{RngState, RngStream};
pub use tensor::{dot, Tensor2};

use crate::error::{Error, Result};

/// Numerically stable softmax of one logit row (max-subtraction).
pub fn softmax_row(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// In-place row-wise softmax over a tensor.
pub fn softmax_rows(t: &mut Tensor2) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        if row.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(())
}

/// ln(sum(exp(xs))), stable under large-magnitude inputs.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // All terms are exactly zero probability.
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Two- and three-way logsumexp used in the CTC inner loops, avoiding the
/// slice allocation of the general form.
#[inline]
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[inline]
pub fn logsumexp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}
