//! Minimal neural-network kernels sized for desk-scale experiments.
//!
//! Everything here is a plain loop over `Vec<S>` buffers with explicit
//! shapes. Activations are stored in row-major (height, width, channel)
//! order. Each kernel has a hand-written backward pass; the tests pin every
//! one of them against central finite differences.

mod adam;
mod conv;
mod dense;

pub use adam::AdamState;
pub use conv::{upsample2x, upsample2x_backward, Conv2d, ConvGrads};
pub use dense::{DenseGrads, DenseLayer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Elementwise max(x, 0).
pub fn relu<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v.max(S::zero())).collect()
}

/// Gradient of [`relu`] given the pre-activation input.
///
/// The derivative at exactly zero is taken as zero (right limit is not used);
/// this matches the forward's `max` and keeps the subgradient choice fixed.
pub fn relu_backward<S: Scalar>(pre: &[S], dy: &[S]) -> Vec<S> {
    debug_assert_eq!(pre.len(), dy.len());
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > S::zero() { g } else { S::zero() })
        .collect()
}

/// Elementwise logistic function, evaluated in a form that never
/// exponentiates a positive argument.
pub fn sigmoid<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| sigmoid_one(v)).collect()
}

#[inline]
pub fn sigmoid_one<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        let e = (-v).exp();
        S::one() / (S::one() + e)
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Gradient of [`sigmoid`] given the forward *output* y = sigmoid(x).
pub fn sigmoid_backward<S: Scalar>(y: &[S], dy: &[S]) -> Vec<S> {
    debug_assert_eq!(y.len(), dy.len());
    y.iter()
        .zip(dy)
        .map(|(&o, &g)| g * o * (S::one() - o))
        .collect()
}

/// Weighted mean-squared loss and its gradient with respect to `pred`.
///
/// loss = weight * mean((pred - target)^2). Returned gradient has the same
/// length as `pred`. The weight multiplies the whole loss, so loss ratios are
/// independent of it.
pub fn l2_loss<S: Scalar>(pred: &[S], target: &[S], weight: S) -> Result<(S, Vec<S>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "l2_loss: pred len {} vs target len {}",
            pred.len(),
            target.len()
        )));
    }
    let n = S::from_usize(pred.len());
    let mut acc = S::zero();
    let mut grad = Vec::with_capacity(pred.len());
    let two = S::from_f64(2.0);
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        acc += d * d;
        grad.push(two * weight * d / n);
    }
    Ok((weight * acc / n, grad))
}
