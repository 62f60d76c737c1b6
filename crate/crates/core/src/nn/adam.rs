use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam optimizer state for one parameter tensor.
///
/// Keeps first and second moment buffers plus the step count used for bias
/// correction. Hyperparameters live here so different parameter groups can
/// run with different learning rates and epsilons while sharing the update
/// rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(len: usize, lr: S, beta1: S, beta2: S, eps: S) -> Self {
        AdamState { m: vec![S::zero(); len], v: vec![S::zero(); len], t: 0, lr, beta1, beta2, eps }
    }

    /// One Adam update with bias correction:
    ///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
    ///   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    ///
    /// Rejects shape mismatches and non-finite gradients before touching any
    /// state, so a failed call leaves parameters and moments unchanged.
    pub fn step(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: params len {} grads len {} state len {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "adam: gradient component {pos} is {}",
                grads[pos]
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let one = S::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
