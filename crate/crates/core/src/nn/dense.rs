use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fully connected layer, weights stored row-major as out_dim x in_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
}

/// Gradients produced by one backward call.
#[derive(Debug, Clone)]
pub struct DenseGrads<S> {
    pub dw: Vec<S>,
    pub db: Vec<S>,
    pub dx: Vec<S>,
}

impl<S: Scalar> DenseLayer<S> {
    /// Uniform fan-in initialization: w, b ~ U[-1/sqrt(in_dim), 1/sqrt(in_dim)].
    /// Samples are drawn in f64 so f32 and f64 layers built from the same rng
    /// state hold the same values up to rounding.
    pub fn new_seeded<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        assert!(in_dim > 0 && out_dim > 0);
        let s = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || S::from_f64(rng.random::<f64>() * 2.0 * s - s);
        let w = (0..out_dim * in_dim).map(|_| draw()).collect();
        let b = (0..out_dim).map(|_| draw()).collect();
        DenseLayer { in_dim, out_dim, w, b }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "dense forward: input len {} expected {}",
                x.len(),
                self.in_dim
            )));
        }
        let mut y = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi * *xi;
            }
            y.push(acc);
        }
        Ok(y)
    }

    /// Backward pass for y = W x + b given dL/dy; returns dL/dW, dL/db, dL/dx.
    pub fn backward(&self, x: &[S], dy: &[S]) -> Result<DenseGrads<S>> {
        if x.len() != self.in_dim || dy.len() != self.out_dim {
            return Err(Error::Shape(format!(
                "dense backward: x len {} dy len {} expected {} and {}",
                x.len(),
                dy.len(),
                self.in_dim,
                self.out_dim
            )));
        }
        let mut dw = vec![S::zero(); self.w.len()];
        let mut dx = vec![S::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let g = dy[o];
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let drow = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                drow[i] = g * x[i];
                dx[i] += g * row[i];
            }
        }
        Ok(DenseGrads { dw, db: dy.to_vec(), dx })
    }
}
