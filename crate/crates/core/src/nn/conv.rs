use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 3x3 convolution with zero padding of 1 and stride 1 or 2.
///
/// Activations are row-major (h, w, c). Weights are stored as
/// out_c x 3 x 3 x in_c — input channels contiguous per tap, so the inner
/// products run over adjacent memory on both sides. Stride 1 preserves the
/// spatial size; stride 2 produces ceil(h/2) x ceil(w/2).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
}

/// Dot product with four independent accumulator lanes. The lane split is a
/// fixed deterministic order (not a fast-math reassociation): results are
/// identical run to run, and the independent chains let the backend keep the
/// multiply-adds pipelined.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut lanes = [S::zero(); 4];
    let mut ac = a.chunks_exact(4);
    let mut bc = b.chunks_exact(4);
    for (ca, cb) in (&mut ac).zip(&mut bc) {
        lanes[0] += ca[0] * cb[0];
        lanes[1] += ca[1] * cb[1];
        lanes[2] += ca[2] * cb[2];
        lanes[3] += ca[3] * cb[3];
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (&x, &y) in ac.remainder().iter().zip(bc.remainder()) {
        acc += x * y;
    }
    acc
}

#[derive(Debug, Clone)]
pub struct ConvGrads<S> {
    pub dw: Vec<S>,
    pub db: Vec<S>,
    pub dx: Vec<S>,
}

impl<S: Scalar> Conv2d<S> {
    /// Uniform fan-in initialization over the 3x3 x in_c receptive field.
    pub fn new_seeded<R: Rng>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        assert!(in_c > 0 && out_c > 0);
        assert!(stride == 1 || stride == 2, "stride must be 1 or 2");
        let s = 1.0 / ((in_c * 9) as f64).sqrt();
        let mut draw = || S::from_f64(rng.random::<f64>() * 2.0 * s - s);
        let w = (0..out_c * in_c * 9).map(|_| draw()).collect();
        let b = (0..out_c).map(|_| draw()).collect();
        Conv2d { in_c, out_c, stride, w, b }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn check_input(&self, x: &[S], h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || x.len() != h * w * self.in_c {
            return Err(Error::Shape(format!(
                "conv: input len {} does not match {}x{}x{}",
                x.len(),
                h,
                w,
                self.in_c
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[S], h: usize, w: usize) -> Result<Vec<S>> {
        self.check_input(x, h, w)?;
        let (oh, ow) = self.out_size(h, w);
        let (in_c, out_c) = (self.in_c, self.out_c);
        let mut y = vec![S::zero(); oh * ow * out_c];
        for oi in 0..oh {
            for oj in 0..ow {
                let out = &mut y[(oi * ow + oj) * out_c..][..out_c];
                out.copy_from_slice(&self.b);
                for ki in 0..3 {
                    let ii = (oi * self.stride + ki) as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kj in 0..3 {
                        let jj = (oj * self.stride + kj) as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let xs = &x[(ii as usize * w + jj as usize) * in_c..][..in_c];
                        let tap = (ki * 3 + kj) * in_c;
                        for (oc, o) in out.iter_mut().enumerate() {
                            *o += dot(&self.w[oc * in_c * 9 + tap..][..in_c], xs);
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Backward pass given dL/dy; returns dL/dW, dL/db, dL/dx.
    pub fn backward(&self, x: &[S], h: usize, w: usize, dy: &[S]) -> Result<ConvGrads<S>> {
        self.check_input(x, h, w)?;
        let (oh, ow) = self.out_size(h, w);
        if dy.len() != oh * ow * self.out_c {
            return Err(Error::Shape(format!(
                "conv backward: dy len {} does not match {}x{}x{}",
                dy.len(),
                oh,
                ow,
                self.out_c
            )));
        }
        let (in_c, out_c) = (self.in_c, self.out_c);
        let mut dw = vec![S::zero(); self.w.len()];
        let mut db = vec![S::zero(); self.b.len()];
        let mut dx = vec![S::zero(); x.len()];
        for oi in 0..oh {
            for oj in 0..ow {
                let gs = &dy[(oi * ow + oj) * out_c..][..out_c];
                for (d, &g) in db.iter_mut().zip(gs) {
                    *d += g;
                }
                for ki in 0..3 {
                    let ii = (oi * self.stride + ki) as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kj in 0..3 {
                        let jj = (oj * self.stride + kj) as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let in_base = (ii as usize * w + jj as usize) * in_c;
                        let xs = &x[in_base..][..in_c];
                        let tap = (ki * 3 + kj) * in_c;
                        for (oc, &g) in gs.iter().enumerate() {
                            let row = oc * in_c * 9 + tap;
                            for (d, &x_v) in dw[row..][..in_c].iter_mut().zip(xs) {
                                *d += g * x_v;
                            }
                            let ws = &self.w[row..][..in_c];
                            for (d, &w_v) in dx[in_base..][..in_c].iter_mut().zip(ws) {
                                *d += g * w_v;
                            }
                        }
                    }
                }
            }
        }
        Ok(ConvGrads { dw, db, dx })
    }
}

/// Nearest-neighbor 2x upsampling of an (h, w, c) activation.
pub fn upsample2x<S: Scalar>(x: &[S], h: usize, w: usize, c: usize) -> Vec<S> {
    debug_assert_eq!(x.len(), h * w * c);
    let (oh, ow) = (h * 2, w * 2);
    let mut y = vec![S::zero(); oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            let src = ((i / 2) * w + j / 2) * c;
            let dst = (i * ow + j) * c;
            y[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    y
}

/// Adjoint of [`upsample2x`]: each source cell accumulates its four copies.
pub fn upsample2x_backward<S: Scalar>(dy: &[S], h: usize, w: usize, c: usize) -> Vec<S> {
    debug_assert_eq!(dy.len(), h * 2 * w * 2 * c);
    let ow = w * 2;
    let mut dx = vec![S::zero(); h * w * c];
    for i in 0..h * 2 {
        for j in 0..ow {
            let dst = ((i / 2) * w + j / 2) * c;
            let src = (i * ow + j) * c;
            for k in 0..c {
                dx[dst + k] += dy[src + k];
            }
        }
    }
    dx
}
