//! Dense and strided-convolution layers with hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::policy::tensor::Tensor;
use crate::scalar::Scalar;

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

pub fn relu_inplace<S: Scalar>(x: &mut [S]) {
    for v in x.iter_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Zeroes gradient entries whose activation output was clipped by ReLU.
pub fn relu_backward<S: Scalar>(out: &[S], grad: &mut [S]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= S::zero() {
            *g = S::zero();
        }
    }
}

pub fn softmax<S: Scalar>(z: &[S]) -> Vec<S> {
    let m = z.iter().copied().fold(S::neg_infinity(), S::max);
    let e: Vec<S> = z.iter().map(|v| (*v - m).exp()).collect();
    let s: S = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_sum_exp<S: Scalar>(z: &[S]) -> S {
    let m = z.iter().copied().fold(S::neg_infinity(), S::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (*v - m).exp()).sum::<S>().ln()
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn init_normal<S: Scalar>(n: usize, std: f64, rng: &mut impl Rng) -> Vec<S> {
    let d = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| S::c(d.sample(rng))).collect()
}

/// Fully connected layer, weights `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(nin: usize, nout: usize) -> Self {
        Dense { w: Tensor::zeros(&[nout, nin]), b: Tensor::zeros(&[nout]) }
    }

    /// He-style initialization scaled by `gain`.
    pub fn init(nin: usize, nout: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let std = gain * (2.0 / nin as f64).sqrt();
        Dense { w: Tensor { shape: vec![nout, nin], data: init_normal(nin * nout, std, rng) }, b: Tensor::zeros(&[nout]) }
    }

    pub fn nin(&self) -> usize {
        self.w.shape[1]
    }

    pub fn nout(&self) -> usize {
        self.w.shape[0]
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let nin = self.nin();
        debug_assert_eq!(x.len(), nin);
        (0..self.nout()).map(|o| self.b.data[o] + dot(&self.w.data[o * nin..(o + 1) * nin], x)).collect()
    }

    /// Accumulates parameter gradients into `g`; returns the input gradient when asked.
    pub fn backward(&self, x: &[S], dy: &[S], g: &mut Dense<S>, want_dx: bool) -> Option<Vec<S>> {
        let nin = self.nin();
        let mut dx = want_dx.then(|| vec![S::zero(); nin]);
        for (o, &d) in dy.iter().enumerate() {
            if d == S::zero() {
                continue;
            }
            g.b.data[o] += d;
            axpy(d, x, &mut g.w.data[o * nin..(o + 1) * nin]);
            if let Some(dx) = dx.as_mut() {
                axpy(d, &self.w.data[o * nin..(o + 1) * nin], dx);
            }
        }
        dx
    }
}

/// 3x3 convolution, channel-last activations, weights `[out, ky, kx, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
    pub stride: usize,
    pub pad: usize,
}

pub const KERNEL: usize = 3;

pub fn conv_out(n: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - KERNEL) / stride + 1
}

impl<S: Scalar> Conv<S> {
    pub fn init(cin: usize, cout: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan_in = cin * KERNEL * KERNEL;
        let std = (2.0 / fan_in as f64).sqrt();
        Conv {
            w: Tensor { shape: vec![cout, KERNEL, KERNEL, cin], data: init_normal(cout * fan_in, std, rng) },
            b: Tensor::zeros(&[cout]),
            stride,
            pad,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv { w: Tensor::zeros(&self.w.shape), b: Tensor::zeros(&self.b.shape), stride: self.stride, pad: self.pad }
    }

    pub fn cin(&self) -> usize {
        self.w.shape[3]
    }

    pub fn cout(&self) -> usize {
        self.w.shape[0]
    }

    fn taps(&self, o: usize, n: usize) -> impl Iterator<Item = (usize, usize)> {
        let base = (o * self.stride) as isize - self.pad as isize;
        (0..KERNEL).filter_map(move |k| {
            let i = base + k as isize;
            (i >= 0 && (i as usize) < n).then_some((k, i as usize))
        })
    }

    pub fn forward(&self, x: &[S], h: usize, w: usize) -> (Vec<S>, usize, usize) {
        let (cin, cout) = (self.cin(), self.cout());
        let (ho, wo) = (conv_out(h, self.stride, self.pad), conv_out(w, self.stride, self.pad));
        let mut y = vec![S::zero(); ho * wo * cout];
        for oy in 0..ho {
            for ox in 0..wo {
                let out = &mut y[(oy * wo + ox) * cout..][..cout];
                out.copy_from_slice(&self.b.data);
                for (ky, iy) in self.taps(oy, h) {
                    for (kx, ix) in self.taps(ox, w) {
                        let xs = &x[(iy * w + ix) * cin..][..cin];
                        for (co, acc) in out.iter_mut().enumerate() {
                            *acc += dot(&self.w.data[((co * KERNEL + ky) * KERNEL + kx) * cin..][..cin], xs);
                        }
                    }
                }
            }
        }
        (y, ho, wo)
    }

    pub fn backward(&self, x: &[S], h: usize, w: usize, dy: &[S], g: &mut Conv<S>, want_dx: bool) -> Option<Vec<S>> {
        let (cin, cout) = (self.cin(), self.cout());
        let (ho, wo) = (conv_out(h, self.stride, self.pad), conv_out(w, self.stride, self.pad));
        let mut dx = want_dx.then(|| vec![S::zero(); h * w * cin]);
        for oy in 0..ho {
            for ox in 0..wo {
                let d = &dy[(oy * wo + ox) * cout..][..cout];
                for (co, &dv) in d.iter().enumerate() {
                    g.b.data[co] += dv;
                }
                for (ky, iy) in self.taps(oy, h) {
                    for (kx, ix) in self.taps(ox, w) {
                        let xo = (iy * w + ix) * cin;
                        for (co, &dv) in d.iter().enumerate() {
                            if dv == S::zero() {
                                continue;
                            }
                            let wo_ = ((co * KERNEL + ky) * KERNEL + kx) * cin;
                            axpy(dv, &x[xo..xo + cin], &mut g.w.data[wo_..wo_ + cin]);
                            if let Some(dx) = dx.as_mut() {
                                axpy(dv, &self.w.data[wo_..wo_ + cin], &mut dx[xo..xo + cin]);
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}
