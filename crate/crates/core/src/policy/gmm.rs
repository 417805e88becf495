//! Trajectory-level Gaussian mixture over future (speed, yaw) motion.

use serde::{Deserialize, Serialize};

use crate::policy::layers::{log_sum_exp, softmax};
use crate::scalar::Scalar;

pub const VAR_FLOOR: f64 = 1e-6;
/// Raw log-variance outputs are clamped to this range before exponentiation.
pub const RAW_VAR_LIMIT: f64 = 30.0;
/// Motion dimensions per step: speed (m/s) and yaw relative to the current heading (rad).
pub const MOTION_DIMS: usize = 2;

/// Mixture weights `[M]`, means and diagonal variances `[M, T, 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionGmm<S> {
    pub components: usize,
    pub horizon: usize,
    pub weights: Vec<S>,
    pub means: Vec<S>,
    pub variances: Vec<S>,
}

/// Length of the raw head output for `m` components over `t` steps.
pub fn raw_len(m: usize, t: usize) -> usize {
    m + 2 * m * t * MOTION_DIMS
}

impl<S: Scalar> MotionGmm<S> {
    /// Splits raw head outputs `[logits | means | raw log-variances]`.
    pub fn from_raw(raw: &[S], m: usize, t: usize) -> Self {
        let k = t * MOTION_DIMS;
        debug_assert_eq!(raw.len(), raw_len(m, t));
        let lim = S::c(RAW_VAR_LIMIT);
        MotionGmm {
            components: m,
            horizon: t,
            weights: softmax(&raw[..m]),
            means: raw[m..m + m * k].to_vec(),
            variances: raw[m + m * k..].iter().map(|r| r.max(-lim).min(lim).exp() + S::c(VAR_FLOOR)).collect(),
        }
    }

    fn dims(&self) -> usize {
        self.horizon * MOTION_DIMS
    }

    pub fn mean(&self, m: usize, t: usize, d: usize) -> S {
        self.means[(m * self.horizon + t) * MOTION_DIMS + d]
    }

    pub fn variance(&self, m: usize, t: usize, d: usize) -> S {
        self.variances[(m * self.horizon + t) * MOTION_DIMS + d]
    }

    /// Mixture mean `[T, 2]`.
    pub fn mixture_mean(&self) -> Vec<S> {
        let k = self.dims();
        let mut out = vec![S::zero(); k];
        for m in 0..self.components {
            for i in 0..k {
                out[i] += self.weights[m] * self.means[m * k + i];
            }
        }
        out
    }

    /// Total mixture variance `[T, 2]` by the law of total variance.
    pub fn total_variance(&self) -> Vec<S> {
        let k = self.dims();
        let mean = self.mixture_mean();
        (0..k)
            .map(|i| {
                let second: S = (0..self.components)
                    .map(|m| {
                        let mu = self.means[m * k + i];
                        self.weights[m] * (self.variances[m * k + i] + mu * mu)
                    })
                    .sum();
                (second - mean[i] * mean[i]).max(S::zero())
            })
            .collect()
    }

    /// Per-component log joint densities including the log weight.
    fn component_logs(&self, target: &[S]) -> Vec<S> {
        let k = self.dims();
        let half = S::c(0.5);
        let ln2pi = S::c((2.0 * std::f64::consts::PI).ln());
        (0..self.components)
            .map(|m| {
                let mut acc = self.weights[m].ln();
                for i in 0..k {
                    let v = self.variances[m * k + i];
                    let e = target[i] - self.means[m * k + i];
                    acc -= half * (ln2pi + v.ln() + e * e / v);
                }
                acc
            })
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> MotionGmm<T> {
        let c = |v: &Vec<S>| v.iter().map(|x| T::c(x.as_f64())).collect();
        MotionGmm {
            components: self.components,
            horizon: self.horizon,
            weights: c(&self.weights),
            means: c(&self.means),
            variances: c(&self.variances),
        }
    }
}

/// Negative log-likelihood of a `[T, 2]` target.
pub fn nll_loss<S: Scalar>(gmm: &MotionGmm<S>, target: &[S]) -> S {
    -log_sum_exp(&gmm.component_logs(target))
}

/// NLL and its gradient with respect to the raw head outputs.
pub fn nll_with_grad<S: Scalar>(raw: &[S], m: usize, t: usize, target: &[S]) -> (S, Vec<S>) {
    let gmm = MotionGmm::from_raw(raw, m, t);
    let logs = gmm.component_logs(target);
    let loss = -log_sum_exp(&logs);
    let resp = softmax(&logs);
    let k = t * MOTION_DIMS;
    let lim = S::c(RAW_VAR_LIMIT);
    let half = S::c(0.5);
    let mut g = vec![S::zero(); raw.len()];
    for j in 0..m {
        g[j] = gmm.weights[j] - resp[j];
        for i in 0..k {
            let v = gmm.variances[j * k + i];
            let e = target[i] - gmm.means[j * k + i];
            g[m + j * k + i] = -resp[j] * e / v;
            let r = raw[m + m * k + j * k + i];
            if r > -lim && r < lim {
                let dv = resp[j] * half * (S::one() / v - e * e / (v * v));
                g[m + m * k + j * k + i] = dv * (v - S::c(VAR_FLOOR));
            }
        }
    }
    (loss, g)
}
