//! Adam optimizer and mini-batch training steps.

use serde::{Deserialize, Serialize};

use crate::action::ActionTriple;
use crate::error::{Error, Result};
use crate::policy::network::{LossParts, Network};
use crate::policy::{Policy, PolicyInput};
use crate::scalar::Scalar;

/// One supervised example: inputs, the expert action and the future motion.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: PolicyInput<'a>,
    pub expert: ActionTriple,
    /// `[T, 2]` future (speed, yaw) targets.
    pub motion: &'a [f32],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub l1: f64,
    pub nll: f64,
    pub total: f64,
    pub samples: usize,
}

impl LossReport {
    fn add(&mut self, p: LossParts) {
        self.l1 += p.l1;
        self.nll += p.nll;
        self.total += p.total;
        self.samples += 1;
    }

    fn finish(mut self) -> Self {
        let n = self.samples.max(1) as f64;
        self.l1 /= n;
        self.nll /= n;
        self.total /= n;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.nll.is_finite() && self.total.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(net: &Network<S>, lr: f64) -> Self {
        let shapes: Vec<usize> = net.tensors().iter().map(|(_, t)| t.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|n| vec![S::zero(); *n]).collect(),
            v: shapes.iter().map(|n| vec![S::zero(); *n]).collect(),
        }
    }

    pub fn update(&mut self, net: &mut Network<S>, grads: &Network<S>) {
        self.t += 1;
        let (b1, b2) = (S::c(self.beta1), S::c(self.beta2));
        let c1 = S::c(1.0 - self.beta1.powi(self.t as i32));
        let c2 = S::c(1.0 - self.beta2.powi(self.t as i32));
        let lr = S::c(self.lr);
        let eps = S::c(self.eps);
        let gs = grads.tensors();
        for (k, p) in net.tensors_mut().into_iter().enumerate() {
            let g = &gs[k].1.data;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Mean loss and summed gradient of a batch (each sample weighted 1/len).
pub fn batch_gradients<S: Scalar>(policy: &Policy<S>, batch: &[Sample]) -> Result<(Network<S>, LossReport)> {
    let mut g = policy.network.zeros_like();
    let mut rep = LossReport::default();
    let scale = S::c(1.0 / batch.len().max(1) as f64);
    for s in batch {
        let x = s.input.prepare::<S>(&policy.config)?;
        let motion: Vec<S> = s.motion.iter().map(|v| S::c(*v as f64)).collect();
        if motion.len() != policy.config.motion_len() {
            return Err(Error::Shape { what: "motion".into(), expected: policy.config.motion_len(), got: motion.len() });
        }
        rep.add(policy.network.loss_and_grad(&x, &s.expert, &motion, &policy.config, Some(&mut g), scale));
    }
    Ok((g, rep.finish()))
}

/// Mean losses without gradients.
pub fn evaluate<S: Scalar>(policy: &Policy<S>, samples: &[Sample]) -> Result<LossReport> {
    let mut rep = LossReport::default();
    for s in samples {
        let x = s.input.prepare::<S>(&policy.config)?;
        let motion: Vec<S> = s.motion.iter().map(|v| S::c(*v as f64)).collect();
        rep.add(policy.network.loss_and_grad(&x, &s.expert, &motion, &policy.config, None, S::one()));
    }
    Ok(rep.finish())
}

/// Policy plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<S> {
    pub policy: Policy<S>,
    pub adam: Adam<S>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(policy: Policy<S>) -> Self {
        let adam = Adam::new(&policy.network, policy.config.learning_rate);
        Trainer { policy, adam }
    }

    pub fn step(&self) -> u64 {
        self.adam.t
    }

    /// One Adam step on the batch's mean loss `L1 + beta * NLL`.
    pub fn train_step(&mut self, batch: &[Sample]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::InputDomain("training batch is empty".into()));
        }
        let (g, mut rep) = batch_gradients(&self.policy, batch)?;
        rep.step = self.adam.t + 1;
        if !rep.is_finite() || !g.tensors().iter().all(|(_, t)| t.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: rep.step,
                detail: format!("l1 {} nll {} total {}", rep.l1, rep.nll, rep.total),
            });
        }
        self.adam.update(&mut self.policy.network, &g);
        Ok(rep)
    }
}
