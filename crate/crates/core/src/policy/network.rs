//! Encoders, attention fusion and the two output heads.

use rand::Rng;

use crate::action::ActionTriple;
use crate::policy::gmm::{nll_with_grad, raw_len, MotionGmm};
use crate::policy::layers::{conv_out, relu_backward, relu_inplace, sigmoid, softmax, Conv, Dense};
use crate::policy::tensor::Tensor;
use crate::policy::PolicyConfig;
use crate::planner::ROUTE_FEATURES;
use crate::scalar::Scalar;

pub const BRANCHES: usize = 4;

/// Stack of dense layers; ReLU after every hidden layer and optionally the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
    pub relu_last: bool,
}

impl<S: Scalar> Mlp<S> {
    fn init(sizes: &[usize], relu_last: bool, last_gain: f64, rng: &mut impl Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| Dense::init(sizes[i], sizes[i + 1], if i + 1 == n { last_gain } else { 1.0 }, rng))
            .collect();
        Mlp { layers, relu_last }
    }

    fn zeros_like(&self) -> Self {
        Mlp { layers: self.layers.iter().map(|l| Dense::zeros(l.nin(), l.nout())).collect(), relu_last: self.relu_last }
    }

    fn relu_at(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.relu_last
    }

    /// Activations: input followed by each layer's (post-activation) output.
    fn forward(&self, x: Vec<S>) -> Vec<Vec<S>> {
        let mut acts = vec![x];
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(acts.last().unwrap());
            if self.relu_at(i) {
                relu_inplace(&mut y);
            }
            acts.push(y);
        }
        acts
    }

    fn backward(&self, acts: &[Vec<S>], dout: Vec<S>, g: &mut Mlp<S>, want_dx: bool) -> Option<Vec<S>> {
        let mut d = dout;
        for i in (0..self.layers.len()).rev() {
            if self.relu_at(i) {
                relu_backward(&acts[i + 1], &mut d);
            }
            match self.layers[i].backward(&acts[i], &d, &mut g.layers[i], i > 0 || want_dx) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }
}

/// Strided conv stack followed by a dense projection to the feature size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder<S> {
    pub convs: Vec<Conv<S>>,
    pub proj: Dense<S>,
    pub height: usize,
    pub width: usize,
}

struct EncoderCache<S> {
    /// Input of each conv plus the final conv output, with spatial dims.
    acts: Vec<(Vec<S>, usize, usize)>,
    feature: Vec<S>,
}

impl<S: Scalar> ImageEncoder<S> {
    fn init(cfg: &PolicyConfig, cin: usize, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let (mut h, mut w, mut c) = (cfg.image_height, cfg.image_width, cin);
        for &co in &cfg.conv_channels {
            convs.push(Conv::init(c, co, 2, 1, rng));
            h = conv_out(h, 2, 1);
            w = conv_out(w, 2, 1);
            c = co;
        }
        let proj = Dense::init(h * w * c, cfg.feature_dim, 1.0, rng);
        ImageEncoder { convs, proj, height: cfg.image_height, width: cfg.image_width }
    }

    fn zeros_like(&self) -> Self {
        ImageEncoder {
            convs: self.convs.iter().map(|c| c.zeros_like()).collect(),
            proj: Dense::zeros(self.proj.nin(), self.proj.nout()),
            height: self.height,
            width: self.width,
        }
    }

    fn forward(&self, x: Vec<S>) -> EncoderCache<S> {
        let mut acts = vec![(x, self.height, self.width)];
        for c in &self.convs {
            let (x, h, w) = acts.last().unwrap();
            let (mut y, ho, wo) = c.forward(x, *h, *w);
            relu_inplace(&mut y);
            acts.push((y, ho, wo));
        }
        let mut feature = self.proj.forward(&acts.last().unwrap().0);
        relu_inplace(&mut feature);
        EncoderCache { acts, feature }
    }

    fn backward(&self, cache: &EncoderCache<S>, dfeat: &[S], g: &mut ImageEncoder<S>) {
        let mut d = dfeat.to_vec();
        relu_backward(&cache.feature, &mut d);
        let n = self.convs.len();
        let mut d = self.proj.backward(&cache.acts[n].0, &d, &mut g.proj, n > 0).unwrap_or_default();
        for i in (0..n).rev() {
            relu_backward(&cache.acts[i + 1].0, &mut d);
            let (x, h, w) = &cache.acts[i];
            match self.convs[i].backward(x, *h, *w, &d, &mut g.convs[i], i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    pub camera: ImageEncoder<S>,
    pub ralidar: ImageEncoder<S>,
    pub velocity: Mlp<S>,
    pub route: Mlp<S>,
    pub fusion: Dense<S>,
    pub action: Mlp<S>,
    pub gmm: Mlp<S>,
}

/// Network inputs after scaling, as flat scalar vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared<S> {
    pub camera: Vec<S>,
    pub ralidar: Vec<S>,
    pub velocity: Vec<S>,
    pub route: Vec<S>,
}

/// Branch features, their concatenation, attention and the fused feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle<S> {
    /// Camera, ralidar, velocity and route features, in that order.
    pub features: [Vec<S>; BRANCHES],
    pub concat: Vec<S>,
    pub attention: [S; BRANCHES],
    pub fused: Vec<S>,
}

pub struct ForwardCache<S> {
    camera: EncoderCache<S>,
    ralidar: EncoderCache<S>,
    velocity: Vec<Vec<S>>,
    route: Vec<Vec<S>>,
    pub bundle: FeatureBundle<S>,
    action: Vec<Vec<S>>,
    gmm: Vec<Vec<S>>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn action_raw(&self) -> &[S] {
        self.action.last().unwrap()
    }

    pub fn gmm_raw(&self) -> &[S] {
        self.gmm.last().unwrap()
    }
}

/// Squashes raw head outputs into an action: tanh steer, sigmoid throttle/brake.
pub fn squash<S: Scalar>(raw: &[S]) -> [S; 3] {
    [raw[0].tanh(), sigmoid(raw[1]), sigmoid(raw[2])]
}

pub fn to_action<S: Scalar>(v: [S; 3]) -> ActionTriple {
    ActionTriple::new(v[0].as_f64(), v[1].as_f64(), v[2].as_f64())
}

/// Mean absolute difference over the three action components.
pub fn l1_loss(a: &ActionTriple, b: &ActionTriple) -> f64 {
    a.as_array().iter().zip(b.as_array()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 3.0
}

/// Per-sample loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub l1: f64,
    pub nll: f64,
    pub total: f64,
}

impl<S: Scalar> Network<S> {
    pub fn init(cfg: &PolicyConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.feature_dim;
        Network {
            camera: ImageEncoder::init(cfg, 3, rng),
            ralidar: ImageEncoder::init(cfg, 4, rng),
            velocity: Mlp::init(&[2, cfg.velocity_hidden, d], true, 1.0, rng),
            route: Mlp::init(&[ROUTE_FEATURES, cfg.route_hidden, d], true, 1.0, rng),
            fusion: Dense::init(BRANCHES * d, BRANCHES, 0.1, rng),
            action: Mlp::init(&[d, cfg.action_hidden, 3], false, 0.1, rng),
            gmm: Mlp::init(
                &[BRANCHES * d, cfg.gmm_hidden, raw_len(cfg.mixture_count, cfg.horizon_steps)],
                false,
                0.1,
                rng,
            ),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Network {
            camera: self.camera.zeros_like(),
            ralidar: self.ralidar.zeros_like(),
            velocity: self.velocity.zeros_like(),
            route: self.route.zeros_like(),
            fusion: Dense::zeros(self.fusion.nin(), self.fusion.nout()),
            action: self.action.zeros_like(),
            gmm: self.gmm.zeros_like(),
        }
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (pre, enc) in [("camera", &self.camera), ("ralidar", &self.ralidar)] {
            for (i, c) in enc.convs.iter().enumerate() {
                out.push((format!("{pre}.conv{i}.w"), &c.w));
                out.push((format!("{pre}.conv{i}.b"), &c.b));
            }
            out.push((format!("{pre}.proj.w"), &enc.proj.w));
            out.push((format!("{pre}.proj.b"), &enc.proj.b));
        }
        for (pre, mlp) in [("velocity", &self.velocity), ("route", &self.route)] {
            for (i, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{pre}.dense{i}.w"), &l.w));
                out.push((format!("{pre}.dense{i}.b"), &l.b));
            }
        }
        out.push(("fusion.w".into(), &self.fusion.w));
        out.push(("fusion.b".into(), &self.fusion.b));
        for (pre, mlp) in [("action", &self.action), ("gmm", &self.gmm)] {
            for (i, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{pre}.dense{i}.w"), &l.w));
                out.push((format!("{pre}.dense{i}.b"), &l.b));
            }
        }
        out
    }

    /// Mutable view in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out: Vec<&mut Tensor<S>> = Vec::new();
        for enc in [&mut self.camera, &mut self.ralidar] {
            for c in enc.convs.iter_mut() {
                out.push(&mut c.w);
                out.push(&mut c.b);
            }
            out.push(&mut enc.proj.w);
            out.push(&mut enc.proj.b);
        }
        for mlp in [&mut self.velocity, &mut self.route] {
            for l in mlp.layers.iter_mut() {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        out.push(&mut self.fusion.w);
        out.push(&mut self.fusion.b);
        for mlp in [&mut self.action, &mut self.gmm] {
            for l in mlp.layers.iter_mut() {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            camera: ImageEncoder {
                convs: self
                    .camera
                    .convs
                    .iter()
                    .map(|c| Conv { w: c.w.cast(), b: c.b.cast(), stride: c.stride, pad: c.pad })
                    .collect(),
                proj: Dense { w: self.camera.proj.w.cast(), b: self.camera.proj.b.cast() },
                height: self.camera.height,
                width: self.camera.width,
            },
            ralidar: ImageEncoder {
                convs: self
                    .ralidar
                    .convs
                    .iter()
                    .map(|c| Conv { w: c.w.cast(), b: c.b.cast(), stride: c.stride, pad: c.pad })
                    .collect(),
                proj: Dense { w: self.ralidar.proj.w.cast(), b: self.ralidar.proj.b.cast() },
                height: self.ralidar.height,
                width: self.ralidar.width,
            },
            velocity: cast_mlp(&self.velocity),
            route: cast_mlp(&self.route),
            fusion: Dense { w: self.fusion.w.cast(), b: self.fusion.b.cast() },
            action: cast_mlp(&self.action),
            gmm: cast_mlp(&self.gmm),
        }
    }

    /// Branch encoders only.
    pub fn encode(&self, x: &Prepared<S>) -> [Vec<S>; BRANCHES] {
        [
            self.camera.forward(x.camera.clone()).feature,
            self.ralidar.forward(x.ralidar.clone()).feature,
            self.velocity.forward(x.velocity.clone()).pop().unwrap(),
            self.route.forward(x.route.clone()).pop().unwrap(),
        ]
    }

    /// Attention logits from the concatenated feature, softmax, weighted sum.
    pub fn fuse(&self, features: [Vec<S>; BRANCHES]) -> FeatureBundle<S> {
        let concat: Vec<S> = features.iter().flatten().copied().collect();
        let logits = self.fusion.forward(&concat);
        fuse_with_logits(features, concat, &logits)
    }

    pub fn forward(&self, x: &Prepared<S>) -> ForwardCache<S> {
        let camera = self.camera.forward(x.camera.clone());
        let ralidar = self.ralidar.forward(x.ralidar.clone());
        let velocity = self.velocity.forward(x.velocity.clone());
        let route = self.route.forward(x.route.clone());
        let features = [
            camera.feature.clone(),
            ralidar.feature.clone(),
            velocity.last().unwrap().clone(),
            route.last().unwrap().clone(),
        ];
        let bundle = self.fuse(features);
        let action = self.action.forward(bundle.fused.clone());
        let gmm = self.gmm.forward(bundle.concat.clone());
        ForwardCache { camera, ralidar, velocity, route, bundle, action, gmm }
    }

    /// Loss for one sample; gradients are accumulated into `g` scaled by `scale`.
    pub fn loss_and_grad(
        &self,
        x: &Prepared<S>,
        expert: &ActionTriple,
        motion: &[S],
        cfg: &PolicyConfig,
        g: Option<&mut Network<S>>,
        scale: S,
    ) -> LossParts {
        let cache = self.forward(x);
        let raw_a = cache.action_raw();
        let act = squash(raw_a);
        let target = [S::c(expert.steer), S::c(expert.throttle), S::c(expert.brake)];
        let third = S::c(1.0 / 3.0);
        let l1: S = act.iter().zip(&target).map(|(a, t)| (*a - *t).abs()).sum::<S>() * third;
        let beta = S::c(cfg.nll_weight);
        let (nll, dgmm) = nll_with_grad(cache.gmm_raw(), cfg.mixture_count, cfg.horizon_steps, motion);
        let parts = LossParts { l1: l1.as_f64(), nll: nll.as_f64(), total: (l1 + beta * nll).as_f64() };
        let Some(g) = g else { return parts };

        // action head
        let mut da = vec![S::zero(); 3];
        for i in 0..3 {
            let diff = act[i] - target[i];
            let s = if diff > S::zero() {
                S::one()
            } else if diff < S::zero() {
                -S::one()
            } else {
                S::zero()
            };
            let dsq = if i == 0 { S::one() - act[0] * act[0] } else { act[i] * (S::one() - act[i]) };
            da[i] = scale * third * s * dsq;
        }
        let dfused = self.action.backward(&cache.action, da, &mut g.action, true).unwrap();

        // gmm head
        let dg: Vec<S> = dgmm.iter().map(|v| *v * beta * scale).collect();
        let mut dconcat = self.gmm.backward(&cache.gmm, dg, &mut g.gmm, true).unwrap();

        // attention fusion
        let b = &cache.bundle;
        let d = cfg.feature_dim;
        let mut dattn = [S::zero(); BRANCHES];
        for k in 0..BRANCHES {
            for j in 0..d {
                dattn[k] += b.features[k][j] * dfused[j];
                dconcat[k * d + j] += b.attention[k] * dfused[j];
            }
        }
        let dot: S = (0..BRANCHES).map(|k| b.attention[k] * dattn[k]).sum();
        let dlogits: Vec<S> = (0..BRANCHES).map(|k| b.attention[k] * (dattn[k] - dot)).collect();
        let dc2 = self.fusion.backward(&b.concat, &dlogits, &mut g.fusion, true).unwrap();
        for (a, v) in dconcat.iter_mut().zip(dc2) {
            *a += v;
        }

        // encoders
        self.camera.backward(&cache.camera, &dconcat[..d], &mut g.camera);
        self.ralidar.backward(&cache.ralidar, &dconcat[d..2 * d], &mut g.ralidar);
        self.velocity.backward(&cache.velocity, dconcat[2 * d..3 * d].to_vec(), &mut g.velocity, false);
        self.route.backward(&cache.route, dconcat[3 * d..].to_vec(), &mut g.route, false);
        parts
    }
}

fn cast_mlp<S: Scalar, T: Scalar>(m: &Mlp<S>) -> Mlp<T> {
    Mlp { layers: m.layers.iter().map(|l| Dense { w: l.w.cast(), b: l.b.cast() }).collect(), relu_last: m.relu_last }
}

/// Convex combination of branch features under softmax attention.
pub fn fuse_with_logits<S: Scalar>(features: [Vec<S>; BRANCHES], concat: Vec<S>, logits: &[S]) -> FeatureBundle<S> {
    let a = softmax(logits);
    let attention = [a[0], a[1], a[2], a[3]];
    let d = features[0].len();
    let fused = (0..d).map(|j| (0..BRANCHES).map(|k| attention[k] * features[k][j]).sum()).collect();
    FeatureBundle { features, concat, attention, fused }
}

/// Builds the GMM from a forward cache.
pub fn gmm_of<S: Scalar>(cache: &ForwardCache<S>, cfg: &PolicyConfig) -> MotionGmm<S> {
    MotionGmm::from_raw(cache.gmm_raw(), cfg.mixture_count, cfg.horizon_steps)
}
