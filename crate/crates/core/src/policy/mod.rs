//! The fusion policy network: encoders, attention fusion, action and motion heads.

pub mod checkpoint;
pub mod gmm;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gmm::{nll_loss, MotionGmm, MOTION_DIMS};
pub use network::{l1_loss, FeatureBundle, LossParts, Network, Prepared, BRANCHES};
pub use tensor::Tensor;
pub use train::{Adam, LossReport, Sample, Trainer};

use crate::action::ActionTriple;
use crate::control::FusionConstants;
use crate::error::{Error, Result};
use crate::planner::ROUTE_FEATURES;
use crate::scalar::Scalar;

/// Fixed multipliers applied to raw inputs before the encoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputScale {
    /// Per ralidar channel: camera-frame X, Y, Z and relative speed.
    pub ralidar: [f64; 4],
    pub velocity: f64,
    pub route: f64,
}

impl Default for InputScale {
    fn default() -> Self {
        InputScale { ralidar: [0.05, 0.2, 0.02, 0.1], velocity: 0.1, route: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub feature_dim: usize,
    pub mixture_count: usize,
    pub horizon_steps: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub conv_channels: Vec<usize>,
    pub velocity_hidden: usize,
    pub route_hidden: usize,
    pub action_hidden: usize,
    pub gmm_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the motion NLL relative to the action L1 loss.
    pub nll_weight: f64,
    /// When false the ralidar input is zeroed (vision-only ablation).
    pub use_ralidar: bool,
    pub input_scale: InputScale,
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            feature_dim: 64,
            mixture_count: 3,
            horizon_steps: 30,
            image_height: 60,
            image_width: 144,
            conv_channels: vec![8, 16, 32],
            velocity_hidden: 32,
            route_hidden: 64,
            action_hidden: 32,
            gmm_hidden: 64,
            learning_rate: 1e-4,
            batch_size: 16,
            nll_weight: 0.1,
            use_ralidar: true,
            input_scale: InputScale::default(),
            init_seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("mixture_count", self.mixture_count),
            ("horizon_steps", self.horizon_steps),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("velocity_hidden", self.velocity_hidden),
            ("route_hidden", self.route_hidden),
            ("action_hidden", self.action_hidden),
            ("gmm_hidden", self.gmm_hidden),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("policy.{name} must be at least 1")));
            }
        }
        if self.conv_channels.iter().any(|c| *c == 0) {
            return Err(Error::Config("policy.conv_channels entries must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("policy.learning_rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if !(self.nll_weight.is_finite() && self.nll_weight >= 0.0) {
            return Err(Error::Config("policy.nll_weight must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn camera_len(&self) -> usize {
        self.image_height * self.image_width * 3
    }

    pub fn ralidar_len(&self) -> usize {
        self.image_height * self.image_width * 4
    }

    pub fn motion_len(&self) -> usize {
        self.horizon_steps * MOTION_DIMS
    }
}

/// Raw network inputs as stored in frames.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    /// H x W x 3, intensities in [0, 1].
    pub camera: &'a [f32],
    /// H x W x 4 ralidar tensor.
    pub ralidar: &'a [f32],
    /// Body-frame (vx, vy), m/s.
    pub velocity: [f32; 2],
    /// Flattened ego-frame local route.
    pub route: &'a [f32],
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { what: what.into(), expected, got });
    }
    Ok(())
}

impl PolicyInput<'_> {
    pub fn prepare<S: Scalar>(&self, cfg: &PolicyConfig) -> Result<Prepared<S>> {
        check_len("camera", cfg.camera_len(), self.camera.len())?;
        check_len("ralidar", cfg.ralidar_len(), self.ralidar.len())?;
        check_len("route", ROUTE_FEATURES, self.route.len())?;
        let sc = &cfg.input_scale;
        let ralidar = if cfg.use_ralidar {
            let k: [S; 4] = sc.ralidar.map(S::c);
            self.ralidar.iter().enumerate().map(|(i, v)| S::c(*v as f64) * k[i % 4]).collect()
        } else {
            vec![S::zero(); self.ralidar.len()]
        };
        Ok(Prepared {
            camera: self.camera.iter().map(|v| S::c(*v as f64)).collect(),
            ralidar,
            velocity: self.velocity.iter().map(|v| S::c(*v as f64 * sc.velocity)).collect(),
            route: self.route.iter().map(|v| S::c(*v as f64 * sc.route)).collect(),
        })
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub action: ActionTriple,
    pub gmm: MotionGmm<f64>,
    pub attention: [f64; BRANCHES],
}

/// Network parameters with their configuration and fusion constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<S> {
    pub config: PolicyConfig,
    pub network: Network<S>,
    pub fusion: FusionConstants,
}

impl<S: Scalar> Policy<S> {
    /// Fresh parameters drawn from `config.init_seed`.
    pub fn init(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let network = Network::init(&config, &mut rng);
        Ok(Policy { config, network, fusion: FusionConstants::default() })
    }

    pub fn cast<T: Scalar>(&self) -> Policy<T> {
        Policy { config: self.config.clone(), network: self.network.cast(), fusion: self.fusion }
    }

    pub fn predict(&self, input: &PolicyInput) -> Result<Prediction> {
        let x = input.prepare::<S>(&self.config)?;
        Ok(self.predict_prepared(&x))
    }

    pub fn predict_prepared(&self, x: &Prepared<S>) -> Prediction {
        let cache = self.network.forward(x);
        let action = network::to_action(network::squash(cache.action_raw()));
        let gmm = network::gmm_of(&cache, &self.config).cast::<f64>();
        let a = &cache.bundle.attention;
        Prediction { action, gmm, attention: [a[0].as_f64(), a[1].as_f64(), a[2].as_f64(), a[3].as_f64()] }
    }
}
