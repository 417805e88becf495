//! Multimodal probabilistic end-to-end driving on a deterministic 2D town.
//!
//! The crate bundles a kinematic town simulator, an A* route planner,
//! synthetic camera/lidar/radar sensors with image-plane projection, a small
//! fusion network with a Gaussian-mixture motion head, uncertainty-gated PID
//! control, a scripted expert with a dataset format, and a benchmark harness.

pub mod action;
pub mod benchmark;
pub mod control;
pub mod error;
pub mod expert_data;
pub mod geom;
pub mod io;
pub mod planner;
pub mod policy;
pub mod scalar;
pub mod sensors;
pub mod world;

pub use action::ActionTriple;
pub use error::{Error, Result};
pub use geom::{Obb, Pose2D, Vec2};
pub use scalar::Scalar;
pub use policy::{Policy, PolicyConfig};

/// Double-precision policy, used for training.
pub type Policy64 = Policy<f64>;
/// Single-precision policy, used for deployment.
pub type Policy32 = Policy<f32>;
pub type Network64 = policy::Network<f64>;
pub type Network32 = policy::Network<f32>;
pub type Trainer64 = policy::Trainer<f64>;
pub type Trainer32 = policy::Trainer<f32>;
