use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vehicle command: steering in [-1, 1], throttle and brake in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionTriple {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl ActionTriple {
    pub const IDLE: ActionTriple = ActionTriple { steer: 0.0, throttle: 0.0, brake: 0.0 };

    pub const fn new(steer: f64, throttle: f64, brake: f64) -> Self {
        ActionTriple { steer, throttle, brake }
    }

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite() && self.throttle.is_finite() && self.brake.is_finite()
    }

    pub fn clamped(self) -> Self {
        ActionTriple {
            steer: self.steer.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(0.0, 1.0),
            brake: self.brake.clamp(0.0, 1.0),
        }
    }

    pub fn in_range(&self) -> bool {
        (-1.0..=1.0).contains(&self.steer) && (0.0..=1.0).contains(&self.throttle) && (0.0..=1.0).contains(&self.brake)
    }

    pub fn validated(self) -> Result<Self> {
        if !self.is_finite() {
            return Err(Error::InputDomain(format!("non-finite action {self:?}")));
        }
        Ok(self.clamped())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.steer, self.throttle, self.brake]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ActionTriple::new(a[0], a[1], a[2])
    }

    /// Component-wise `(1 - lambda) * self + lambda * other`.
    pub fn blend(&self, other: &ActionTriple, lambda: f64) -> ActionTriple {
        let a = self.as_array();
        let b = other.as_array();
        ActionTriple::from_array(std::array::from_fn(|i| (1.0 - lambda) * a[i] + lambda * b[i]))
    }
}
