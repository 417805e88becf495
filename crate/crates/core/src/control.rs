//! PID tracking of the planned mean motion and variance-gated action fusion.

use serde::{Deserialize, Serialize};

use crate::action::ActionTriple;
use crate::geom::Vec2;
use crate::policy::MotionGmm;
use crate::world::EgoState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub p: f64,
    pub i: f64,
    pub d: f64,
    /// Bound on the integral term's contribution to the output.
    pub integral_clamp: f64,
    pub output_clamp: f64,
}

impl PidGains {
    pub const fn lateral() -> Self {
        PidGains { p: 0.70, i: 0.0, d: 0.0, integral_clamp: 0.0, output_clamp: 1.0 }
    }

    pub const fn longitudinal() -> Self {
        PidGains { p: 0.25, i: 0.20, d: 0.0, integral_clamp: 0.5, output_clamp: 1.0 }
    }

    pub fn is_valid(&self) -> bool {
        [self.p, self.i, self.d, self.integral_clamp, self.output_clamp].iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Single-loop PID with a clamped integral and conditional integration: the
/// integral does not grow while the output is saturated in the same direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Pid {
    pub gains: PidGains,
    integral: f64,
    prev_error: Option<f64>,
}

impl Pid {
    pub fn new(gains: PidGains) -> Self {
        Pid { gains, integral: 0.0, prev_error: None }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        let g = self.gains;
        let deriv = self.prev_error.map_or(0.0, |p| (error - p) / dt);
        self.prev_error = Some(error);
        let unsat = g.p * error + g.i * self.integral + g.d * deriv;
        let saturated = unsat.abs() >= g.output_clamp && unsat.signum() == error.signum();
        if g.i > 0.0 && !saturated {
            let lim = g.integral_clamp / g.i;
            self.integral = (self.integral + error * dt).clamp(-lim, lim);
        }
        let out = g.p * error + g.i * self.integral + g.d * deriv;
        out.clamp(-g.output_clamp, g.output_clamp)
    }
}

/// Lateral and longitudinal loops producing an action.
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub lateral: Pid,
    pub longitudinal: Pid,
}

impl Default for PidController {
    fn default() -> Self {
        PidController::new(PidGains::lateral(), PidGains::longitudinal())
    }
}

impl PidController {
    pub fn new(lateral: PidGains, longitudinal: PidGains) -> Self {
        PidController { lateral: Pid::new(lateral), longitudinal: Pid::new(longitudinal) }
    }

    pub fn reset(&mut self) {
        self.lateral.reset();
        self.longitudinal.reset();
    }

    /// Steers toward an ego-frame target point and tracks `target_speed`.
    pub fn action(&mut self, ego: &EgoState, target: Vec2, target_speed: f64, dt: f64) -> ActionTriple {
        let heading_error = if target.norm() > 1e-9 { target.y.atan2(target.x) } else { 0.0 };
        let steer = self.lateral.step(heading_error, dt).clamp(-1.0, 1.0);
        let u = self.longitudinal.step(target_speed - ego.speed(), dt);
        let (throttle, brake) = if u >= 0.0 { (u.min(1.0), 0.0) } else { (0.0, (-u).min(1.0)) };
        ActionTriple::new(steer, throttle, brake)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConstants {
    pub c1: f64,
    pub c2: f64,
    /// Arc length to the PID target point, meters.
    #[serde(default = "default_target_distance")]
    pub target_distance: f64,
}

fn default_target_distance() -> f64 {
    5.0
}

impl Default for FusionConstants {
    fn default() -> Self {
        FusionConstants { c1: 1.0, c2: 0.0, target_distance: 5.0 }
    }
}

impl FusionConstants {
    pub fn is_valid(&self) -> bool {
        self.c1 > 0.0 && self.c2 >= 0.0 && self.c1.is_finite() && self.c2.is_finite() && self.target_distance > 0.0
    }
}

/// Ego-frame path obtained by integrating the mixture-mean motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPath {
    pub points: Vec<Vec2>,
    /// Arc length travelled up to each point.
    pub cumulative: Vec<f64>,
    pub speeds: Vec<f64>,
}

/// Integrates `(speed, yaw)` steps: heading is set to each step's yaw, then the
/// position advances by `speed * dt` along it.
pub fn integrate_motion(motion: &[f64], dt: f64) -> MeanPath {
    let t = motion.len() / 2;
    let mut p = Vec2::ZERO;
    let mut arc = 0.0;
    let mut out = MeanPath { points: Vec::with_capacity(t), cumulative: Vec::with_capacity(t), speeds: Vec::with_capacity(t) };
    for i in 0..t {
        let (v, yaw) = (motion[2 * i], motion[2 * i + 1]);
        p = p + Vec2::from_angle(yaw) * (v * dt);
        arc += v.abs() * dt;
        out.points.push(p);
        out.cumulative.push(arc);
        out.speeds.push(v);
    }
    out
}

pub fn integrate_mean(gmm: &MotionGmm<f64>, dt: f64) -> MeanPath {
    integrate_motion(&gmm.mixture_mean(), dt)
}

/// First path point whose arc length reaches `distance`, with its 1-based frame
/// index; the last point and `k = T` when the path is shorter.
pub fn target_point(path: &MeanPath, distance: f64) -> (Vec2, usize) {
    match path.cumulative.iter().position(|&s| s >= distance) {
        Some(i) => (path.points[i], i + 1),
        None => (path.points.last().copied().unwrap_or(Vec2::ZERO), path.points.len()),
    }
}

/// Total mixture variance summed over the first `k` frames and both motion dims.
pub fn accumulated_variance(gmm: &MotionGmm<f64>, k: usize) -> f64 {
    let tv = gmm.total_variance();
    tv[..(2 * k).min(tv.len())].iter().sum()
}

/// Reliability gate in (0, 1]: 1 while the variance stays below `c2`.
pub fn reliability(sum_var: f64, c: &FusionConstants) -> f64 {
    (-c.c1 * (sum_var - c.c2).max(0.0)).exp()
}

/// `(1 - lambda) * a1 + lambda * a2`, clamped to valid ranges.
pub fn blend(a1: &ActionTriple, a2: &ActionTriple, lambda: f64) -> ActionTriple {
    a1.blend(a2, lambda).clamped()
}

pub fn fuse_actions(a1: &ActionTriple, a2: &ActionTriple, gmm: &MotionGmm<f64>, k: usize, c: &FusionConstants) -> (ActionTriple, f64) {
    let lambda = reliability(accumulated_variance(gmm, k), c);
    (blend(a1, a2, lambda), lambda)
}

/// Everything computed on the way from a prediction to the applied action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub action: ActionTriple,
    pub a1: ActionTriple,
    pub a2: ActionTriple,
    pub lambda: f64,
    pub k: usize,
    pub target: Vec2,
    pub target_speed: f64,
    pub sum_variance: f64,
}

/// Mean planned speed over the first `k` frames.
pub fn setpoint_speed(path: &MeanPath, k: usize) -> f64 {
    let k = k.clamp(1, path.speeds.len().max(1));
    if path.speeds.is_empty() {
        return 0.0;
    }
    path.speeds[..k].iter().sum::<f64>() / k as f64
}

pub fn control_step(
    a1: &ActionTriple,
    gmm: &MotionGmm<f64>,
    ego: &EgoState,
    pid: &mut PidController,
    c: &FusionConstants,
    dt: f64,
) -> ControlOutput {
    let path = integrate_mean(gmm, dt);
    let (target, k) = target_point(&path, c.target_distance);
    let target_speed = setpoint_speed(&path, k).max(0.0);
    let a2 = pid.action(ego, target, target_speed, dt);
    let sum_variance = accumulated_variance(gmm, k);
    let lambda = reliability(sum_variance, c);
    ControlOutput { action: blend(a1, &a2, lambda), a1: *a1, a2, lambda, k, target, target_speed, sum_variance }
}
