//! Deterministic 2D town simulator.

pub mod agents;
pub mod condition;
pub mod map;
pub mod scenario;
pub mod templates;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use agents::{Agent, AgentKind, AgentNav, Behavior};
pub use condition::{ConditionName, ConditionProfile, Illumination, Weather};
pub use map::{Bounds, Intersection, Lane, LaneMatch, MapNode, Region, Sidewalk, StaticObstacle, TownMap};
pub use scenario::{spawn_scenario, spawn_scenario_at, Density};

use crate::action::ActionTriple;
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Obb, Pose2D, Vec2};

pub const DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Fraction of the wheelbase from the rear axle to the reference point.
    pub rear_ratio: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    /// Maximum front-wheel angle, radians.
    pub max_steer: f64,
    /// Linear speed drag, 1/s.
    pub drag: f64,
    pub half_extents: Vec2,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 2.7,
            rear_ratio: 0.5,
            max_accel: 3.0,
            max_decel: 8.0,
            max_steer: 70f64.to_radians(),
            drag: 0.1,
            half_extents: Vec2::new(2.35, 0.95),
        }
    }
}

impl VehicleParams {
    /// Front-wheel angle, radians, at which the bicycle model follows
    /// curvature `kappa` at the reference point.
    pub fn wheel_angle_for_curvature(&self, kappa: f64) -> f64 {
        let beta = (kappa * self.rear_ratio * self.wheelbase).clamp(-1.0, 1.0).asin();
        (beta.tan() / self.rear_ratio).atan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub vehicle: VehicleParams,
    /// Jaywalk trigger probability per pedestrian per tick.
    pub jaywalk_rate: f64,
    /// Ego distance within which jaywalking may trigger.
    pub jaywalk_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: DT, vehicle: VehicleParams::default(), jaywalk_rate: 0.01, jaywalk_radius: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2D,
    /// Body-frame longitudinal velocity, m/s (never negative).
    pub vx: f64,
    /// Body-frame lateral velocity, m/s.
    pub vy: f64,
    pub yaw_rate: f64,
}

impl EgoState {
    pub fn at_rest(pose: Pose2D) -> Self {
        EgoState { pose, vx: 0.0, vy: 0.0, yaw_rate: 0.0 }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// World-frame velocity of the reference point.
    pub fn world_velocity(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy).rotate(self.pose.yaw)
    }

    pub fn is_valid(&self) -> bool {
        self.pose.is_finite()
            && self.vx.is_finite()
            && self.vy.is_finite()
            && self.yaw_rate.is_finite()
            && self.vx >= 0.0
            // slip angle stays under 60 degrees
            && self.vy.abs() <= self.vx * 3f64.sqrt() + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub ego: EgoState,
    pub agents: Vec<Agent>,
    pub condition: ConditionProfile,
    pub seed: u64,
    pub map_name: String,
}

impl WorldState {
    pub fn time(&self) -> f64 {
        self.tick as f64 * DT
    }
}

/// Something the ego can collide with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CollisionObject {
    Agent(u32),
    Static(usize),
    Boundary,
}

/// Seeded RNG stream for a given tick and purpose. Streams never share state.
pub(crate) fn tick_rng(seed: u64, tick: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    rng.set_stream(tick);
    rng
}

/// Advances one kinematic bicycle step. The reference point sits `rear_ratio`
/// of the wheelbase ahead of the rear axle.
pub fn step_ego(ego: &EgoState, action: &ActionTriple, dt: f64, p: &VehicleParams) -> EgoState {
    let v = ego.speed();
    let delta = p.max_steer * action.steer;
    let lr = p.rear_ratio * p.wheelbase;
    let beta = (p.rear_ratio * delta.tan()).atan();
    let yaw = ego.pose.yaw;
    let x = ego.pose.x + v * (yaw + beta).cos() * dt;
    let y = ego.pose.y + v * (yaw + beta).sin() * dt;
    let yaw_rate = if lr > 0.0 { v / lr * beta.sin() } else { 0.0 };
    let yaw_next = wrap_angle(yaw + yaw_rate * dt);
    let accel = p.max_accel * action.throttle - p.max_decel * action.brake - p.drag * v;
    let v_next = (v + accel * dt).max(0.0);
    let (sb, cb) = beta.sin_cos();
    EgoState {
        pose: Pose2D { x, y, yaw: yaw_next },
        vx: v_next * cb,
        vy: v_next * sb,
        yaw_rate: if lr > 0.0 { v_next / lr * sb } else { 0.0 },
    }
}

/// Owns the immutable map and physical parameters; steps world states.
#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    pub map: &'m TownMap,
    pub config: SimConfig,
}

impl<'m> Simulator<'m> {
    pub fn new(map: &'m TownMap, config: SimConfig) -> Self {
        Simulator { map, config }
    }

    pub fn step(&self, state: &WorldState, action: &ActionTriple) -> Result<WorldState> {
        self.step_dt(state, action, self.config.dt)
    }

    pub fn step_dt(&self, state: &WorldState, action: &ActionTriple, dt: f64) -> Result<WorldState> {
        let action = action.validated()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InputDomain(format!("dt must be positive and finite, got {dt}")));
        }
        let mut next = state.clone();
        next.ego = step_ego(&state.ego, &action, dt, &self.config.vehicle);
        next.agents = agents::step_agents(self.map, state, &self.config, dt);
        next.tick = state.tick + 1;
        Ok(next)
    }

    pub fn ego_box(&self, ego: &EgoState) -> Obb {
        Obb::from_pose(&ego.pose, self.config.vehicle.half_extents)
    }

    /// Everything overlapping the ego footprint; empty means collision-free.
    pub fn check_collision(&self, state: &WorldState) -> Vec<CollisionObject> {
        check_collision(self.map, state, &self.config.vehicle)
    }
}

pub fn check_collision(map: &TownMap, state: &WorldState, vehicle: &VehicleParams) -> Vec<CollisionObject> {
    let ego = Obb::from_pose(&state.ego.pose, vehicle.half_extents);
    let mut hits = Vec::new();
    for a in &state.agents {
        if ego.overlaps(&a.obb()) {
            hits.push(CollisionObject::Agent(a.id));
        }
    }
    for o in &map.obstacles {
        if ego.overlaps(&o.obb()) {
            hits.push(CollisionObject::Static(o.id));
        }
    }
    let b = map.bounds();
    if ego.corners().iter().any(|c| !b.contains(*c)) {
        hits.push(CollisionObject::Boundary);
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moving(vx: f64) -> EgoState {
        EgoState { pose: Pose2D::new(0.0, 0.0, 0.0), vx, vy: 0.0, yaw_rate: 0.0 }
    }

    #[test]
    fn rest_with_no_input_stays_put() {
        let e = moving(0.0);
        let n = step_ego(&e, &ActionTriple::IDLE, DT, &VehicleParams::default());
        assert_eq!(n, e);
    }

    #[test]
    fn full_throttle_from_rest() {
        let n = step_ego(&moving(0.0), &ActionTriple::new(0.0, 1.0, 0.0), DT, &VehicleParams::default());
        assert!((n.vx - 0.3).abs() < 1e-12);
        assert_eq!(n.pose, Pose2D::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn straight_line_advance() {
        let n = step_ego(&moving(5.0), &ActionTriple::IDLE, DT, &VehicleParams::default());
        assert!((n.pose.x - 0.5).abs() < 1e-12);
        assert_eq!(n.pose.y, 0.0);
        assert_eq!(n.pose.yaw, 0.0);
    }

    #[test]
    fn coasting_without_drag_preserves_speed() {
        let p = VehicleParams { drag: 0.0, ..VehicleParams::default() };
        let mut e = moving(7.3);
        for i in 0..1000 {
            let steer = ((i as f64) * 0.05).sin() * 0.6;
            e = step_ego(&e, &ActionTriple::new(steer, 0.0, 0.0), DT, &p);
            assert!(e.is_valid());
        }
        assert!((e.speed() - 7.3).abs() < 1e-9);
    }

    #[test]
    fn drag_decays_geometrically() {
        let p = VehicleParams::default();
        let mut e = moving(10.0);
        for _ in 0..50 {
            e = step_ego(&e, &ActionTriple::IDLE, DT, &p);
        }
        assert!((e.speed() - 10.0 * (1.0 - p.drag * DT).powi(50)).abs() < 1e-9);
    }

    #[test]
    fn brake_never_reverses() {
        let n = step_ego(&moving(0.2), &ActionTriple::new(0.0, 0.0, 1.0), DT, &VehicleParams::default());
        assert_eq!(n.vx, 0.0);
    }
}
