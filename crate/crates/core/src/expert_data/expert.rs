//! Privileged scripted driver: pure pursuit on the global route with rule-based
//! speed selection and corridor-based emergency braking.

use serde::{Deserialize, Serialize};

use crate::action::ActionTriple;
use crate::geom::{Obb, Vec2};
use crate::planner::{FullRoute, RouteTracker};
use crate::world::{Agent, TownMap, VehicleParams, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    /// Pure-pursuit lookahead, meters.
    pub lookahead: f64,
    /// Cruise speed on roads, m/s.
    pub road_speed: f64,
    /// Speed inside intersections, m/s.
    pub intersection_speed: f64,
    /// Deceleration used to plan slowdowns ahead of intersections and the goal.
    pub comfort_decel: f64,
    /// Distance within which a leading agent limits speed.
    pub follow_gap: f64,
    /// Bumper-to-bumper distance kept behind a leading agent.
    pub standstill_gap: f64,
    /// Prediction horizon of the emergency-brake corridor, seconds.
    pub corridor_horizon: f64,
    /// Lateral and longitudinal growth of the ego box in the corridor check.
    pub corridor_margin: Vec2,
    /// Speed error to acceleration gain, 1/s.
    pub speed_gain: f64,
    /// Distance before an intersection by which its speed must be reached.
    pub entry_buffer: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            lookahead: 6.0,
            road_speed: 40.0 / 3.6,
            intersection_speed: 15.0 / 3.6,
            comfort_decel: 2.0,
            follow_gap: 12.0,
            standstill_gap: 4.0,
            corridor_horizon: 1.5,
            corridor_margin: Vec2::new(0.6, 0.3),
            speed_gain: 3.0,
            entry_buffer: 3.0,
        }
    }
}

/// Route plus the arc-length intervals it spends inside intersections.
#[derive(Debug, Clone)]
pub struct ExpertPlan {
    pub tracker: RouteTracker,
    pub intersections: Vec<(f64, f64)>,
}

impl ExpertPlan {
    pub fn new(map: &TownMap, route: FullRoute, state: &WorldState) -> Self {
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        let mut open: Option<f64> = None;
        for (i, w) in route.waypoints.iter().enumerate() {
            let s = route.arc_at(i);
            match (map.intersection_at(*w).is_some(), open) {
                (true, None) => open = Some(s),
                (false, Some(a)) => {
                    intervals.push((a, s));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(a) = open {
            intervals.push((a, route.total_length));
        }
        let tracker = RouteTracker::new(route, &state.ego.pose);
        ExpertPlan { tracker, intersections: intervals }
    }

    pub fn route(&self) -> &FullRoute {
        &self.tracker.route
    }
}

/// Front-wheel command that makes the bicycle model follow curvature `kappa`.
pub fn steer_for_curvature(kappa: f64, v: &VehicleParams) -> f64 {
    (v.wheel_angle_for_curvature(kappa) / v.max_steer).clamp(-1.0, 1.0)
}

fn speed_target(state: &WorldState, plan: &ExpertPlan, s: f64, map: &TownMap, cfg: &ExpertConfig, vehicle: &VehicleParams) -> f64 {
    let ego = &state.ego;
    let mut v = cfg.road_speed;
    if map.intersection_at(ego.pose.position()).is_some() {
        v = cfg.intersection_speed;
    }
    let vi2 = cfg.intersection_speed * cfg.intersection_speed;
    for &(a, b) in &plan.intersections {
        if s >= a && s <= b {
            v = v.min(cfg.intersection_speed);
        } else if a > s {
            v = v.min((vi2 + 2.0 * cfg.comfort_decel * (a - s - cfg.entry_buffer).max(0.0)).sqrt());
        }
    }
    let remaining = plan.route().total_length - s;
    v = v.min((2.0 * cfg.comfort_decel * (remaining - 1.0).max(0.0)).sqrt());
    if let Some((gap, lead_speed)) = lead_agent(state, plan, s, cfg, vehicle) {
        v = v.min((lead_speed + 0.5 * (gap - cfg.standstill_gap)).max(0.0));
    }
    v
}

/// Closest agent occupying the route ahead within the follow gap, as
/// (bumper gap, speed along the ego heading).
fn lead_agent(state: &WorldState, plan: &ExpertPlan, s: f64, cfg: &ExpertConfig, vehicle: &VehicleParams) -> Option<(f64, f64)> {
    let ego = &state.ego;
    let heading = ego.pose.heading();
    let mut best: Option<(f64, f64)> = None;
    for a in &state.agents {
        let local = ego.pose.to_local(a.pose.position());
        let reach = vehicle.half_extents.x + cfg.follow_gap + a.half_extents.x.max(a.half_extents.y);
        if local.x <= 0.0 || local.x > reach {
            continue;
        }
        let (on_route, _) = plan.route().point_at(s + local.x);
        if on_route.dist(a.pose.position()) > 1.8 + a.half_extents.y {
            continue;
        }
        let gap = local.x - vehicle.half_extents.x - a.half_extents.x;
        let speed = a.velocity().dot(heading).max(0.0);
        if best.map_or(true, |(g, _)| gap < g) {
            best = Some((gap, speed));
        }
    }
    best
}

/// True when some agent, moving at constant velocity, overlaps the ego box
/// advanced along the route at its current speed within the horizon.
pub fn corridor_blocked(state: &WorldState, route: &FullRoute, s: f64, cfg: &ExpertConfig, vehicle: &VehicleParams) -> bool {
    let ego = &state.ego;
    let v = ego.speed();
    let steps = (cfg.corridor_horizon / crate::world::DT).round() as usize;
    let half = vehicle.half_extents + Vec2::new(cfg.corridor_margin.x, cfg.corridor_margin.y);
    let ahead: Vec<&Agent> = state
        .agents
        .iter()
        .filter(|a| ego.pose.to_local(a.pose.position()).x > -vehicle.half_extents.x)
        .collect();
    if ahead.is_empty() {
        return false;
    }
    for k in 0..=steps {
        let t = k as f64 * crate::world::DT;
        let (p, h) = if k == 0 { (ego.pose.position(), ego.pose.yaw) } else { route.point_at(s + v * t) };
        let ego_box = Obb::new(p, half, h);
        for a in &ahead {
            let future = Obb::new(a.pose.position() + a.velocity() * t, a.half_extents, a.pose.yaw);
            if ego_box.overlaps(&future) {
                return true;
            }
        }
    }
    false
}

/// Expert action for the current state. Advances the plan's route tracker.
pub fn expert_action(state: &WorldState, plan: &mut ExpertPlan, map: &TownMap, cfg: &ExpertConfig, vehicle: &VehicleParams) -> ActionTriple {
    let ego = &state.ego;
    let idx = plan.tracker.update(&ego.pose);
    let s = plan.route().arc_at(idx);
    let (target, _) = plan.route().point_at(s + cfg.lookahead);
    let local = ego.pose.to_local(target);
    let ld = local.norm().max(1.0);
    let alpha = local.y.atan2(local.x);
    let steer = steer_for_curvature(2.0 * alpha.sin() / ld, vehicle);

    if corridor_blocked(state, plan.route(), s, cfg, vehicle) {
        return ActionTriple::new(steer, 0.0, 1.0);
    }
    let v_target = speed_target(state, plan, s, map, cfg, vehicle);
    let accel = cfg.speed_gain * (v_target - ego.speed()) + vehicle.drag * ego.speed();
    let (throttle, brake) =
        if accel >= 0.0 { ((accel / vehicle.max_accel).min(1.0), 0.0) } else { (0.0, (-accel / vehicle.max_decel).min(1.0)) };
    ActionTriple::new(steer, throttle, brake)
}
