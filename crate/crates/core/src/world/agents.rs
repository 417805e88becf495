//! Road agents and their scripted behaviour policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{polyline_point_at, project_on_polyline, wrap_angle, Obb, Pose2D, Vec2};
use crate::world::map::TownMap;
use crate::world::{tick_rng, SimConfig, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Pedestrian,
    Car,
    Truck,
    Van,
    Bus,
    Motorcyclist,
    Bicyclist,
}

impl AgentKind {
    pub const VEHICLES: [AgentKind; 6] =
        [AgentKind::Car, AgentKind::Truck, AgentKind::Van, AgentKind::Bus, AgentKind::Motorcyclist, AgentKind::Bicyclist];

    pub fn is_vehicle(self) -> bool {
        self != AgentKind::Pedestrian
    }

    pub fn half_extents(self) -> Vec2 {
        match self {
            AgentKind::Pedestrian => Vec2::new(0.3, 0.3),
            AgentKind::Car => Vec2::new(2.2, 0.9),
            AgentKind::Truck => Vec2::new(3.5, 1.2),
            AgentKind::Van => Vec2::new(2.5, 1.0),
            AgentKind::Bus => Vec2::new(5.0, 1.25),
            AgentKind::Motorcyclist => Vec2::new(1.0, 0.4),
            AgentKind::Bicyclist => Vec2::new(0.9, 0.35),
        }
    }

    pub fn height(self) -> f64 {
        match self {
            AgentKind::Pedestrian => 1.7,
            AgentKind::Car => 1.5,
            AgentKind::Truck => 3.5,
            AgentKind::Van => 2.2,
            AgentKind::Bus => 3.2,
            AgentKind::Motorcyclist => 1.4,
            AgentKind::Bicyclist => 1.6,
        }
    }

    /// Cruise speed range, m/s.
    pub fn speed_range(self) -> (f64, f64) {
        match self {
            AgentKind::Pedestrian => (1.0, 1.6),
            AgentKind::Bicyclist => (2.5, 4.5),
            AgentKind::Motorcyclist => (4.0, 7.0),
            _ => (3.0, 7.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    LaneFollow,
    SidewalkWalk,
    Jaywalk,
}

/// Internal navigation state behind an agent's behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AgentNav {
    Lane { lane: usize, s: f64, cruise: f64 },
    Sidewalk { sidewalk: usize, s: f64, dir: f64, cruise: f64 },
    Crossing { start: Vec2, end: Vec2, progress: f64, cruise: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u32,
    pub kind: AgentKind,
    pub pose: Pose2D,
    pub speed: f64,
    pub half_extents: Vec2,
    pub behavior: Behavior,
    pub nav: AgentNav,
    /// Consecutive ticks spent waiting for the ego.
    #[serde(default)]
    pub waiting: u32,
}

impl Agent {
    pub fn obb(&self) -> Obb {
        Obb::from_pose(&self.pose, self.half_extents)
    }

    pub fn velocity(&self) -> Vec2 {
        self.pose.heading() * self.speed
    }

    pub fn height(&self) -> f64 {
        self.kind.height()
    }
}

const FOLLOW_STANDSTILL: f64 = 3.0;
const YIELD_MARGIN: f64 = 0.3;
/// Vehicles only queue behind traffic heading within this angle of their own.
const FOLLOW_MAX_ANGLE: f64 = std::f64::consts::FRAC_PI_3;
/// Agents blocked by the ego for this many ticks leave the world.
pub const STUCK_TICKS: u32 = 30;
const FOLLOW_LOOKAHEAD: f64 = 15.0;

fn obstacle_gap(me: &Agent, other_pos: Vec2, other_yaw: f64, other_half: Vec2) -> Option<f64> {
    let local = me.pose.to_local(other_pos);
    if local.x <= 0.0 || local.x > FOLLOW_LOOKAHEAD {
        return None;
    }
    let rel = other_yaw - me.pose.yaw;
    if wrap_angle(rel).abs() > FOLLOW_MAX_ANGLE {
        return None;
    }
    let along = other_half.x * rel.cos().abs() + other_half.y * rel.sin().abs();
    let across = other_half.x * rel.sin().abs() + other_half.y * rel.cos().abs();
    if local.y.abs() > me.half_extents.y + across + 0.4 {
        return None;
    }
    Some(local.x - me.half_extents.x - along)
}

fn step_vehicle(map: &TownMap, me: &Agent, state: &WorldState, dt: f64, rng: &mut impl Rng) -> Agent {
    let AgentNav::Lane { mut lane, mut s, cruise } = me.nav else { return *me };
    let mut desired = cruise;
    let mut consider = |pos: Vec2, yaw: f64, half: Vec2| {
        if let Some(gap) = obstacle_gap(me, pos, yaw, half) {
            desired = desired.min(((gap - FOLLOW_STANDSTILL) * 0.7).max(0.0));
        }
    };
    consider(state.ego.pose.position(), state.ego.pose.yaw, crate::world::VehicleParams::default().half_extents);
    for o in &state.agents {
        if o.id != me.id {
            consider(o.pose.position(), o.pose.yaw, o.half_extents);
        }
    }
    let speed = if desired > me.speed {
        (me.speed + 2.5 * dt).min(desired)
    } else {
        (me.speed - 6.0 * dt).max(desired)
    };
    s += speed * dt;
    let idx = map.index();
    let mut guard = 0;
    while s > idx.lane_length[lane] && guard < 8 {
        s -= idx.lane_length[lane];
        let next = &idx.outgoing[map.lanes[lane].to];
        if next.is_empty() {
            s = idx.lane_length[lane];
            break;
        }
        lane = next[rng.gen_range(0..next.len())];
        guard += 1;
    }
    let (p, h) = map.lane_point_at(lane, s);
    Agent {
        pose: Pose2D::new(p.x, p.y, h),
        speed,
        nav: AgentNav::Lane { lane, s, cruise },
        ..*me
    }
}

fn sidewalk_pose(map: &TownMap, sidewalk: usize, s: f64, dir: f64) -> Pose2D {
    let (p, h) = polyline_point_at(&map.sidewalks[sidewalk].points, &map.index().sidewalk_cumulative[sidewalk], s);
    Pose2D::new(p.x, p.y, if dir >= 0.0 { h } else { h + std::f64::consts::PI })
}

/// Crossing plan from a sidewalk point straight over the nearest road.
fn plan_crossing(map: &TownMap, from: Vec2) -> Option<(Vec2, Vec2)> {
    let idx = map.index();
    let mut best: Option<(f64, Vec2, f64)> = None;
    for lane in map.lanes.iter().filter(|l| idx.is_road_lane[l.id]) {
        if let Some(pr) = project_on_polyline(&lane.centerline, from) {
            if best.map_or(true, |(d, _, _)| pr.distance < d) {
                best = Some((pr.distance, pr.point, lane.width));
            }
        }
    }
    let (d, q, w) = best?;
    if d < 1e-6 {
        return None;
    }
    let dir = (q - from).normalized();
    Some((from, from + dir * (2.0 * d + w)))
}

fn step_pedestrian(map: &TownMap, me: &Agent, state: &WorldState, cfg: &SimConfig, dt: f64, rng: &mut impl Rng) -> Agent {
    let idx = map.index();
    match me.nav {
        AgentNav::Sidewalk { sidewalk, s, dir, cruise } => {
            let near_ego = me.pose.position().dist(state.ego.pose.position()) <= cfg.jaywalk_radius;
            let trigger = near_ego && rng.gen::<f64>() < cfg.jaywalk_rate;
            if trigger {
                if let Some((start, end)) = plan_crossing(map, me.pose.position()) {
                    let speed = cruise * rng.gen_range(1.0..1.8);
                    let yaw = (end - start).angle();
                    return Agent {
                        pose: Pose2D::new(start.x, start.y, yaw),
                        speed,
                        behavior: super::Behavior::Jaywalk,
                        nav: AgentNav::Crossing { start, end, progress: 0.0, cruise: speed },
                        ..*me
                    };
                }
            }
            let len = idx.sidewalk_cumulative[sidewalk].last().copied().unwrap_or(0.0);
            let mut s = s + dir * cruise * dt;
            let mut dir = dir;
            if s > len {
                s = 2.0 * len - s;
                dir = -1.0;
            } else if s < 0.0 {
                s = -s;
                dir = 1.0;
            }
            let s = s.clamp(0.0, len);
            Agent {
                pose: sidewalk_pose(map, sidewalk, s, dir),
                speed: cruise,
                behavior: super::Behavior::SidewalkWalk,
                nav: AgentNav::Sidewalk { sidewalk, s, dir, cruise },
                ..*me
            }
        }
        AgentNav::Crossing { start, end, progress, cruise } => {
            let total = start.dist(end).max(1e-9);
            let progress = progress + cruise * dt / total;
            if progress >= 1.0 {
                // rejoin the nearest sidewalk on the far side
                let mut best: Option<(f64, usize, f64)> = None;
                for sw in &map.sidewalks {
                    if let Some(pr) = project_on_polyline(&sw.points, end) {
                        if best.map_or(true, |(d, _, _)| pr.distance < d) {
                            best = Some((pr.distance, sw.id, pr.arc));
                        }
                    }
                }
                let walk = me.kind.speed_range().0;
                if let Some((_, sidewalk, s)) = best {
                    return Agent {
                        pose: sidewalk_pose(map, sidewalk, s, 1.0),
                        speed: walk,
                        behavior: super::Behavior::SidewalkWalk,
                        nav: AgentNav::Sidewalk { sidewalk, s, dir: 1.0, cruise: walk },
                        ..*me
                    };
                }
            }
            let p = start.lerp(end, progress.min(1.0));
            Agent {
                pose: Pose2D::new(p.x, p.y, (end - start).angle()),
                speed: cruise,
                nav: AgentNav::Crossing { start, end, progress: progress.min(1.0), cruise },
                ..*me
            }
        }
        AgentNav::Lane { .. } => *me,
    }
}

/// Advances every agent by one tick. Decisions draw from a per-tick RNG stream.
pub fn step_agents(map: &TownMap, state: &WorldState, cfg: &SimConfig, dt: f64) -> Vec<Agent> {
    let mut rng = tick_rng(state.seed, state.tick, 1);
    let ego = Obb::from_pose(&state.ego.pose, cfg.vehicle.half_extents + Vec2::new(YIELD_MARGIN, YIELD_MARGIN));
    state
        .agents
        .iter()
        .map(|a| {
            let next = match a.behavior {
                Behavior::LaneFollow => step_vehicle(map, a, state, dt, &mut rng),
                Behavior::SidewalkWalk | Behavior::Jaywalk => step_pedestrian(map, a, state, cfg, dt, &mut rng),
            };
            // agents never step into the ego's footprint; they wait instead
            if next.obb().overlaps(&ego) {
                Agent { speed: 0.0, waiting: a.waiting + 1, ..*a }
            } else {
                Agent { waiting: 0, ..next }
            }
        })
        .filter(|a| a.waiting < STUCK_TICKS)
        .collect()
}
