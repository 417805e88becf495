//! Scenario spawning with traffic-density profiles.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Obb, Pose2D, Vec2};
use crate::world::agents::{Agent, AgentKind, AgentNav, Behavior};
use crate::world::condition::ConditionProfile;
use crate::world::map::TownMap;
use crate::world::{EgoState, VehicleParams, WorldState};

/// Radius around the ego start kept free of agents at spawn.
pub const EGO_CLEARANCE: f64 = 15.0;
const PLACEMENT_ATTEMPTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Empty,
    Regular,
    Dense,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::Empty, Density::Regular, Density::Dense];

    /// Full-scale (pedestrians, vehicles) inclusive ranges.
    pub fn full_scale_ranges(self) -> ((u32, u32), (u32, u32)) {
        match self {
            Density::Empty => ((0, 0), (0, 0)),
            Density::Regular => ((40, 75), (60, 60)),
            Density::Dense => ((60, 150), (80, 120)),
        }
    }

    /// Ranges after linear scaling and rounding.
    pub fn scaled_ranges(self, scale: f64) -> ((u32, u32), (u32, u32)) {
        let r = |v: u32| (v as f64 * scale).round() as u32;
        let ((p0, p1), (v0, v1)) = self.full_scale_ranges();
        ((r(p0), r(p1)), (r(v0), r(v1)))
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Density::Empty => "empty",
            Density::Regular => "regular",
            Density::Dense => "dense",
        })
    }
}

impl FromStr for Density {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "empty" => Ok(Density::Empty),
            "regular" => Ok(Density::Regular),
            "dense" => Ok(Density::Dense),
            _ => Err(format!("unknown density {s:?}")),
        }
    }
}

/// Spawns the ego at a seeded spawn point and populates agents.
pub fn spawn_scenario(
    map: &TownMap,
    density: Density,
    scale: f64,
    seed: u64,
    condition: ConditionProfile,
) -> Result<WorldState> {
    if map.spawn_points.is_empty() {
        return Err(Error::InvalidMap("map has no spawn points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED));
    let start = *map.spawn_points.choose(&mut rng).expect("non-empty");
    spawn_scenario_at(map, density, scale, seed, condition, start)
}

/// Populates agents around a fixed ego start pose.
pub fn spawn_scenario_at(
    map: &TownMap,
    density: Density,
    scale: f64,
    seed: u64,
    condition: ConditionProfile,
    ego_start: Pose2D,
) -> Result<WorldState> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InputDomain(format!("density scale must lie in (0, 1], got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ((p0, p1), (v0, v1)) = density.scaled_ranges(scale);
    let n_ped = rng.gen_range(p0..=p1);
    let n_veh = rng.gen_range(v0..=v1);

    let ego_box = Obb::from_pose(&ego_start, VehicleParams::default().half_extents);
    let mut boxes: Vec<Obb> = vec![ego_box];
    let mut agents = Vec::new();
    let idx = map.index();
    let road_lanes: Vec<usize> = map.lanes.iter().filter(|l| idx.is_road_lane[l.id]).map(|l| l.id).collect();

    let free = |b: &Obb, boxes: &[Obb]| {
        let grown = Obb::new(b.center, b.half + Vec2::new(0.5, 0.5), b.yaw);
        b.center.dist(ego_start.position()) > EGO_CLEARANCE
            && !boxes.iter().any(|o| o.overlaps(&grown))
            && !map.obstacles.iter().any(|o| o.obb().overlaps(b))
    };

    for i in 0..n_veh {
        let kind = *[
            AgentKind::Car,
            AgentKind::Car,
            AgentKind::Car,
            AgentKind::Van,
            AgentKind::Truck,
            AgentKind::Bus,
            AgentKind::Motorcyclist,
            AgentKind::Bicyclist,
        ]
        .choose(&mut rng)
        .unwrap();
        let half = kind.half_extents();
        let (lo, hi) = kind.speed_range();
        let cruise = rng.gen_range(lo..hi);
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            if road_lanes.is_empty() {
                break;
            }
            let lane = road_lanes[rng.gen_range(0..road_lanes.len())];
            let len = idx.lane_length[lane];
            if len <= 2.0 * half.x {
                continue;
            }
            let s = rng.gen_range(half.x..len - half.x);
            let (p, h) = map.lane_point_at(lane, s);
            let pose = Pose2D::new(p.x, p.y, h);
            let b = Obb::from_pose(&pose, half);
            if free(&b, &boxes) {
                boxes.push(b);
                agents.push(Agent {
                    id: agents.len() as u32,
                    kind,
                    pose,
                    speed: cruise,
                    half_extents: half,
                    behavior: Behavior::LaneFollow,
                    nav: AgentNav::Lane { lane, s, cruise },
                    waiting: 0,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ScenarioCapacity { kind: "vehicle", index: i as usize });
        }
    }

    for i in 0..n_ped {
        let half = AgentKind::Pedestrian.half_extents() * rng.gen_range(0.8..1.1);
        let (lo, hi) = AgentKind::Pedestrian.speed_range();
        let cruise = rng.gen_range(lo..hi);
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            if map.sidewalks.is_empty() {
                break;
            }
            let sw = rng.gen_range(0..map.sidewalks.len());
            let len = *idx.sidewalk_cumulative[sw].last().unwrap();
            let s = rng.gen_range(0.0..len.max(1e-6));
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (p, h) = crate::geom::polyline_point_at(&map.sidewalks[sw].points, &idx.sidewalk_cumulative[sw], s);
            let pose = Pose2D::new(p.x, p.y, if dir > 0.0 { h } else { h + std::f64::consts::PI });
            let b = Obb::from_pose(&pose, half);
            if free(&b, &boxes) {
                boxes.push(b);
                agents.push(Agent {
                    id: agents.len() as u32,
                    kind: AgentKind::Pedestrian,
                    pose,
                    speed: cruise,
                    half_extents: half,
                    behavior: Behavior::SidewalkWalk,
                    nav: AgentNav::Sidewalk { sidewalk: sw, s, dir, cruise },
                    waiting: 0,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ScenarioCapacity { kind: "pedestrian", index: i as usize });
        }
    }

    Ok(WorldState {
        tick: 0,
        ego: EgoState::at_rest(ego_start),
        agents,
        condition,
        seed,
        map_name: map.name.clone(),
    })
}
