//! Closed-loop expert episodes and per-tick training frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::FrameLayout;
use super::expert::{expert_action, ExpertConfig, ExpertPlan};
use super::{EpisodeLog, EpisodeSetup, Outcome, TickLog, GOAL_RADIUS};
use crate::action::ActionTriple;
use crate::error::Result;
use crate::geom::wrap_angle;
use crate::planner::flatten_route;
use crate::sensors::{SensorConfig, SensorRig};
use crate::world::{EgoState, SimConfig, Simulator, TownMap};

pub const DATASET_SCHEMA: u32 = 1;

/// Occasional steering offsets applied to the executed action (never to the
/// recorded label) so the data shows recoveries from off-center poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Perturbation {
    /// Probability per tick of starting an offset.
    pub rate: f64,
    pub max_offset: f64,
    pub min_ticks: u64,
    pub max_ticks: u64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation { rate: 0.0, max_offset: 0.3, min_ticks: 4, max_ticks: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordConfig {
    pub sim: SimConfig,
    pub sensors: SensorConfig,
    pub expert: ExpertConfig,
    /// Future motion frames per training target.
    pub horizon: usize,
    pub perturbation: Perturbation,
    /// When false only the episode log is produced (no sensors are run).
    pub frames: bool,
}

impl Default for RecordConfig {
    fn default() -> Self {
        RecordConfig {
            sim: SimConfig::default(),
            sensors: SensorConfig::default(),
            expert: ExpertConfig::default(),
            horizon: 30,
            perturbation: Perturbation::default(),
            frames: true,
        }
    }
}

/// One 10 Hz training frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tick: u32,
    /// x, y, yaw, vx, vy, yaw_rate.
    pub ego: [f32; 6],
    pub camera: Vec<f32>,
    pub ralidar: Vec<f32>,
    pub route: Vec<f32>,
    /// steer, throttle, brake.
    pub expert: [f32; 3],
    /// (speed, yaw relative to the frame's heading) for the next `horizon` ticks.
    pub future: Vec<f32>,
}

impl Frame {
    pub fn expert_action(&self) -> ActionTriple {
        ActionTriple::new(self.expert[0] as f64, self.expert[1] as f64, self.expert[2] as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeHeader {
    pub schema: u32,
    pub setup: EpisodeSetup,
    pub outcome: Outcome,
    pub frame_count: usize,
    pub route_length: f64,
    pub distance: f64,
    pub layout: FrameLayout,
    /// Field names and lengths in record order, little-endian f32.
    pub fields: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub header: EpisodeHeader,
    pub frames: Vec<Frame>,
    pub log: EpisodeLog,
}

fn ego_array(e: &EgoState) -> [f32; 6] {
    [e.pose.x as f32, e.pose.y as f32, e.pose.yaw as f32, e.vx as f32, e.vy as f32, e.yaw_rate as f32]
}

/// Future (speed, relative yaw) targets for every frame; frames near the end
/// repeat the terminal motion.
pub fn future_targets(states: &[EgoState], frame_count: usize, horizon: usize) -> Vec<Vec<f32>> {
    let last = states.len() - 1;
    (0..frame_count)
        .map(|i| {
            let yaw0 = states[i].pose.yaw;
            (1..=horizon)
                .flat_map(|j| {
                    let s = &states[(i + j).min(last)];
                    [s.speed() as f32, wrap_angle(s.pose.yaw - yaw0) as f32]
                })
                .collect()
        })
        .collect()
}

/// Runs the expert in closed loop and records frames, the log and the outcome.
pub fn record_episode(map: &TownMap, setup: &EpisodeSetup, cfg: &RecordConfig) -> Result<EpisodeRecord> {
    let (mut state, route) = setup.instantiate(map)?;
    let goal = route.goal();
    let route_length = route.total_length;
    let sim = Simulator::new(map, cfg.sim);
    let rig = cfg.frames.then(|| SensorRig::new(map, cfg.sensors));
    let mut plan = ExpertPlan::new(map, route, &state);
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed ^ 0x7E57_0FF5);
    let mut offset = (0u64, 0.0f64);

    let mut frames: Vec<Frame> = Vec::new();
    let mut states: Vec<EgoState> = Vec::new();
    let mut ticks = Vec::new();
    let (outcome, collisions) = loop {
        states.push(state.ego);
        ticks.push(TickLog { tick: state.tick, pose: state.ego.pose, speed: state.ego.speed() });
        let hits = sim.check_collision(&state);
        if !hits.is_empty() {
            break (Outcome::Collision, hits);
        }
        if state.ego.pose.position().dist(goal) <= GOAL_RADIUS {
            break (Outcome::Success, Vec::new());
        }
        if state.tick >= setup.max_ticks {
            break (Outcome::Timeout, Vec::new());
        }
        let action = expert_action(&state, &mut plan, map, &cfg.expert, &cfg.sim.vehicle);
        if let Some(rig) = &rig {
            let obs = rig.observe(map, &state);
            let local = plan.tracker.local_route();
            frames.push(Frame {
                tick: state.tick as u32,
                ego: ego_array(&state.ego),
                camera: obs.camera.data,
                ralidar: obs.ralidar.data,
                route: flatten_route(&local, &state.ego.pose).into_iter().map(|v| v as f32).collect(),
                expert: [action.steer as f32, action.throttle as f32, action.brake as f32],
                future: Vec::new(),
            });
        }
        let p = &cfg.perturbation;
        if offset.0 == 0 && p.rate > 0.0 && rng.gen_bool(p.rate.min(1.0)) {
            offset = (rng.gen_range(p.min_ticks..=p.max_ticks.max(p.min_ticks)), rng.gen_range(-p.max_offset..=p.max_offset));
        }
        let mut executed = action;
        if offset.0 > 0 {
            executed.steer = (executed.steer + offset.1).clamp(-1.0, 1.0);
            offset.0 -= 1;
        }
        state = sim.step(&state, &executed)?;
    };

    for (f, fut) in frames.iter_mut().zip(future_targets(&states, states.len() - 1, cfg.horizon)) {
        f.future = fut;
    }
    let log = EpisodeLog { setup: setup.clone(), outcome, ticks, collisions, route_length, error: None };
    let cam = &cfg.sensors.camera;
    let layout = FrameLayout { height: cam.height, width: cam.width, horizon: cfg.horizon };
    let header = EpisodeHeader {
        schema: DATASET_SCHEMA,
        setup: setup.clone(),
        outcome,
        frame_count: frames.len(),
        route_length,
        distance: log.distance(),
        layout,
        fields: layout.fields(),
    };
    Ok(EpisodeRecord { header, frames, log })
}
