//! Scripted expert, episode recording, dataset files and the train/validation split.

pub mod dataset;
pub mod expert;
pub mod record;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{
    read_episode, read_header, read_index, split_dataset, write_episode, write_index, DatasetIndex, EpisodeData, FrameLayout, FrameView, IndexEntry,
    FRAMES_FILE, HEADER_FILE, INDEX_FILE,
};
pub use expert::{expert_action, ExpertConfig, ExpertPlan};
pub use record::{future_targets, record_episode, EpisodeHeader, EpisodeRecord, Frame, Perturbation, RecordConfig, DATASET_SCHEMA};

use crate::error::{Error, Result};
use crate::geom::Pose2D;
use crate::planner::{plan_global, FullRoute};
use crate::world::{spawn_scenario_at, CollisionObject, ConditionName, ConditionProfile, Density, TownMap, WorldState};

/// Goal tolerance for a successful episode, meters.
pub const GOAL_RADIUS: f64 = 3.0;

/// Everything needed to reproduce one episode's initial state and route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSetup {
    pub map: String,
    pub start: Pose2D,
    pub goal: Pose2D,
    pub density: Density,
    pub density_scale: f64,
    pub condition: ConditionName,
    pub seed: u64,
    pub max_ticks: u64,
}

impl EpisodeSetup {
    /// Stable identifier used for file names and resume bookkeeping.
    pub fn key(&self) -> String {
        format!("{}-{}-{}-s{}", self.map, self.density, self.condition, self.seed)
    }

    /// Initial world state and planned route.
    pub fn instantiate(&self, map: &TownMap) -> Result<(WorldState, FullRoute)> {
        let route = plan_global(map, &self.start, &self.goal)?;
        let mut state =
            spawn_scenario_at(map, self.density, self.density_scale, self.seed, ConditionProfile::of(self.condition), self.start)?;
        state.map_name = map.name.clone();
        Ok((state, route))
    }
}

/// Route length band and tick budget used when sampling episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteBand {
    pub min_length: f64,
    pub max_length: f64,
}

impl Default for RouteBand {
    fn default() -> Self {
        RouteBand { min_length: 60.0, max_length: 160.0 }
    }
}

/// Picks a seeded start/goal pair among the map's spawn points whose route
/// length falls inside `band`.
pub fn sample_setup(
    map: &TownMap,
    density: Density,
    density_scale: f64,
    condition: ConditionName,
    seed: u64,
    band: RouteBand,
    max_ticks: u64,
) -> Result<EpisodeSetup> {
    let n = map.spawn_points.len();
    if n < 2 {
        return Err(Error::InvalidMap("at least two spawn points are needed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
    for _ in 0..500 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let (start, goal) = (map.spawn_points[a], map.spawn_points[b]);
        let Ok(route) = plan_global(map, &start, &goal) else { continue };
        if route.total_length >= band.min_length && route.total_length <= band.max_length {
            return Ok(EpisodeSetup {
                map: map.name.clone(),
                start,
                goal,
                density,
                density_scale,
                condition,
                seed,
                max_ticks,
            });
        }
    }
    Err(Error::InputDomain(format!(
        "no route between spawn points of {} falls in [{}, {}] m",
        map.name, band.min_length, band.max_length
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
    /// The episode could not run (e.g. spawn failure or a driver error).
    Error,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

/// Ego pose and speed at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickLog {
    pub tick: u64,
    pub pose: Pose2D,
    pub speed: f64,
}

/// Minimal per-episode trace from which all metrics are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub setup: EpisodeSetup,
    pub outcome: Outcome,
    pub ticks: Vec<TickLog>,
    pub collisions: Vec<CollisionObject>,
    pub route_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeLog {
    pub fn failed(setup: EpisodeSetup, error: String) -> Self {
        EpisodeLog { setup, outcome: Outcome::Error, ticks: Vec::new(), collisions: Vec::new(), route_length: 0.0, error: Some(error) }
    }

    /// Driving time in seconds.
    pub fn duration(&self) -> f64 {
        self.ticks.len() as f64 * crate::world::DT
    }

    /// Distance covered by the ego, meters.
    pub fn distance(&self) -> f64 {
        self.ticks.windows(2).map(|w| w[0].pose.position().dist(w[1].pose.position())).sum()
    }
}
