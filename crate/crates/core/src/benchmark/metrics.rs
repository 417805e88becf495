//! Success rate, wrong-lane and overspeed metrics computed from episode logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert_data::{EpisodeLog, Outcome, TickLog};
use crate::world::{ConditionName, Density, Region, TownMap};

/// Speed limits by region, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedLimits {
    pub road: f64,
    pub intersection: f64,
}

impl Default for SpeedLimits {
    fn default() -> Self {
        SpeedLimits { road: 50.0 / 3.6, intersection: 20.0 / 3.6 }
    }
}

/// Wrong lane: off every lane surface, or on a lane with more than half a lane
/// width of offset or more than 90 degrees of heading error. Intersections
/// never count.
pub fn is_wrong_lane(region: &Region) -> bool {
    match region {
        Region::Intersection { .. } => false,
        Region::Road(m) => m.offset.abs() > m.half_width || m.heading_error.abs() > std::f64::consts::FRAC_PI_2,
        Region::OffRoad { .. } => true,
    }
}

pub fn is_overspeed(region: &Region, speed: f64, limits: &SpeedLimits) -> bool {
    let limit = if region.is_intersection() { limits.intersection } else { limits.road };
    speed > limit
}

/// (wrong lane, overspeed) for one logged tick.
pub fn tick_flags(map: &TownMap, t: &TickLog, limits: &SpeedLimits) -> (bool, bool) {
    let region = map.region_of(&t.pose);
    (is_wrong_lane(&region), is_overspeed(&region, t.speed, limits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub policy: String,
    pub key: String,
    pub map: String,
    pub density: Density,
    pub condition: ConditionName,
    pub seed: u64,
    pub outcome: Outcome,
    pub ticks: usize,
    pub wrong_lane_ticks: usize,
    pub overspeed_ticks: usize,
    pub wrong_lane_fraction: f64,
    pub overspeed_fraction: f64,
}

/// Aggregates for one (policy, map, density, condition) cell, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub policy: String,
    pub map: String,
    pub density: Density,
    pub condition: ConditionName,
    pub episodes: usize,
    pub successes: usize,
    pub sr: f64,
    pub wl: f64,
    pub ovsp: f64,
}

impl TaskMetrics {
    pub fn task(&self) -> String {
        format!("{}/{}/{}", self.map, self.density, self.condition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub tasks: Vec<TaskMetrics>,
}

pub fn episode_metrics(map: &TownMap, policy: &str, log: &EpisodeLog, limits: &SpeedLimits) -> EpisodeMetrics {
    let (mut wl, mut ov) = (0, 0);
    for t in &log.ticks {
        let (w, o) = tick_flags(map, t, limits);
        wl += w as usize;
        ov += o as usize;
    }
    let n = log.ticks.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    EpisodeMetrics {
        policy: policy.to_string(),
        key: log.setup.key(),
        map: log.setup.map.clone(),
        density: log.setup.density,
        condition: log.setup.condition,
        seed: log.setup.seed,
        outcome: log.outcome,
        ticks: n,
        wrong_lane_ticks: wl,
        overspeed_ticks: ov,
        wrong_lane_fraction: frac(wl),
        overspeed_fraction: frac(ov),
    }
}

/// Per-episode and per-task metrics. `logs` pairs a policy name with each log;
/// maps are looked up by the log's map name. Tasks are pooled over ticks.
pub fn compute_metrics(maps: &BTreeMap<String, TownMap>, logs: &[(String, EpisodeLog)], limits: &SpeedLimits) -> Result<MetricsReport> {
    let mut episodes = Vec::with_capacity(logs.len());
    for (policy, log) in logs {
        let map = maps.get(&log.setup.map).ok_or_else(|| Error::Config(format!("no map named {:?} for episode {}", log.setup.map, log.setup.key())))?;
        episodes.push(episode_metrics(map, policy, log, limits));
    }
    let mut cells: BTreeMap<(String, String, Density, ConditionName), Vec<&EpisodeMetrics>> = BTreeMap::new();
    for e in &episodes {
        cells.entry((e.policy.clone(), e.map.clone(), e.density, e.condition)).or_default().push(e);
    }
    let tasks = cells
        .into_iter()
        .map(|((policy, map, density, condition), es)| {
            let successes = es.iter().filter(|e| e.outcome.is_success()).count();
            let ticks: usize = es.iter().map(|e| e.ticks).sum();
            let pct = |k: usize| if ticks == 0 { 0.0 } else { 100.0 * k as f64 / ticks as f64 };
            TaskMetrics {
                policy,
                map,
                density,
                condition,
                episodes: es.len(),
                successes,
                sr: 100.0 * successes as f64 / es.len() as f64,
                wl: pct(es.iter().map(|e| e.wrong_lane_ticks).sum()),
                ovsp: pct(es.iter().map(|e| e.overspeed_ticks).sum()),
            }
        })
        .collect();
    Ok(MetricsReport { episodes, tasks })
}
