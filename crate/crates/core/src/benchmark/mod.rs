//! Closed-loop evaluation: drivers, single episodes, metrics and suites.

pub mod metrics;
pub mod suite;

use serde::{Deserialize, Serialize};

pub use metrics::{compute_metrics, episode_metrics, is_overspeed, is_wrong_lane, tick_flags, EpisodeMetrics, MetricsReport, SpeedLimits, TaskMetrics};
pub use suite::{run_suite, PolicySpec, SuiteConfig, SuiteReport};

use crate::action::ActionTriple;
use crate::control::{control_step, PidController, PidGains};
use crate::error::{Error, Result};
use crate::expert_data::{expert_action, EpisodeLog, EpisodeSetup, ExpertConfig, ExpertPlan, Outcome, TickLog, GOAL_RADIUS};
use crate::planner::{flatten_route, FullRoute, RouteTracker};
use crate::policy::{Policy, PolicyInput};
use crate::sensors::{CameraIntrinsics, SensorConfig, SensorRig};
use crate::world::{SimConfig, Simulator, TownMap, WorldState};

/// Something that maps world states to actions over one episode.
pub trait Driver {
    fn reset(&mut self, map: &TownMap, state: &WorldState, route: &FullRoute) -> Result<()>;
    fn act(&mut self, map: &TownMap, state: &WorldState) -> Result<ActionTriple>;
}

/// The scripted expert with privileged state access.
#[derive(Debug, Clone)]
pub struct ExpertDriver {
    pub config: ExpertConfig,
    pub sim: SimConfig,
    plan: Option<ExpertPlan>,
}

impl ExpertDriver {
    pub fn new(config: ExpertConfig, sim: SimConfig) -> Self {
        ExpertDriver { config, sim, plan: None }
    }
}

impl Driver for ExpertDriver {
    fn reset(&mut self, map: &TownMap, state: &WorldState, route: &FullRoute) -> Result<()> {
        self.plan = Some(ExpertPlan::new(map, route.clone(), state));
        Ok(())
    }

    fn act(&mut self, map: &TownMap, state: &WorldState) -> Result<ActionTriple> {
        let plan = self.plan.as_mut().ok_or_else(|| Error::InputDomain("driver used before reset".into()))?;
        Ok(expert_action(state, plan, map, &self.config, &self.sim.vehicle))
    }
}

/// Which action the learned driver applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Variance-gated blend of the network action and the PID action.
    #[default]
    Fused,
    NetworkOnly,
    PidOnly,
}

/// Sensors, policy network and control fusion.
#[derive(Debug, Clone)]
pub struct PolicyDriver {
    pub policy: Policy<f32>,
    pub mode: FusionMode,
    pub pid_gains: (PidGains, PidGains),
    pub sensors: SensorConfig,
    pub dt: f64,
    rig: Option<SensorRig>,
    pid: PidController,
    tracker: Option<RouteTracker>,
    /// Sum of the reliability gate over the episode and the number of ticks.
    pub lambda_sum: f64,
    pub steps: u64,
}

impl PolicyDriver {
    /// Camera intrinsics follow the policy's image size.
    pub fn new(policy: Policy<f32>, mode: FusionMode, pid_gains: (PidGains, PidGains), mut sensors: SensorConfig) -> Result<Self> {
        let cfg = &policy.config;
        if sensors.camera.height != cfg.image_height || sensors.camera.width != cfg.image_width {
            let cam = CameraIntrinsics::with_fov(cfg.image_width, cfg.image_height, 90.0);
            sensors.camera = CameraIntrinsics { mount: sensors.camera.mount, mount_height: sensors.camera.mount_height, ..cam };
        }
        if !policy.fusion.is_valid() {
            return Err(Error::Checkpoint(format!("invalid fusion constants {:?}", policy.fusion)));
        }
        Ok(PolicyDriver {
            policy,
            mode,
            pid_gains,
            sensors,
            dt: crate::world::DT,
            rig: None,
            pid: PidController::new(pid_gains.0, pid_gains.1),
            tracker: None,
            lambda_sum: 0.0,
            steps: 0,
        })
    }
}

impl Driver for PolicyDriver {
    fn reset(&mut self, map: &TownMap, state: &WorldState, route: &FullRoute) -> Result<()> {
        self.rig = Some(SensorRig::new(map, self.sensors));
        self.tracker = Some(RouteTracker::new(route.clone(), &state.ego.pose));
        self.pid = PidController::new(self.pid_gains.0, self.pid_gains.1);
        self.lambda_sum = 0.0;
        self.steps = 0;
        Ok(())
    }

    fn act(&mut self, map: &TownMap, state: &WorldState) -> Result<ActionTriple> {
        let (Some(rig), Some(tracker)) = (&self.rig, &mut self.tracker) else {
            return Err(Error::InputDomain("driver used before reset".into()));
        };
        let obs = rig.observe(map, state);
        tracker.update(&state.ego.pose);
        let route: Vec<f32> = flatten_route(&tracker.local_route(), &state.ego.pose).into_iter().map(|v| v as f32).collect();
        let input = PolicyInput {
            camera: &obs.camera.data,
            ralidar: &obs.ralidar.data,
            velocity: [state.ego.vx as f32, state.ego.vy as f32],
            route: &route,
        };
        let pred = self.policy.predict(&input)?;
        let out = control_step(&pred.action, &pred.gmm, &state.ego, &mut self.pid, &self.policy.fusion, self.dt);
        self.lambda_sum += out.lambda;
        self.steps += 1;
        Ok(match self.mode {
            FusionMode::Fused => out.action,
            FusionMode::NetworkOnly => out.a1,
            FusionMode::PidOnly => out.a2,
        })
    }
}

/// Runs `driver` from the setup's initial state until the goal (within 3 m), a
/// collision, or `setup.max_ticks`.
pub fn run_episode(map: &TownMap, setup: &EpisodeSetup, sim: &SimConfig, driver: &mut dyn Driver) -> Result<EpisodeLog> {
    let (mut state, route) = setup.instantiate(map)?;
    let simulator = Simulator::new(map, *sim);
    driver.reset(map, &state, &route)?;
    let goal = route.goal();
    let mut ticks = Vec::new();
    let (outcome, collisions) = loop {
        ticks.push(TickLog { tick: state.tick, pose: state.ego.pose, speed: state.ego.speed() });
        let hits = simulator.check_collision(&state);
        if !hits.is_empty() {
            break (Outcome::Collision, hits);
        }
        if state.ego.pose.position().dist(goal) <= GOAL_RADIUS {
            break (Outcome::Success, Vec::new());
        }
        if state.tick >= setup.max_ticks {
            break (Outcome::Timeout, Vec::new());
        }
        let action = driver.act(map, &state)?;
        state = simulator.step(&state, &action)?;
    };
    Ok(EpisodeLog { setup: setup.clone(), outcome, ticks, collisions, route_length: route.total_length, error: None })
}

/// Time limit for a setup: `factor` times the expert's completion time, or
/// the setup's own limit when the expert does not finish.
pub fn time_limit(map: &TownMap, setup: &EpisodeSetup, sim: &SimConfig, expert: &ExpertConfig, factor: f64) -> Result<u64> {
    let mut d = ExpertDriver::new(*expert, *sim);
    let log = run_episode(map, setup, sim, &mut d)?;
    Ok(if log.outcome.is_success() { (factor * log.ticks.len() as f64).ceil() as u64 } else { setup.max_ticks })
}
