//! Run configuration: one TOML document shared by every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use navfuse::benchmark::{FusionMode, PolicySpec, SpeedLimits, SuiteConfig};
use navfuse::control::{FusionConstants, PidGains};
use navfuse::expert_data::{ExpertConfig, Perturbation, RecordConfig, RouteBand};
use navfuse::io::short_hash;
use navfuse::sensors::{CameraIntrinsics, LidarConfig, RadarConfig, SensorConfig};
use navfuse::world::{ConditionName, Density, SimConfig, TownMap};
use navfuse::{Error, PolicyConfig, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidSection {
    #[serde(default = "PidGains::lateral")]
    pub lateral: PidGains,
    #[serde(default = "PidGains::longitudinal")]
    pub longitudinal: PidGains,
}

impl Default for PidSection {
    fn default() -> Self {
        PidSection { lateral: PidGains::lateral(), longitudinal: PidGains::longitudinal() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    pub lidar: LidarConfig,
    pub radar: RadarConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    pub episodes: usize,
    /// Map names; empty means every configured map.
    pub maps: Vec<String>,
    pub densities: Vec<Density>,
    pub conditions: Vec<ConditionName>,
    pub route_band: RouteBand,
    pub max_ticks: u64,
    pub perturbation: Perturbation,
    pub expert: ExpertConfig,
    /// Directory under the output root.
    pub dataset: String,
}

impl Default for CollectSection {
    fn default() -> Self {
        CollectSection {
            episodes: 100,
            maps: Vec::new(),
            densities: vec![Density::Empty, Density::Regular],
            conditions: ConditionName::training_set(),
            route_band: RouteBand::default(),
            max_ticks: 1200,
            perturbation: Perturbation::default(),
            expert: ExpertConfig::default(),
            dataset: "dataset".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    /// Stops after this many optimizer steps when non-zero.
    pub max_steps: u64,
    /// Validation interval in steps; validation also runs after every epoch.
    pub validate_every: u64,
    /// Training-loss rows are written every this many steps.
    pub log_every: u64,
    /// train:validation episode ratio.
    pub split: (usize, usize),
    /// Every n-th frame of each episode is used.
    pub frame_stride: usize,
    /// Upper bound on validation frames (evenly subsampled).
    pub max_val_frames: usize,
    /// Percentile of validation accumulated variance used as c2.
    pub c2_percentile: f64,
    pub success_only: bool,
    /// Checkpoint name under `<out>/checkpoints`.
    pub checkpoint: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 10,
            max_steps: 0,
            validate_every: 500,
            log_every: 50,
            split: (7, 1),
            frame_stride: 1,
            max_val_frames: 2000,
            c2_percentile: 70.0,
            success_only: true,
            checkpoint: "policy".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSection {
    pub id: String,
    /// Map names; empty means every configured map.
    pub maps: Vec<String>,
    pub densities: Vec<Density>,
    pub conditions: Vec<ConditionName>,
    pub seeds: Vec<u64>,
    pub route_band: RouteBand,
    pub max_ticks: u64,
    pub time_limit_factor: f64,
    pub limits: SpeedLimits,
    pub mode: FusionMode,
    pub policies: Vec<PolicySpec>,
}

impl Default for SuiteSection {
    fn default() -> Self {
        let s = SuiteConfig::default();
        SuiteSection {
            id: s.id,
            maps: Vec::new(),
            densities: s.densities,
            conditions: s.conditions,
            seeds: s.seeds,
            route_band: s.route_band,
            max_ticks: s.max_ticks,
            time_limit_factor: s.time_limit_factor,
            limits: s.limits,
            mode: s.mode,
            policies: vec![PolicySpec::Expert { name: "expert".into() }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Map files, relative to the config file.
    pub maps: Vec<PathBuf>,
    #[serde(default = "default_density_scale")]
    pub density_scale: f64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub sensors: SensorSection,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub fusion: FusionConstants,
    #[serde(default)]
    pub pid: PidSection,
    #[serde(default)]
    pub collect: CollectSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub suite: SuiteSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_density_scale() -> f64 {
    0.1
}

impl RunConfig {
    /// Parses TOML, resolves relative paths against `base` and checks that
    /// every referenced map exists.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        self.out = join(&self.out);
        self.maps = self.maps.iter().map(join).collect();
        for p in &mut self.suite.policies {
            if let PolicySpec::Checkpoint { path, .. } = p {
                *path = join(path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.maps.is_empty() {
            return Err(Error::Config("at least one map is required".into()));
        }
        let missing: Vec<PathBuf> = self.maps.iter().filter(|p| !p.is_file()).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::MissingArtifacts(missing));
        }
        if !(self.density_scale > 0.0 && self.density_scale <= 1.0) {
            return Err(Error::Config(format!("density_scale must be in (0, 1], got {}", self.density_scale)));
        }
        self.policy.validate()?;
        if !self.fusion.is_valid() {
            return Err(Error::Config(format!("invalid fusion constants {:?}", self.fusion)));
        }
        if !self.pid.lateral.is_valid() || !self.pid.longitudinal.is_valid() {
            return Err(Error::Config("pid gains must be finite with non-negative clamps".into()));
        }
        let t = &self.train;
        if t.frame_stride == 0 || t.split.0 == 0 || t.split.1 == 0 {
            return Err(Error::Config("train.frame_stride and both train.split parts must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&t.c2_percentile) {
            return Err(Error::Config(format!("train.c2_percentile must be in [0, 100], got {}", t.c2_percentile)));
        }
        if self.collect.densities.is_empty() || self.collect.conditions.is_empty() {
            return Err(Error::Config("collect needs at least one density and one condition".into()));
        }
        Ok(())
    }

    /// Loads every map, keyed by map name.
    pub fn load_maps(&self) -> Result<BTreeMap<String, TownMap>> {
        let mut maps = BTreeMap::new();
        for p in &self.maps {
            let m = TownMap::load(p)?;
            if maps.insert(m.name.clone(), m).is_some() {
                return Err(Error::Config(format!("duplicate map name in {}", p.display())));
            }
        }
        Ok(maps)
    }

    /// Short hash of the configuration. Locations do not count: the output
    /// directory is dropped, maps enter by content and checkpoints by file name.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.maps = self
            .maps
            .iter()
            .map(|p| std::fs::read(p).map_or_else(|_| p.clone(), |bytes| PathBuf::from(short_hash(&bytes))))
            .collect();
        for p in &mut c.suite.policies {
            if let PolicySpec::Checkpoint { path, .. } = p {
                *path = path.file_name().map(PathBuf::from).unwrap_or_default();
            }
        }
        short_hash(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// Sensor setup whose camera matches the policy image size.
    pub fn sensor_config(&self) -> SensorConfig {
        let camera = CameraIntrinsics::with_fov(self.policy.image_width, self.policy.image_height, 90.0);
        SensorConfig { camera, lidar: self.sensors.lidar, radar: self.sensors.radar }
    }

    pub fn record_config(&self) -> RecordConfig {
        RecordConfig {
            sim: self.sim,
            sensors: self.sensor_config(),
            expert: self.collect.expert,
            horizon: self.policy.horizon_steps,
            perturbation: self.collect.perturbation,
            frames: true,
        }
    }

    pub fn suite_config(&self, maps: &BTreeMap<String, TownMap>) -> SuiteConfig {
        let s = &self.suite;
        SuiteConfig {
            id: s.id.clone(),
            maps: if s.maps.is_empty() { maps.keys().cloned().collect() } else { s.maps.clone() },
            densities: s.densities.clone(),
            conditions: s.conditions.clone(),
            seeds: s.seeds.clone(),
            density_scale: self.density_scale,
            route_band: s.route_band,
            max_ticks: s.max_ticks,
            time_limit_factor: s.time_limit_factor,
            limits: s.limits,
            sim: self.sim,
            expert: self.collect.expert,
            sensors: self.sensor_config(),
            lateral: self.pid.lateral,
            longitudinal: self.pid.longitudinal,
            mode: s.mode,
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join(&self.collect.dataset)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("checkpoints").join(format!("{}.ckpt", self.train.checkpoint))
    }
}
