//! Scenario-matrix execution with per-episode artifacts, resume and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsReport, SpeedLimits, TaskMetrics};
use super::{run_episode, time_limit, Driver, ExpertDriver, FusionMode, PolicyDriver};
use crate::control::PidGains;
use crate::error::{Error, Result};
use crate::expert_data::{sample_setup, EpisodeLog, EpisodeSetup, ExpertConfig, RouteBand};
use crate::io::{read_string, sha256_hex, short_hash, write_atomic};
use crate::policy::{checkpoint, Policy, PolicyConfig};
use crate::sensors::SensorConfig;
use crate::world::{ConditionName, Density, SimConfig, TownMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub id: String,
    pub maps: Vec<String>,
    pub densities: Vec<Density>,
    pub conditions: Vec<ConditionName>,
    pub seeds: Vec<u64>,
    pub density_scale: f64,
    pub route_band: RouteBand,
    /// Tick budget when the expert cannot finish a setup.
    pub max_ticks: u64,
    /// Time limit as a multiple of the expert's completion time.
    pub time_limit_factor: f64,
    pub limits: SpeedLimits,
    pub sim: SimConfig,
    pub expert: ExpertConfig,
    pub sensors: SensorConfig,
    pub lateral: PidGains,
    pub longitudinal: PidGains,
    pub mode: FusionMode,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            id: "suite".into(),
            maps: Vec::new(),
            densities: Density::ALL.to_vec(),
            conditions: vec![
                ConditionName::CLEAR_DAY,
                "RainyNight".parse().expect("known condition"),
                ConditionName::STORM_DARK,
                "ClearDark".parse().expect("known condition"),
            ],
            seeds: (0..5).collect(),
            density_scale: 0.1,
            route_band: RouteBand::default(),
            max_ticks: 1200,
            time_limit_factor: 3.0,
            limits: SpeedLimits::default(),
            sim: SimConfig::default(),
            expert: ExpertConfig::default(),
            sensors: SensorConfig::default(),
            lateral: PidGains::lateral(),
            longitudinal: PidGains::longitudinal(),
            mode: FusionMode::Fused,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Expert { name: String },
    Checkpoint { name: String, path: PathBuf },
    /// Freshly initialized network, the negative control.
    Untrained { name: String, config: PolicyConfig },
}

impl PolicySpec {
    pub fn name(&self) -> &str {
        match self {
            PolicySpec::Expert { name } | PolicySpec::Checkpoint { name, .. } | PolicySpec::Untrained { name, .. } => name,
        }
    }
}

enum Loaded {
    Expert,
    Network(Policy<f32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub id: String,
    /// Hash of the suite configuration, policy names and checkpoint contents.
    pub config_hash: String,
    /// Content hash per policy (empty for the expert).
    pub checkpoints: BTreeMap<String, String>,
    pub metrics: MetricsReport,
    #[serde(skip)]
    pub logs: Vec<(String, EpisodeLog)>,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn task(&self, policy: &str, map: &str, density: Density, condition: ConditionName) -> Option<&TaskMetrics> {
        self.metrics
            .tasks
            .iter()
            .find(|t| t.policy == policy && t.map == map && t.density == density && t.condition == condition)
    }
}

fn load_policies(policies: &[PolicySpec]) -> Result<(Vec<Loaded>, BTreeMap<String, String>)> {
    let missing: Vec<PathBuf> = policies
        .iter()
        .filter_map(|p| match p {
            PolicySpec::Checkpoint { path, .. } if !path.is_file() => Some(path.clone()),
            _ => None,
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let mut names = std::collections::BTreeSet::new();
    let mut loaded = Vec::new();
    let mut hashes = BTreeMap::new();
    for p in policies {
        if !names.insert(p.name().to_string()) {
            return Err(Error::Config(format!("duplicate policy name {:?}", p.name())));
        }
        let (l, h) = match p {
            PolicySpec::Expert { .. } => (Loaded::Expert, String::new()),
            PolicySpec::Checkpoint { path, .. } => {
                let (policy, _) = checkpoint::load::<f32>(path)?;
                (Loaded::Network(policy), checkpoint::file_hash(path)?)
            }
            PolicySpec::Untrained { config, .. } => {
                let policy: Policy<f32> = Policy::<f64>::init(config.clone())?.cast();
                let h = short_hash(&checkpoint::to_bytes(&policy, serde_json::Value::Null));
                (Loaded::Network(policy), h)
            }
        };
        loaded.push(l);
        hashes.insert(p.name().to_string(), h);
    }
    Ok((loaded, hashes))
}

/// Setups for every (map, density, condition, seed) cell with time limits.
pub fn suite_setups(maps: &BTreeMap<String, TownMap>, cfg: &SuiteConfig) -> Result<Vec<EpisodeSetup>> {
    let mut setups = Vec::new();
    for name in &cfg.maps {
        let map = maps.get(name).ok_or_else(|| Error::Config(format!("suite references unknown map {name:?}")))?;
        for &density in &cfg.densities {
            for &condition in &cfg.conditions {
                for &seed in &cfg.seeds {
                    setups.push(sample_setup(map, density, cfg.density_scale, condition, seed, cfg.route_band, cfg.max_ticks)?);
                }
            }
        }
    }
    let limits: Vec<Result<u64>> = setups
        .par_iter()
        .map(|s| time_limit(&maps[&s.map], s, &cfg.sim, &cfg.expert, cfg.time_limit_factor))
        .collect();
    for (s, l) in setups.iter_mut().zip(limits) {
        s.max_ticks = l?;
    }
    Ok(setups)
}

/// `out/episodes/<config hash>/<policy>/<episode key>.json`
pub fn artifact_path(out: &Path, config_hash: &str, policy: &str, key: &str) -> PathBuf {
    out.join("episodes").join(config_hash).join(policy).join(format!("{key}.json"))
}

fn run_one(maps: &BTreeMap<String, TownMap>, cfg: &SuiteConfig, policy: &Loaded, setup: &EpisodeSetup) -> EpisodeLog {
    let map = &maps[&setup.map];
    let mut driver: Box<dyn Driver> = match policy {
        Loaded::Expert => Box::new(ExpertDriver::new(cfg.expert, cfg.sim)),
        Loaded::Network(p) => match PolicyDriver::new(p.clone(), cfg.mode, (cfg.lateral, cfg.longitudinal), cfg.sensors) {
            Ok(d) => Box::new(d),
            Err(e) => return EpisodeLog::failed(setup.clone(), e.to_string()),
        },
    };
    run_episode(map, setup, &cfg.sim, driver.as_mut()).unwrap_or_else(|e| EpisodeLog::failed(setup.clone(), e.to_string()))
}

fn csv_table(report: &MetricsReport, header: &str, policies: &[String], value: impl Fn(&TaskMetrics) -> f64) -> String {
    let mut cells: Vec<String> = report.tasks.iter().map(|t| t.task()).collect();
    cells.sort();
    cells.dedup();
    let mut out = String::new();
    writeln!(out, "{header}").unwrap();
    writeln!(out, "policy,{}", cells.join(",")).unwrap();
    for p in policies {
        let row: Vec<String> = cells
            .iter()
            .map(|c| {
                report
                    .tasks
                    .iter()
                    .find(|t| &t.policy == p && &t.task() == c)
                    .map_or(String::new(), |t| format!("{:.2}", value(t)))
            })
            .collect();
        writeln!(out, "{p},{}", row.join(",")).unwrap();
    }
    out
}

/// Runs every policy on every setup (episodes in parallel on `jobs` threads),
/// reusing episode artifacts already present under `out`, then writes one CSV
/// per metric and a JSON report. Failed episodes are recorded, not fatal.
pub fn run_suite(maps: &BTreeMap<String, TownMap>, cfg: &SuiteConfig, policies: &[PolicySpec], out: &Path, jobs: usize) -> Result<SuiteReport> {
    let (loaded, checkpoints) = load_policies(policies)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let setups = pool.install(|| suite_setups(maps, cfg))?;

    let mut hasher_input = serde_json::to_string(cfg)?;
    for p in policies {
        hasher_input.push_str(p.name());
        hasher_input.push_str(&checkpoints[p.name()]);
    }
    let config_hash = sha256_hex(hasher_input.as_bytes())[..12].to_string();

    let jobs_list: Vec<(usize, &EpisodeSetup)> = (0..policies.len()).flat_map(|p| setups.iter().map(move |s| (p, s))).collect();
    let logs: Vec<Result<(String, EpisodeLog)>> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|&(pi, setup)| {
                let name = policies[pi].name();
                let path = artifact_path(out, &config_hash, name, &setup.key());
                if let Ok(text) = read_string(&path) {
                    if let Ok(log) = serde_json::from_str::<EpisodeLog>(&text) {
                        if &log.setup == setup {
                            return Ok((name.to_string(), log));
                        }
                    }
                }
                let log = run_one(maps, cfg, &loaded[pi], setup);
                write_atomic(&path, &serde_json::to_vec(&log)?)?;
                Ok((name.to_string(), log))
            })
            .collect()
    });
    let logs: Vec<(String, EpisodeLog)> = logs.into_iter().collect::<Result<_>>()?;
    let manifest = SuiteManifest {
        id: cfg.id.clone(),
        config_hash,
        policies: policies.iter().map(|p| p.name().to_string()).collect(),
        checkpoints,
        limits: cfg.limits,
        episodes: jobs_list.iter().map(|(pi, s)| (policies[*pi].name().to_string(), s.key())).collect(),
    };
    write_atomic(&out.join(format!("{}-manifest.json", cfg.id)), &serde_json::to_vec_pretty(&manifest)?)?;
    write_reports(maps, &manifest, logs, out)
}

/// What is needed to rebuild a suite's reports from its episode artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    pub id: String,
    pub config_hash: String,
    pub policies: Vec<String>,
    pub checkpoints: BTreeMap<String, String>,
    pub limits: SpeedLimits,
    /// (policy, episode key) in execution order.
    pub episodes: Vec<(String, String)>,
}

/// Computes metrics and writes the per-metric CSVs and the JSON report.
pub fn write_reports(maps: &BTreeMap<String, TownMap>, manifest: &SuiteManifest, logs: Vec<(String, EpisodeLog)>, out: &Path) -> Result<SuiteReport> {
    let metrics = compute_metrics(maps, &logs, &manifest.limits)?;
    let header = format!("# suite {} config {}", manifest.id, manifest.config_hash);
    let stem = format!("{}-{}", manifest.id, manifest.config_hash);
    let mut files = Vec::new();
    for (metric, f) in [
        ("sr", (|t: &TaskMetrics| t.sr) as fn(&TaskMetrics) -> f64),
        ("wl", |t: &TaskMetrics| t.wl),
        ("ovsp", |t: &TaskMetrics| t.ovsp),
    ] {
        let path = out.join(format!("{stem}-{metric}.csv"));
        write_atomic(&path, csv_table(&metrics, &header, &manifest.policies, f).as_bytes())?;
        files.push(path);
    }
    let report = SuiteReport {
        id: manifest.id.clone(),
        config_hash: manifest.config_hash.clone(),
        checkpoints: manifest.checkpoints.clone(),
        metrics,
        logs,
        files: Vec::new(),
    };
    let path = out.join(format!("{stem}-report.json"));
    write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
    files.push(path);
    Ok(SuiteReport { files, ..report })
}

/// Rebuilds reports from `<id>-manifest.json` and the stored episode logs.
pub fn recompute_reports(maps: &BTreeMap<String, TownMap>, out: &Path, id: &str) -> Result<SuiteReport> {
    let path = out.join(format!("{id}-manifest.json"));
    let manifest: SuiteManifest = serde_json::from_str(&read_string(&path)?)?;
    let mut logs = Vec::with_capacity(manifest.episodes.len());
    let mut missing = Vec::new();
    for (policy, key) in &manifest.episodes {
        let p = artifact_path(out, &manifest.config_hash, policy, key);
        match read_string(&p) {
            Ok(text) => logs.push((policy.clone(), serde_json::from_str::<EpisodeLog>(&text)?)),
            Err(_) => missing.push(p),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    write_reports(maps, &manifest, logs, out)
}
