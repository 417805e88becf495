//! Subcommand implementations. Every function takes a resolved [`RunConfig`]
//! and returns what it wrote, so the binary only formats and maps errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use navfuse::benchmark::suite::recompute_reports;
use navfuse::benchmark::{run_suite, PolicySpec, SuiteReport};
use navfuse::control::{accumulated_variance, integrate_mean, target_point};
use navfuse::expert_data::{
    read_episode, read_header, read_index, record_episode, sample_setup, split_dataset, write_episode, write_index, DatasetIndex,
    EpisodeData, EpisodeSetup, FrameLayout, IndexEntry, DATASET_SCHEMA,
};
use navfuse::io::{short_hash, write_atomic};
use navfuse::policy::checkpoint;
use navfuse::policy::train::evaluate;
use navfuse::policy::{LossReport, Sample, Trainer};
use navfuse::world::templates::{grid_town, GridParams};
use navfuse::world::{TownMap, DT};
use navfuse::{Error, Policy, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::plot;

pub fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Template {
    Grid,
    Rural,
}

pub fn template_params(template: Template, seed: u64) -> GridParams {
    match template {
        Template::Grid => GridParams { seed, ..GridParams::default() },
        Template::Rural => GridParams::rural(seed),
    }
}

/// Builds the map from template parameters and writes it to `path`.
pub fn make_map(params: &GridParams, path: &Path) -> Result<TownMap> {
    params.validate()?;
    let map = grid_town(params);
    map.validate()?;
    map.save(path)?;
    Ok(map)
}

/// Episode seeds used for data collection; disjoint from small suite seeds.
pub fn collect_seed(run_seed: u64, episode: usize) -> u64 {
    1_000_000 * (run_seed + 1) + episode as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub episodes: usize,
    pub successes: usize,
    pub frames: usize,
    pub kilometers: f64,
    pub hours: f64,
}

impl CorpusStats {
    pub fn of(index: &DatasetIndex) -> Self {
        let frames = index.frame_count();
        CorpusStats {
            episodes: index.episodes.len(),
            successes: index.episodes.iter().filter(|e| e.outcome.is_success()).count(),
            frames,
            kilometers: index.distance() / 1000.0,
            hours: frames as f64 * DT / 3600.0,
        }
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} episodes ({} successful), {} frames, {:.2} km, {:.3} h",
            self.episodes, self.successes, self.frames, self.kilometers, self.hours
        )
    }
}

pub fn frame_layout(cfg: &RunConfig) -> FrameLayout {
    FrameLayout { height: cfg.policy.image_height, width: cfg.policy.image_width, horizon: cfg.policy.horizon_steps }
}

fn collect_hash(cfg: &RunConfig, maps: &BTreeMap<String, TownMap>) -> String {
    let map_hashes: Vec<String> = maps.values().map(|m| short_hash(m.to_json().as_bytes())).collect();
    let key = serde_json::json!({
        "seed": cfg.seed,
        "maps": map_hashes,
        "density_scale": cfg.density_scale,
        "record": cfg.record_config(),
        "collect": cfg.collect,
    });
    short_hash(key.to_string().as_bytes())
}

/// Setups for the collection matrix: episode `i` takes the `i`-th
/// (map, density, condition) cell in round-robin order.
pub fn collect_setups(cfg: &RunConfig, maps: &BTreeMap<String, TownMap>) -> Result<Vec<EpisodeSetup>> {
    let c = &cfg.collect;
    let mut cells = Vec::new();
    let names: Vec<&String> = if c.maps.is_empty() { maps.keys().collect() } else { c.maps.iter().collect() };
    for name in names {
        if !maps.contains_key(name) {
            return Err(Error::Config(format!("collect references unknown map {name:?}")));
        }
        for &d in &c.densities {
            for &cond in &c.conditions {
                cells.push((name, d, cond));
            }
        }
    }
    (0..c.episodes)
        .map(|i| {
            let (name, d, cond) = cells[i % cells.len()];
            sample_setup(&maps[name], d, cfg.density_scale, cond, collect_seed(cfg.seed, i), c.route_band, c.max_ticks)
        })
        .collect()
}

/// Records the collection matrix into `<out>/<dataset>`. Episode directories
/// whose header already matches the setup and layout are kept.
pub fn collect(cfg: &RunConfig, jobs: usize) -> Result<(DatasetIndex, CorpusStats)> {
    let maps = cfg.load_maps()?;
    let root = cfg.dataset_dir();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let layout = frame_layout(cfg);
    let rec = cfg.record_config();
    let pool = worker_pool(jobs)?;
    let setups = pool.install(|| collect_setups(cfg, &maps))?;
    let entries: Vec<Result<IndexEntry>> = pool.install(|| {
        setups
            .par_iter()
            .enumerate()
            .map(|(i, setup)| {
                let name = format!("ep-{i:05}");
                let dir = root.join(&name);
                if let Ok(h) = read_header(&dir) {
                    if &h.setup == setup && h.layout == layout && dir.join(navfuse::expert_data::FRAMES_FILE).is_file() {
                        return Ok(IndexEntry { dir: name, key: setup.key(), outcome: h.outcome, frames: h.frame_count, distance: h.distance });
                    }
                }
                let record = record_episode(&maps[&setup.map], setup, &rec)?;
                write_episode(&dir, &record)?;
                Ok(IndexEntry::of(name, &record))
            })
            .collect()
    });
    let index = DatasetIndex {
        schema: DATASET_SCHEMA,
        layout,
        episodes: entries.into_iter().collect::<Result<_>>()?,
        config_hash: collect_hash(cfg, &maps),
    };
    write_index(&root, &index)?;
    let stats = CorpusStats::of(&index);
    Ok((index, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub steps: u64,
    pub best_step: u64,
    pub best_val: f64,
    pub c2: f64,
    pub train_frames: usize,
    pub val_frames: usize,
}

/// Keeps every `stride`-th frame.
fn subsample(ep: EpisodeData, stride: usize) -> EpisodeData {
    if stride <= 1 {
        return ep;
    }
    let s = ep.header.layout.stride();
    let keep: Vec<usize> = (0..ep.len()).step_by(stride).collect();
    let mut data = Vec::with_capacity(keep.len() * s);
    for &i in &keep {
        data.extend_from_slice(&ep.data[i * s..(i + 1) * s]);
    }
    let mut header = ep.header;
    header.frame_count = keep.len();
    EpisodeData { header, data }
}

/// Nearest-rank percentile of `values` (`p` in percent).
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let i = ((p / 100.0) * (values.len() - 1) as f64).round() as usize;
    values[i.min(values.len() - 1)]
}

/// Accumulated planned-motion variance at the control target for each sample.
pub fn sample_variances(policy: &Policy<f32>, samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let pred = policy.predict(&s.input)?;
            let path = integrate_mean(&pred.gmm, DT);
            let (_, k) = target_point(&path, policy.fusion.target_distance);
            Ok(accumulated_variance(&pred.gmm, k))
        })
        .collect()
}

fn loss_row(out: &mut String, step: u64, epoch: usize, split: &str, r: &LossReport) {
    writeln!(out, "{step},{epoch},{split},{:.6},{:.6},{:.6}", r.l1, r.nll, r.total).unwrap();
}

/// Trains on the collected dataset. The best-validation policy is written
/// whenever it improves, so a diverging run leaves the last good checkpoint.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let t = &cfg.train;
    let root = cfg.dataset_dir();
    let index = read_index(&root)?;
    let layout = frame_layout(cfg);
    if index.layout != layout {
        return Err(Error::Config(format!("dataset layout {:?} does not match policy layout {layout:?}", index.layout)));
    }
    let usable: Vec<usize> = (0..index.episodes.len()).filter(|&i| !t.success_only || index.episodes[i].outcome.is_success()).collect();
    let (train_ids, val_ids) = split_dataset(&usable, t.split, cfg.seed)?;
    let load = |ids: &[usize]| -> Result<Vec<EpisodeData>> {
        ids.iter().map(|&i| Ok(subsample(read_episode(&index.episode_dir(&root, i))?, t.frame_stride))).collect()
    };
    let train_eps = load(&train_ids)?;
    let val_eps = load(&val_ids)?;
    let train_refs: Vec<(usize, usize)> = train_eps.iter().enumerate().flat_map(|(e, ep)| (0..ep.len()).map(move |f| (e, f))).collect();
    let mut val_refs: Vec<(usize, usize)> = val_eps.iter().enumerate().flat_map(|(e, ep)| (0..ep.len()).map(move |f| (e, f))).collect();
    if val_refs.len() > t.max_val_frames && t.max_val_frames > 0 {
        let n = val_refs.len();
        val_refs = (0..t.max_val_frames).map(|i| val_refs[i * n / t.max_val_frames]).collect();
    }
    if train_refs.is_empty() || val_refs.is_empty() {
        return Err(Error::Dataset("training or validation split has no frames".into()));
    }
    let val_samples: Vec<Sample> = val_refs.iter().map(|&(e, f)| val_eps[e].frame(f).sample()).collect();

    let mut pcfg = cfg.policy.clone();
    pcfg.init_seed ^= cfg.seed;
    let mut policy = Policy::<f64>::init(pcfg)?.cast::<f32>();
    policy.fusion = cfg.fusion;
    let mut trainer = Trainer::new(policy);

    let dir = cfg.out.join("checkpoints");
    let ckpt = cfg.checkpoint_path();
    let loss_csv = dir.join(format!("{}-loss.csv", t.checkpoint));
    let hash = cfg.hash();
    let meta = |step: u64, val: f64| {
        serde_json::json!({"config_hash": hash, "dataset_hash": index.config_hash, "step": step, "val_loss": val, "seed": cfg.seed})
    };
    let mut csv = format!("# config {hash}\nstep,epoch,split,l1,nll,total\n");

    let mut best = evaluate(&trainer.policy, &val_samples)?;
    let mut best_step = 0;
    let mut best_policy = trainer.policy.clone();
    loss_row(&mut csv, 0, 0, "val", &best);
    checkpoint::save(&best_policy, meta(0, best.total), &ckpt)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_7A1D);
    let mut order: Vec<usize> = (0..train_refs.len()).collect();
    let batch = cfg.policy.batch_size;
    let (mut acc, mut acc_n) = (LossReport::default(), 0u64);
    let mut failure = None;
    'epochs: for epoch in 1..=t.epochs {
        order.shuffle(&mut rng);
        let chunks: Vec<&[usize]> = order.chunks(batch).collect();
        for (ci, chunk) in chunks.iter().enumerate() {
            let samples: Vec<Sample> = chunk.iter().map(|&i| train_eps[train_refs[i].0].frame(train_refs[i].1).sample()).collect();
            let rep = match trainer.train_step(&samples) {
                Ok(r) => r,
                Err(e) => {
                    failure = Some(e);
                    break 'epochs;
                }
            };
            acc.l1 += rep.l1;
            acc.nll += rep.nll;
            acc.total += rep.total;
            acc_n += 1;
            let step = trainer.step();
            if t.log_every > 0 && step % t.log_every == 0 {
                let n = acc_n as f64;
                let mean = LossReport { step, l1: acc.l1 / n, nll: acc.nll / n, total: acc.total / n, samples: 0 };
                loss_row(&mut csv, step, epoch, "train", &mean);
                (acc, acc_n) = (LossReport::default(), 0);
            }
            let last = ci + 1 == chunks.len();
            let capped = t.max_steps > 0 && step >= t.max_steps;
            if last || capped || (t.validate_every > 0 && step % t.validate_every == 0) {
                let val = evaluate(&trainer.policy, &val_samples)?;
                loss_row(&mut csv, step, epoch, "val", &val);
                if val.total.is_finite() && val.total < best.total {
                    best = val;
                    best_step = step;
                    best_policy = trainer.policy.clone();
                    checkpoint::save(&best_policy, meta(step, best.total), &ckpt)?;
                }
            }
            if capped {
                break 'epochs;
            }
        }
    }
    write_atomic(&loss_csv, csv.as_bytes())?;
    if let Some(e) = failure {
        return Err(Error::NonFiniteLoss {
            step: trainer.step() + 1,
            detail: format!("{e}; best checkpoint from step {best_step} kept at {}", ckpt.display()),
        });
    }

    let mut vars = sample_variances(&best_policy, &val_samples)?;
    best_policy.fusion.c2 = percentile(&mut vars, t.c2_percentile);
    let mut m = meta(best_step, best.total);
    m["c2_percentile"] = t.c2_percentile.into();
    checkpoint::save(&best_policy, m, &ckpt)?;
    Ok(TrainSummary {
        checkpoint: ckpt,
        loss_csv,
        steps: trainer.step(),
        best_step,
        best_val: best.total,
        c2: best_policy.fusion.c2,
        train_frames: train_refs.len(),
        val_frames: val_refs.len(),
    })
}

pub fn bench_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("bench")
}

/// Runs the configured suite plus `extra` policies and draws SR plots.
pub fn bench(cfg: &RunConfig, extra: &[PolicySpec], jobs: usize) -> Result<SuiteReport> {
    let maps = cfg.load_maps()?;
    let suite = cfg.suite_config(&maps);
    let mut policies = cfg.suite.policies.clone();
    policies.extend_from_slice(extra);
    if policies.is_empty() {
        return Err(Error::Config("no policies to benchmark".into()));
    }
    let out = bench_dir(cfg);
    let mut report = run_suite(&maps, &suite, &policies, &out, jobs)?;
    report.files.extend(plot::write_plots(&report, &out)?);
    Ok(report)
}

/// Recomputes the suite reports from stored episode logs.
pub fn metrics(cfg: &RunConfig, id: &str) -> Result<SuiteReport> {
    let maps = cfg.load_maps()?;
    let out = bench_dir(cfg);
    let mut report = recompute_reports(&maps, &out, id)?;
    report.files.extend(plot::write_plots(&report, &out)?);
    Ok(report)
}

/// Writes the camera image and the four ralidar channels of one stored frame
/// as PNGs, upscaled by `scale`.
pub fn inspect(cfg: &RunConfig, episode: usize, frame: usize, scale: u32) -> Result<Vec<PathBuf>> {
    let root = cfg.dataset_dir();
    let index = read_index(&root)?;
    if episode >= index.episodes.len() {
        return Err(Error::InputDomain(format!("episode {episode} out of range (dataset has {})", index.episodes.len())));
    }
    let ep = read_episode(&index.episode_dir(&root, episode))?;
    if frame >= ep.len() {
        return Err(Error::InputDomain(format!("frame {frame} out of range (episode has {})", ep.len())));
    }
    let view = ep.frame(frame);
    let (h, w) = (ep.header.layout.height, ep.header.layout.width);
    let out = cfg.out.join("inspect");
    let stem = format!("{}-f{frame:04}", index.episodes[episode].key);
    let mut files = vec![out.join(format!("{stem}-camera.png"))];
    plot::save_rgb(view.camera, h, w, scale, &files[0])?;
    for (c, name) in ["x", "y", "z", "speed"].iter().enumerate() {
        let chan: Vec<f32> = view.ralidar.chunks_exact(4).map(|p| p[c]).collect();
        let path = out.join(format!("{stem}-ralidar-{name}.png"));
        plot::save_gray(&chan, h, w, scale, &path)?;
        files.push(path);
    }
    Ok(files)
}
