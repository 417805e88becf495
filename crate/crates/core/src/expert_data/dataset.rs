//! Dataset directories: `index.json` plus one directory per episode holding
//! `header.json` and `frames.bin` (fixed-stride little-endian f32 records).

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{EpisodeHeader, EpisodeRecord, Frame, DATASET_SCHEMA};
use super::Outcome;
use crate::action::ActionTriple;
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_string, write_atomic};
use crate::planner::ROUTE_FEATURES;
use crate::policy::{PolicyInput, Sample};

pub const HEADER_FILE: &str = "header.json";
pub const FRAMES_FILE: &str = "frames.bin";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLayout {
    pub height: usize,
    pub width: usize,
    pub horizon: usize,
}

impl FrameLayout {
    pub fn fields(&self) -> Vec<(String, usize)> {
        let hw = self.height * self.width;
        [("tick", 1), ("ego", 6), ("camera", hw * 3), ("ralidar", hw * 4), ("route", ROUTE_FEATURES), ("expert", 3), ("future", self.horizon * 2)]
            .into_iter()
            .map(|(n, l)| (n.to_string(), l))
            .collect()
    }

    /// Values per frame record.
    pub fn stride(&self) -> usize {
        self.fields().iter().map(|(_, l)| l).sum()
    }

    fn ranges(&self) -> [std::ops::Range<usize>; 7] {
        let mut start = 0;
        let f = self.fields();
        std::array::from_fn(|i| {
            let r = start..start + f[i].1;
            start = r.end;
            r
        })
    }
}

/// Borrowed view of one stored frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    pub tick: u32,
    pub ego: &'a [f32],
    pub camera: &'a [f32],
    pub ralidar: &'a [f32],
    pub route: &'a [f32],
    pub expert: &'a [f32],
    pub future: &'a [f32],
}

impl<'a> FrameView<'a> {
    pub fn expert_action(&self) -> ActionTriple {
        ActionTriple::new(self.expert[0] as f64, self.expert[1] as f64, self.expert[2] as f64)
    }

    pub fn input(&self) -> PolicyInput<'a> {
        PolicyInput { camera: self.camera, ralidar: self.ralidar, velocity: [self.ego[3], self.ego[4]], route: self.route }
    }

    pub fn sample(&self) -> Sample<'a> {
        Sample { input: self.input(), expert: self.expert_action(), motion: self.future }
    }

    pub fn to_frame(&self) -> Frame {
        Frame {
            tick: self.tick,
            ego: self.ego.try_into().expect("ego field has 6 values"),
            camera: self.camera.to_vec(),
            ralidar: self.ralidar.to_vec(),
            route: self.route.to_vec(),
            expert: self.expert.try_into().expect("expert field has 3 values"),
            future: self.future.to_vec(),
        }
    }
}

/// An episode loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData {
    pub header: EpisodeHeader,
    pub data: Vec<f32>,
}

impl EpisodeData {
    pub fn len(&self) -> usize {
        self.header.frame_count
    }

    pub fn is_empty(&self) -> bool {
        self.header.frame_count == 0
    }

    pub fn frame(&self, i: usize) -> FrameView<'_> {
        let layout = self.header.layout;
        let stride = layout.stride();
        let rec = &self.data[i * stride..(i + 1) * stride];
        let [tick, ego, camera, ralidar, route, expert, future] = layout.ranges();
        FrameView {
            tick: rec[tick.start] as u32,
            ego: &rec[ego],
            camera: &rec[camera],
            ralidar: &rec[ralidar],
            route: &rec[route],
            expert: &rec[expert],
            future: &rec[future],
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = FrameView<'_>> {
        (0..self.len()).map(|i| self.frame(i))
    }
}

fn encode_frames(layout: &FrameLayout, frames: &[Frame]) -> Result<Vec<u8>> {
    let stride = layout.stride();
    let mut out = Vec::with_capacity(frames.len() * stride * 4);
    for f in frames {
        let parts: [&[f32]; 7] = [&[f.tick as f32], &f.ego, &f.camera, &f.ralidar, &f.route, &f.expert, &f.future];
        for ((name, len), part) in layout.fields().iter().zip(parts) {
            if part.len() != *len {
                return Err(Error::Dataset(format!("frame {} field {name} has {} values, expected {len}", f.tick, part.len())));
            }
            for v in part {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Writes `header.json` and `frames.bin` into `dir`, each atomically.
pub fn write_episode(dir: &Path, record: &EpisodeRecord) -> Result<()> {
    let bytes = encode_frames(&record.header.layout, &record.frames)?;
    write_atomic(&dir.join(FRAMES_FILE), &bytes)?;
    let header = serde_json::to_vec_pretty(&record.header)?;
    write_atomic(&dir.join(HEADER_FILE), &header)
}

pub fn read_header(dir: &Path) -> Result<EpisodeHeader> {
    let text = read_string(&dir.join(HEADER_FILE))?;
    let header: EpisodeHeader =
        serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", dir.join(HEADER_FILE).display())))?;
    if header.schema != DATASET_SCHEMA {
        return Err(Error::Dataset(format!("{}: unsupported schema {}", dir.display(), header.schema)));
    }
    Ok(header)
}

pub fn read_episode(dir: &Path) -> Result<EpisodeData> {
    let header = read_header(dir)?;
    let bytes = read_bytes(&dir.join(FRAMES_FILE))?;
    let expected = header.frame_count * header.layout.stride() * 4;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!("{}: frames file has {} bytes, expected {expected}", dir.display(), bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(EpisodeData { header, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    /// Directory relative to the dataset root.
    pub dir: String,
    pub key: String,
    pub outcome: Outcome,
    pub frames: usize,
    pub distance: f64,
}

impl IndexEntry {
    pub fn of(dir: String, record: &EpisodeRecord) -> Self {
        IndexEntry {
            dir,
            key: record.header.setup.key(),
            outcome: record.header.outcome,
            frames: record.header.frame_count,
            distance: record.header.distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub schema: u32,
    pub layout: FrameLayout,
    pub episodes: Vec<IndexEntry>,
    /// Hash of the configuration that produced the dataset.
    #[serde(default)]
    pub config_hash: String,
}

impl DatasetIndex {
    pub fn frame_count(&self) -> usize {
        self.episodes.iter().map(|e| e.frames).sum()
    }

    pub fn distance(&self) -> f64 {
        self.episodes.iter().map(|e| e.distance).sum()
    }

    pub fn episode_dir(&self, root: &Path, i: usize) -> PathBuf {
        root.join(&self.episodes[i].dir)
    }
}

pub fn write_index(root: &Path, index: &DatasetIndex) -> Result<()> {
    write_atomic(&root.join(INDEX_FILE), &serde_json::to_vec_pretty(index)?)
}

pub fn read_index(root: &Path) -> Result<DatasetIndex> {
    let path = root.join(INDEX_FILE);
    let index: DatasetIndex =
        serde_json::from_str(&read_string(&path)?).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    if index.schema != DATASET_SCHEMA {
        return Err(Error::Dataset(format!("{}: unsupported schema {}", path.display(), index.schema)));
    }
    Ok(index)
}

/// Splits whole episodes into (train, validation) at `train:val`, after a
/// seeded shuffle. Each side keeps the input order.
pub fn split_dataset<T: Clone>(episodes: &[T], ratio: (usize, usize), seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (t, v) = ratio;
    if t == 0 || v == 0 {
        return Err(Error::InputDomain(format!("split ratio {t}:{v} must have both parts positive")));
    }
    let n = episodes.len();
    if n < t + v {
        return Err(Error::InputDomain(format!("{n} episodes cannot be split {t}:{v}; at least {} are needed", t + v)));
    }
    let n_val = ((n * v) as f64 / (t + v) as f64).round().max(1.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let pick = |want: bool| episodes.iter().zip(&is_val).filter(|(_, v)| **v == want).map(|(e, _)| e.clone()).collect();
    Ok((pick(false), pick(true)))
}
