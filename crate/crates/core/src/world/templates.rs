//! Procedural town templates: urban grids and a sparser rural variant.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{Pose2D, Vec2};
use crate::world::map::{Intersection, Lane, MapNode, Sidewalk, StaticObstacle, TownMap};

pub const URBAN_LANE_WIDTH: f64 = 3.5;
pub const RURAL_LANE_WIDTH: f64 = 2.8;
const SIDEWALK_OFFSET: f64 = 1.5;
const SPAWN_SETBACK: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Distance between neighbouring intersection centers.
    pub block: f64,
    pub lane_width: f64,
    /// Fraction of road segments removed (connectivity preserved).
    #[serde(default)]
    pub drop_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            name: "grid4x4".into(),
            rows: 4,
            cols: 4,
            block: 40.0,
            lane_width: URBAN_LANE_WIDTH,
            drop_fraction: 0.0,
            seed: 0,
        }
    }
}

impl GridParams {
    pub fn rural(seed: u64) -> Self {
        GridParams {
            name: "rural".into(),
            rows: 4,
            cols: 5,
            block: 45.0,
            lane_width: RURAL_LANE_WIDTH,
            drop_fraction: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(crate::Error::Config("grid needs at least 2x2 intersections".into()));
        }
        if self.lane_width < crate::world::map::MIN_LANE_WIDTH {
            return Err(crate::Error::Config(format!("lane width {} too narrow", self.lane_width)));
        }
        let s = intersection_half(self.lane_width);
        if self.block < 2.0 * s + 10.0 {
            return Err(crate::Error::Config(format!("block {} too short for lane width", self.block)));
        }
        if !(0.0..0.9).contains(&self.drop_fraction) {
            return Err(crate::Error::Config("drop_fraction must lie in [0, 0.9)".into()));
        }
        Ok(())
    }
}

fn intersection_half(lane_width: f64) -> f64 {
    lane_width + 4.0
}

type Cell = (usize, usize);

/// Undirected road segments of the grid, as (col,row) pairs.
fn segments(p: &GridParams) -> Vec<(Cell, Cell)> {
    let mut segs = Vec::new();
    for r in 0..p.rows {
        for c in 0..p.cols {
            if c + 1 < p.cols {
                segs.push(((c, r), (c + 1, r)));
            }
            if r + 1 < p.rows {
                segs.push(((c, r), (c, r + 1)));
            }
        }
    }
    segs
}

fn connected(p: &GridParams, segs: &[(Cell, Cell)]) -> bool {
    let n = p.rows * p.cols;
    let id = |(c, r): Cell| r * p.cols + c;
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in segs {
        adj[id(a)].push(id(b));
        adj[id(b)].push(id(a));
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.iter().all(|s| *s)
}

fn prune(p: &GridParams, mut segs: Vec<(Cell, Cell)>) -> Vec<(Cell, Cell)> {
    if p.drop_fraction <= 0.0 {
        return segs;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let target = (segs.len() as f64 * p.drop_fraction).round() as usize;
    let mut order: Vec<usize> = (0..segs.len()).collect();
    order.shuffle(&mut rng);
    let mut removed = 0;
    let mut keep = vec![true; segs.len()];
    for i in order {
        if removed >= target {
            break;
        }
        keep[i] = false;
        let trial: Vec<_> = segs.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| *s).collect();
        let degree_ok = {
            let (a, b) = segs[i];
            [a, b].iter().all(|cell| trial.iter().filter(|(x, y)| x == cell || y == cell).count() >= 2)
        };
        if degree_ok && connected(p, &trial) && rng.gen_bool(0.9) {
            removed += 1;
        } else {
            keep[i] = true;
        }
    }
    segs = segs.into_iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s).collect();
    segs
}

fn bezier(p0: Vec2, c: Vec2, p1: Vec2, n: usize) -> Vec<Vec2> {
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            p0 * (u * u) + c * (2.0 * u * t) + p1 * (t * t)
        })
        .collect()
}

/// Builds a grid town: intersections at lattice points, two directed lanes per
/// road segment (right-hand traffic), connectors for every non-U-turn movement.
pub fn grid_town(p: &GridParams) -> TownMap {
    let segs = prune(p, segments(p));
    let lw = p.lane_width;
    let s = intersection_half(lw);
    let center = |(c, r): Cell| Vec2::new(c as f64 * p.block, r as f64 * p.block);

    let mut nodes: Vec<MapNode> = Vec::new();
    let mut lanes: Vec<Lane> = Vec::new();
    let mut sidewalks: Vec<Sidewalk> = Vec::new();
    let mut spawn_points = Vec::new();
    // per intersection: (incoming lane, travel dir, from cell), (outgoing lane, dir, to cell)
    let mut arrivals: Vec<Vec<(usize, Vec2, Cell)>> = vec![Vec::new(); p.rows * p.cols];
    let mut departures: Vec<Vec<(usize, Vec2, Cell)>> = vec![Vec::new(); p.rows * p.cols];
    let cid = |(c, r): Cell| r * p.cols + c;

    let add_node = |nodes: &mut Vec<MapNode>, v: Vec2| {
        let id = nodes.len();
        nodes.push(MapNode { id, x: v.x, y: v.y });
        id
    };

    for &(a, b) in &segs {
        for (from, to) in [(a, b), (b, a)] {
            let ca = center(from);
            let cb = center(to);
            let d = (cb - ca).normalized();
            let right = Vec2::new(d.y, -d.x);
            let start = ca + d * s + right * (lw / 2.0);
            let end = cb - d * s + right * (lw / 2.0);
            let n0 = add_node(&mut nodes, start);
            let n1 = add_node(&mut nodes, end);
            let id = lanes.len();
            lanes.push(Lane { id, from: n0, to: n1, width: lw, centerline: vec![start, end] });
            departures[cid(from)].push((id, d, to));
            arrivals[cid(to)].push((id, d, from));
            let sp = start + d * SPAWN_SETBACK;
            spawn_points.push(Pose2D::new(sp.x, sp.y, d.angle()));
        }
        let ca = center(a);
        let cb = center(b);
        let d = (cb - ca).normalized();
        let n = d.perp();
        for side in [1.0, -1.0] {
            let off = n * (side * (lw + SIDEWALK_OFFSET));
            let id = sidewalks.len();
            sidewalks.push(Sidewalk { id, points: vec![ca + d * s + off, cb - d * s + off] });
        }
    }

    let mut intersections = Vec::new();
    for r in 0..p.rows {
        for c in 0..p.cols {
            let k = cid((c, r));
            if arrivals[k].is_empty() {
                continue;
            }
            let cc = center((c, r));
            let id = intersections.len();
            intersections.push(Intersection {
                id,
                polygon: vec![
                    cc + Vec2::new(-s, -s),
                    cc + Vec2::new(s, -s),
                    cc + Vec2::new(s, s),
                    cc + Vec2::new(-s, s),
                ],
            });
            let degree = departures[k].len();
            for &(lin, din, came_from) in &arrivals[k] {
                for &(lout, dout, goes_to) in &departures[k] {
                    if goes_to == came_from && degree > 1 {
                        continue;
                    }
                    let p0 = *lanes[lin].centerline.last().unwrap();
                    let p1 = lanes[lout].centerline[0];
                    let denom = din.cross(dout);
                    let centerline = if denom.abs() < 1e-9 {
                        if din.dot(dout) > 0.0 {
                            vec![p0, p1]
                        } else {
                            // U-turn at a dead end: loop around the intersection center
                            bezier(p0, cc + din * s, p1, 12)
                        }
                    } else {
                        let t = (p1 - p0).cross(dout) / denom;
                        bezier(p0, p0 + din * t, p1, 10)
                    };
                    let id = lanes.len();
                    lanes.push(Lane { id, from: lanes[lin].to, to: lanes[lout].from, width: lw, centerline });
                }
            }
        }
    }

    let mut obstacles = Vec::new();
    let clearance = lw + SIDEWALK_OFFSET + 2.0;
    let half = (p.block / 2.0 - clearance).min(if p.drop_fraction > 0.0 { 8.0 } else { f64::INFINITY });
    if half > 1.0 {
        for r in 0..p.rows - 1 {
            for c in 0..p.cols - 1 {
                let cc = center((c, r)) + Vec2::new(p.block / 2.0, p.block / 2.0);
                let id = obstacles.len();
                obstacles.push(StaticObstacle {
                    id,
                    center: cc,
                    half_extents: Vec2::new(half, half),
                    yaw: 0.0,
                    height: 4.0,
                });
            }
        }
    }

    TownMap::new(p.name.clone(), nodes, lanes, intersections, sidewalks, spawn_points, obstacles)
}
