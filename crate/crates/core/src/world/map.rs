//! Town map: lane graph, intersections, sidewalks and static obstacles.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{cumulative_lengths, point_in_polygon, project_on_polyline, wrap_angle, Obb, Pose2D, Vec2};

pub const MAP_SCHEMA: u32 = 1;
/// Narrowest lane accepted; wider than the default vehicle footprint.
pub const MIN_LANE_WIDTH: f64 = 2.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapNode {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

impl MapNode {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub width: f64,
    pub centerline: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: usize,
    pub polygon: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidewalk {
    pub id: usize,
    pub points: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticObstacle {
    pub id: usize,
    pub center: Vec2,
    pub half_extents: Vec2,
    pub yaw: f64,
    pub height: f64,
}

impl StaticObstacle {
    pub fn obb(&self) -> Obb {
        Obb::new(self.center, self.half_extents, self.yaw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Town map document (`"schema": 1`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TownMap {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub nodes: Vec<MapNode>,
    pub lanes: Vec<Lane>,
    pub intersections: Vec<Intersection>,
    pub sidewalks: Vec<Sidewalk>,
    pub spawn_points: Vec<Pose2D>,
    #[serde(default)]
    pub obstacles: Vec<StaticObstacle>,
    /// Explicit drivable-area bounds; derived from the geometry when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
    #[serde(skip)]
    index: OnceLock<MapIndex>,
}

impl PartialEq for TownMap {
    fn eq(&self, o: &Self) -> bool {
        self.schema == o.schema
            && self.name == o.name
            && self.nodes == o.nodes
            && self.lanes == o.lanes
            && self.intersections == o.intersections
            && self.sidewalks == o.sidewalks
            && self.spawn_points == o.spawn_points
            && self.obstacles == o.obstacles
            && self.bounds == o.bounds
    }
}

/// Derived lookup structures, built once per map.
#[derive(Debug, Clone)]
pub struct MapIndex {
    pub lane_cumulative: Vec<Vec<f64>>,
    pub lane_length: Vec<f64>,
    pub outgoing: Vec<Vec<usize>>,
    pub incoming: Vec<Vec<usize>>,
    /// Lanes whose arc midpoint lies outside every intersection.
    pub is_road_lane: Vec<bool>,
    pub sidewalk_cumulative: Vec<Vec<f64>>,
    pub bounds: Bounds,
}

/// Lane assignment for a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneMatch {
    pub lane: usize,
    /// Positive to the left of the lane direction.
    pub offset: f64,
    pub heading_error: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Intersection { id: usize },
    Road(LaneMatch),
    /// Outside every lane surface and intersection; carries the nearest
    /// co-directional lane when one exists.
    OffRoad { nearest: Option<LaneMatch> },
}

impl Region {
    pub fn is_intersection(&self) -> bool {
        matches!(self, Region::Intersection { .. })
    }
}

impl TownMap {
    pub fn new(
        name: impl Into<String>,
        nodes: Vec<MapNode>,
        lanes: Vec<Lane>,
        intersections: Vec<Intersection>,
        sidewalks: Vec<Sidewalk>,
        spawn_points: Vec<Pose2D>,
        obstacles: Vec<StaticObstacle>,
    ) -> Self {
        TownMap {
            schema: MAP_SCHEMA,
            name: name.into(),
            nodes,
            lanes,
            intersections,
            sidewalks,
            spawn_points,
            obstacles,
            bounds: None,
            index: OnceLock::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: TownMap = serde_json::from_str(text).map_err(|e| Error::InvalidMap(e.to_string()))?;
        if map.schema != MAP_SCHEMA {
            return Err(Error::InvalidMap(format!("unsupported schema {}", map.schema)));
        }
        map.validate()?;
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn index(&self) -> &MapIndex {
        self.index.get_or_init(|| self.build_index())
    }

    pub fn bounds(&self) -> Bounds {
        self.index().bounds
    }

    pub fn lane_length(&self, lane: usize) -> f64 {
        self.index().lane_length[lane]
    }

    pub fn lane_point_at(&self, lane: usize, s: f64) -> (Vec2, f64) {
        crate::geom::polyline_point_at(&self.lanes[lane].centerline, &self.index().lane_cumulative[lane], s)
    }

    fn build_index(&self) -> MapIndex {
        let lane_cumulative: Vec<Vec<f64>> = self.lanes.iter().map(|l| cumulative_lengths(&l.centerline)).collect();
        let lane_length = lane_cumulative.iter().map(|c| *c.last().unwrap_or(&0.0)).collect();
        let mut outgoing = vec![Vec::new(); self.nodes.len()];
        let mut incoming = vec![Vec::new(); self.nodes.len()];
        for lane in &self.lanes {
            if lane.from < self.nodes.len() && lane.to < self.nodes.len() {
                outgoing[lane.from].push(lane.id);
                incoming[lane.to].push(lane.id);
            }
        }
        let is_road_lane = self
            .lanes
            .iter()
            .zip(&lane_cumulative)
            .map(|(l, cum)| {
                let half = cum.last().copied().unwrap_or(0.0) / 2.0;
                let mid = crate::geom::polyline_point_at(&l.centerline, cum, half).0;
                !self.intersections.iter().any(|i| point_in_polygon(mid, &i.polygon))
            })
            .collect();
        let sidewalk_cumulative = self.sidewalks.iter().map(|s| cumulative_lengths(&s.points)).collect();
        let bounds = self.bounds.unwrap_or_else(|| {
            let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
            let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut grow = |p: Vec2| {
                min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
                max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
            };
            self.nodes.iter().for_each(|n| grow(n.position()));
            self.lanes.iter().flat_map(|l| l.centerline.iter()).for_each(|p| grow(*p));
            self.sidewalks.iter().flat_map(|s| s.points.iter()).for_each(|p| grow(*p));
            if !min.x.is_finite() {
                return Bounds { min: Vec2::ZERO, max: Vec2::ZERO };
            }
            let m = 10.0;
            Bounds { min: Vec2::new(min.x - m, min.y - m), max: Vec2::new(max.x + m, max.y + m) }
        });
        MapIndex { lane_cumulative, lane_length, outgoing, incoming, is_road_lane, sidewalk_cumulative, bounds }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::InvalidMap(format!("node ids must be dense, found {} at {}", n.id, i)));
            }
            if !n.x.is_finite() || !n.y.is_finite() {
                return Err(Error::InvalidMap(format!("node {i} has non-finite coordinates")));
            }
        }
        for (i, l) in self.lanes.iter().enumerate() {
            if l.id != i {
                return Err(Error::InvalidMap(format!("lane ids must be dense, found {} at {}", l.id, i)));
            }
            if l.from >= self.nodes.len() || l.to >= self.nodes.len() {
                return Err(Error::InvalidMap(format!("lane {i} references a missing node")));
            }
            if l.width < MIN_LANE_WIDTH {
                return Err(Error::InvalidMap(format!("lane {i} width {} below {MIN_LANE_WIDTH}", l.width)));
            }
            if l.centerline.len() < 2 || l.centerline.iter().any(|p| !p.is_finite()) {
                return Err(Error::InvalidMap(format!("lane {i} needs a finite centerline of >= 2 points")));
            }
        }
        for (i, s) in self.sidewalks.iter().enumerate() {
            if s.id != i || s.points.len() < 2 {
                return Err(Error::InvalidMap(format!("sidewalk {i} malformed")));
            }
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.id != i || o.half_extents.x <= 0.0 || o.half_extents.y <= 0.0 || o.height <= 0.0 {
                return Err(Error::InvalidMap(format!("obstacle {i} malformed")));
            }
        }
        // every spawn point must reach every node
        let spawn_nodes: Vec<usize> = self
            .spawn_points
            .iter()
            .map(|p| self.snap_node(p, 5.0))
            .collect::<Result<_>>()?;
        for &s in &spawn_nodes {
            let seen = self.reachable_from(s);
            if let Some(miss) = seen.iter().position(|r| !r) {
                return Err(Error::InvalidMap(format!("node {miss} unreachable from spawn node {s}")));
            }
        }
        Ok(())
    }

    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let idx = self.index();
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(n) = queue.pop_front() {
            for &l in &idx.outgoing[n] {
                let to = self.lanes[l].to;
                if !seen[to] {
                    seen[to] = true;
                    queue.push_back(to);
                }
            }
        }
        seen
    }

    /// Nearest graph node to a pose within `radius`. Prefers the node that starts
    /// a lane aligned with the pose when several are equally close.
    pub fn snap_node(&self, pose: &Pose2D, radius: f64) -> Result<usize> {
        let p = pose.position();
        let idx = self.index();
        let mut best: Option<(f64, usize)> = None;
        for n in &self.nodes {
            let d = n.position().dist(p);
            if d > radius {
                continue;
            }
            let aligned = idx.outgoing[n.id].iter().any(|&l| {
                let (_, h) = self.lane_point_at(l, 0.0);
                wrap_angle(h - pose.yaw).abs() < std::f64::consts::FRAC_PI_2
            });
            let score = d + if aligned { 0.0 } else { 1e3 };
            if best.map_or(true, |(b, _)| score < b) {
                best = Some((score, n.id));
            }
        }
        best.map(|(_, id)| id).ok_or(Error::NoSnap { x: p.x, y: p.y, radius })
    }

    pub fn intersection_at(&self, p: Vec2) -> Option<usize> {
        self.intersections.iter().find(|i| point_in_polygon(p, &i.polygon)).map(|i| i.id)
    }

    /// Classifies a pose as inside an intersection, on a lane, or off-road.
    pub fn region_of(&self, pose: &Pose2D) -> Region {
        let p = pose.position();
        if let Some(id) = self.intersection_at(p) {
            return Region::Intersection { id };
        }
        let mut on_surface = false;
        let mut best_co: Option<(f64, LaneMatch)> = None;
        let mut best_any: Option<(f64, LaneMatch)> = None;
        for lane in &self.lanes {
            let Some(pr) = project_on_polyline(&lane.centerline, p) else { continue };
            let half = lane.width / 2.0;
            if pr.distance <= half {
                on_surface = true;
            }
            let m = LaneMatch {
                lane: lane.id,
                offset: pr.signed_offset,
                heading_error: wrap_angle(pose.yaw - pr.heading),
                half_width: half,
            };
            if m.heading_error.abs() <= std::f64::consts::FRAC_PI_2 && best_co.map_or(true, |(d, _)| pr.distance < d) {
                best_co = Some((pr.distance, m));
            }
            if best_any.map_or(true, |(d, _)| pr.distance < d) {
                best_any = Some((pr.distance, m));
            }
        }
        if !on_surface {
            return Region::OffRoad { nearest: best_co.map(|(_, m)| m) };
        }
        match best_co.or(best_any) {
            Some((_, m)) => Region::Road(m),
            None => Region::OffRoad { nearest: None },
        }
    }
}
