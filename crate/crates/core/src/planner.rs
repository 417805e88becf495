//! Global A* routing over the lane graph and the fixed-size local route window.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{cumulative_lengths, polyline_point_at, Pose2D, Vec2};
use crate::world::TownMap;

pub const LOCAL_ROUTE_POINTS: usize = 130;
pub const LOCAL_ROUTE_SPACING: f64 = 0.4;
pub const ROUTE_FEATURES: usize = 2 * LOCAL_ROUTE_POINTS;
/// Maximum spacing of densified global route waypoints.
pub const DENSIFY_SPACING: f64 = 0.1;
/// Start and goal poses must lie this close to a graph node.
pub const SNAP_RADIUS: f64 = 5.0;

/// Directed graph with planar node positions, for A* search.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub positions: Vec<Vec2>,
    /// `adj[u]` lists `(v, cost, edge id)`.
    pub adj: Vec<Vec<(usize, f64, usize)>>,
}

impl Graph {
    pub fn new(positions: Vec<Vec2>) -> Self {
        let n = positions.len();
        Graph { positions, adj: vec![Vec::new(); n] }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cost: f64, id: usize) {
        self.adj[from].push((to, cost, id));
    }

    pub fn from_map(map: &TownMap) -> Self {
        let mut g = Graph::new(map.nodes.iter().map(|n| n.position()).collect());
        for lane in &map.lanes {
            g.add_edge(lane.from, lane.to, map.lane_length(lane.id), lane.id);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPath {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    pub cost: f64,
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    node: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then_with(|| o.node.cmp(&self.node))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// A* with a Euclidean heuristic. Edge costs must be at least the straight-line
/// distance between their endpoints for the result to be optimal.
pub fn astar(g: &Graph, start: usize, goal: usize) -> Option<GraphPath> {
    let n = g.positions.len();
    if start >= n || goal >= n {
        return None;
    }
    // shrink the heuristic a hair so rounding can never make it overestimate
    let h = |u: usize| g.positions[u].dist(g.positions[goal]) * (1.0 - 1e-12);
    let mut best = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    best[start] = 0.0;
    heap.push(Open { f: h(start), g: 0.0, node: start });
    while let Some(Open { g: gu, node: u, .. }) = heap.pop() {
        if gu > best[u] {
            continue;
        }
        if u == goal {
            break;
        }
        for &(v, c, e) in &g.adj[u] {
            let gv = gu + c;
            if gv < best[v] {
                best[v] = gv;
                parent[v] = Some((u, e));
                heap.push(Open { f: gv + h(v), g: gv, node: v });
            }
        }
    }
    if !best[goal].is_finite() {
        return None;
    }
    let mut nodes = vec![goal];
    let mut edges = Vec::new();
    let mut cur = goal;
    while let Some((p, e)) = parent[cur] {
        if cur == start {
            break;
        }
        nodes.push(p);
        edges.push(e);
        cur = p;
    }
    nodes.reverse();
    edges.reverse();
    Some(GraphPath { nodes, edges, cost: best[goal] })
}

/// Densified global route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRoute {
    pub waypoints: Vec<Vec2>,
    pub lanes: Vec<usize>,
    pub total_length: f64,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl FullRoute {
    pub fn from_waypoints(waypoints: Vec<Vec2>) -> Self {
        Self::with_lanes(waypoints, Vec::new())
    }

    fn with_lanes(waypoints: Vec<Vec2>, lanes: Vec<usize>) -> Self {
        let cumulative = cumulative_lengths(&waypoints);
        let total_length = cumulative.last().copied().unwrap_or(0.0);
        FullRoute { waypoints, lanes, total_length, cumulative }
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn goal(&self) -> Vec2 {
        *self.waypoints.last().expect("route is never empty")
    }

    /// Nearest waypoint index; ties go to the earliest index.
    pub fn nearest_index(&self, p: Vec2) -> usize {
        self.nearest_in(p, 0, self.waypoints.len())
    }

    fn nearest_in(&self, p: Vec2, lo: usize, hi: usize) -> usize {
        let mut best = (f64::INFINITY, lo);
        for (i, w) in self.waypoints[lo..hi].iter().enumerate() {
            let d = w.dist(p);
            if d < best.0 {
                best = (d, lo + i);
            }
        }
        best.1
    }

    /// Point and heading at arc length `s` (clamped to the route).
    pub fn point_at(&self, s: f64) -> (Vec2, f64) {
        polyline_point_at(&self.waypoints, &self.cumulative, s)
    }

    pub fn arc_at(&self, index: usize) -> f64 {
        self.cumulative[index]
    }
}

/// Plans the shortest lane-graph route between two poses.
pub fn plan_global(map: &TownMap, start: &Pose2D, goal: &Pose2D) -> Result<FullRoute> {
    let s = map.snap_node(start, SNAP_RADIUS)?;
    let g = map.snap_node(goal, SNAP_RADIUS)?;
    plan_between_nodes(map, s, g)
}

pub fn plan_between_nodes(map: &TownMap, s: usize, g: usize) -> Result<FullRoute> {
    let graph = Graph::from_map(map);
    let path = astar(&graph, s, g).ok_or(Error::NoRoute { from: s, to: g })?;
    if path.edges.is_empty() {
        return Ok(FullRoute::with_lanes(vec![map.nodes[s].position()], Vec::new()));
    }
    let mut pts: Vec<Vec2> = Vec::new();
    for &l in &path.edges {
        let cl = &map.lanes[l].centerline;
        for w in cl.windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = (a.dist(b) / DENSIFY_SPACING).ceil().max(1.0) as usize;
            if pts.last().map_or(true, |p: &Vec2| p.dist(a) > 1e-9) {
                pts.push(a);
            }
            for k in 1..=n {
                pts.push(a.lerp(b, k as f64 / n as f64));
            }
        }
    }
    Ok(FullRoute::with_lanes(pts, path.edges))
}

/// The fixed-size route window ahead of the ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRoute {
    pub points: Vec<Vec2>,
}

/// First point beyond `(seg, t)` on the polyline at straight-line distance `r`
/// from `c`, as (segment, parameter, point).
fn chord_step(pts: &[Vec2], c: Vec2, seg: usize, t0: f64, r: f64) -> Option<(usize, f64, Vec2)> {
    for j in seg..pts.len().saturating_sub(1) {
        let a = pts[j];
        let d = pts[j + 1] - a;
        let dd = d.norm_sq();
        if dd == 0.0 {
            continue;
        }
        let f = a - c;
        let b = f.dot(d);
        let cc = f.norm_sq() - r * r;
        let disc = b * b - dd * cc;
        if disc < 0.0 {
            continue;
        }
        let t = (-b + disc.sqrt()) / dd;
        let lo = if j == seg { t0 } else { 0.0 };
        if t >= lo && t <= 1.0 {
            return Some((j, t, a + d * t));
        }
    }
    None
}

/// Extracts the 130-point window starting at the waypoint nearest the ego.
pub fn extract_local_route(route: &FullRoute, ego: &Pose2D) -> LocalRoute {
    local_route_from(route, route.nearest_index(ego.position()))
}

/// Window anchored at a known route index.
pub fn local_route_from(route: &FullRoute, start: usize) -> LocalRoute {
    let pts = &route.waypoints;
    let goal = route.goal();
    let mut out = Vec::with_capacity(LOCAL_ROUTE_POINTS);
    let mut c = pts[start];
    out.push(c);
    let mut seg = start;
    let mut t = 0.0;
    let mut done = false;
    while out.len() < LOCAL_ROUTE_POINTS {
        if !done {
            if let Some((j, tj, p)) = chord_step(pts, c, seg, t, LOCAL_ROUTE_SPACING) {
                seg = j;
                t = tj;
                c = p;
                out.push(p);
                continue;
            }
            done = true;
        }
        out.push(goal);
    }
    LocalRoute { points: out }
}

/// Ego-frame coordinates serialized as (x1, y1, ..., x130, y130).
pub fn flatten_route(local: &LocalRoute, ego: &Pose2D) -> Vec<f64> {
    local
        .points
        .iter()
        .flat_map(|p| {
            let l = ego.to_local(*p);
            [l.x, l.y]
        })
        .collect()
}

/// Tracks progress along a route so the nearest-point search cannot jump to a
/// later pass of the route that happens to run close by.
#[derive(Debug, Clone)]
pub struct RouteTracker {
    pub route: FullRoute,
    pub index: usize,
}

impl RouteTracker {
    /// Search window behind and ahead of the current index, in waypoints.
    const BACK: usize = 50;
    const AHEAD: usize = 400;

    pub fn new(route: FullRoute, ego: &Pose2D) -> Self {
        let index = route.nearest_index(ego.position());
        RouteTracker { route, index }
    }

    pub fn update(&mut self, ego: &Pose2D) -> usize {
        let lo = self.index.saturating_sub(Self::BACK);
        let hi = (self.index + Self::AHEAD).min(self.route.waypoints.len());
        self.index = self.route.nearest_in(ego.position(), lo, hi);
        self.index
    }

    pub fn local_route(&self) -> LocalRoute {
        local_route_from(&self.route, self.index)
    }

    pub fn remaining(&self) -> f64 {
        self.route.total_length - self.route.arc_at(self.index)
    }
}
