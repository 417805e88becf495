//! Synthetic camera, lidar and radar, and the image-plane ralidar tensor.
//!
//! Camera coordinates are X right, Y down, Z along the optical axis. Ego
//! coordinates are x forward, y left, z up.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{Obb, Pose2D, Vec2};
use crate::world::{tick_rng, AgentKind, Bounds, ConditionProfile, TownMap, WorldState};

const STREAM_CAMERA: u64 = 2;
const STREAM_LIDAR: u64 = 3;
const STREAM_RADAR: u64 = 4;

/// Dense H x W x C tensor, channel-last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.width + col) * self.channels
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let o = self.offset(row, col);
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let o = self.offset(row, col);
        &mut self.data[o..o + self.channels]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera position and heading in the ego frame.
    pub mount: Pose2D,
    pub mount_height: f64,
}

impl CameraIntrinsics {
    /// Pinhole camera with square pixels, principal point at the image center.
    pub fn with_fov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let cx = width as f64 / 2.0;
        let fx = cx / (hfov_deg.to_radians() / 2.0).tan();
        CameraIntrinsics {
            width,
            height,
            fx,
            fy: fx,
            cx,
            cy: height as f64 / 2.0,
            mount: Pose2D::new(1.0, 0.0, 0.0),
            mount_height: 1.6,
        }
    }

    /// Same aspect (5:12) at `height` rows.
    pub fn scaled(height: usize) -> Self {
        Self::with_fov(height * 12 / 5, height, 90.0)
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0 && self.height > 0 && self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite()
    }

    /// Ego-frame point to camera coordinates.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let l = self.mount.to_local(Vec2::new(p[0], p[1]));
        [-l.y, self.mount_height - p[2], l.x]
    }

    pub fn from_camera(&self, c: [f64; 3]) -> [f64; 3] {
        let w = self.mount.to_world(Vec2::new(c[2], -c[0]));
        [w.x, w.y, self.mount_height - c[1]]
    }

    /// Projects an ego-frame point. Points behind the image plane or outside the
    /// image are discarded.
    pub fn project(&self, p: [f64; 3]) -> Option<Projection> {
        let [x, y, z] = self.to_camera(p);
        if !(z > 1e-6) {
            return None;
        }
        let col = self.fx * x / z + self.cx;
        let row = self.fy * y / z + self.cy;
        if !(col >= 0.0 && col < self.width as f64 && row >= 0.0 && row < self.height as f64) {
            return None;
        }
        Some(Projection { row, col, depth: z })
    }

    /// Inverse of [`project`](Self::project) given the depth.
    pub fn unproject(&self, row: f64, col: f64, depth: f64) -> [f64; 3] {
        let x = (col - self.cx) * depth / self.fx;
        let y = (row - self.cy) * depth / self.fy;
        self.from_camera([x, y, depth])
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::scaled(60)
    }
}

/// Continuous image coordinates plus depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub row: f64,
    pub col: f64,
    pub depth: f64,
}

impl Projection {
    pub fn pixel(&self) -> (usize, usize) {
        (self.row.floor() as usize, self.col.floor() as usize)
    }
}

pub fn project_points(points: &[[f64; 3]], cam: &CameraIntrinsics) -> Vec<Projection> {
    points.iter().filter_map(|p| cam.project(*p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarConfig {
    pub rays: usize,
    pub max_range: f64,
    /// Spacing of the vertical samples generated per hit.
    pub vertical_step: f64,
    pub max_height: f64,
    pub boundary_height: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig { rays: 360, max_range: 50.0, vertical_step: 0.25, max_height: 4.0, boundary_height: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarConfig {
    /// Half field of view, radians.
    pub half_fov: f64,
    pub max_range: f64,
    pub return_height: f64,
    pub splat_radius: usize,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig { half_fov: 60f64.to_radians(), max_range: 60.0, return_height: 1.0, splat_radius: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub lidar: LidarConfig,
    #[serde(default)]
    pub radar: RadarConfig,
}

/// Ego-frame lidar points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LidarScan {
    pub points: Vec<[f64; 3]>,
    /// Rays that produced a return (before vertical expansion).
    pub rays_hit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarReturn {
    pub azimuth: f64,
    pub range: f64,
    /// Range rate, negative when closing.
    pub relative_speed: f64,
    pub agent: u32,
}

/// Ground material raster over the map bounds.
#[derive(Debug, Clone)]
struct GroundRaster {
    origin: Vec2,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<u8>,
}

const GRASS: u8 = 0;
const ROAD: u8 = 1;
const SIDEWALK: u8 = 2;
const MARKING: u8 = 3;

impl GroundRaster {
    fn build(map: &TownMap, cell: f64) -> Self {
        let b = map.bounds();
        let cols = ((b.max.x - b.min.x) / cell).ceil() as usize + 1;
        let rows = ((b.max.y - b.min.y) / cell).ceil() as usize + 1;
        let mut r = GroundRaster { origin: b.min, cell, cols, rows, cells: vec![GRASS; cols * rows] };
        for sw in &map.sidewalks {
            for w in sw.points.windows(2) {
                r.paint_segment(w[0], w[1], 0.75, SIDEWALK);
            }
        }
        for lane in &map.lanes {
            for w in lane.centerline.windows(2) {
                r.paint_segment(w[0], w[1], lane.width / 2.0, ROAD);
            }
        }
        for it in &map.intersections {
            r.paint_polygon(&it.polygon, ROAD);
        }
        let idx = map.index();
        for lane in map.lanes.iter().filter(|l| idx.is_road_lane[l.id]) {
            for w in lane.centerline.windows(2) {
                let n = (w[1] - w[0]).normalized().perp() * (lane.width / 2.0);
                r.paint_segment(w[0] + n, w[1] + n, 0.12, MARKING);
            }
        }
        r
    }

    fn cell_of(&self, p: Vec2) -> Option<usize> {
        let c = ((p.x - self.origin.x) / self.cell).floor();
        let r = ((p.y - self.origin.y) / self.cell).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return None;
        }
        Some(r as usize * self.cols + c as usize)
    }

    fn center(&self, i: usize) -> Vec2 {
        let (r, c) = (i / self.cols, i % self.cols);
        self.origin + Vec2::new((c as f64 + 0.5) * self.cell, (r as f64 + 0.5) * self.cell)
    }

    fn for_box(&mut self, lo: Vec2, hi: Vec2, mut f: impl FnMut(Vec2) -> Option<u8>) {
        let c0 = (((lo.x - self.origin.x) / self.cell).floor().max(0.0)) as usize;
        let r0 = (((lo.y - self.origin.y) / self.cell).floor().max(0.0)) as usize;
        let c1 = (((hi.x - self.origin.x) / self.cell).ceil().max(0.0) as usize).min(self.cols);
        let r1 = (((hi.y - self.origin.y) / self.cell).ceil().max(0.0) as usize).min(self.rows);
        for r in r0..r1 {
            for c in c0..c1 {
                let i = r * self.cols + c;
                if let Some(v) = f(self.center(i)) {
                    self.cells[i] = v;
                }
            }
        }
    }

    fn paint_segment(&mut self, a: Vec2, b: Vec2, half: f64, v: u8) {
        let lo = Vec2::new(a.x.min(b.x) - half, a.y.min(b.y) - half);
        let hi = Vec2::new(a.x.max(b.x) + half, a.y.max(b.y) + half);
        let ab = b - a;
        let len_sq = ab.norm_sq();
        self.for_box(lo, hi, |p| {
            let t = if len_sq > 0.0 { ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
            (p.dist(a + ab * t) <= half).then_some(v)
        });
    }

    fn paint_polygon(&mut self, poly: &[Vec2], v: u8) {
        let lo = poly.iter().fold(Vec2::new(f64::MAX, f64::MAX), |m, p| Vec2::new(m.x.min(p.x), m.y.min(p.y)));
        let hi = poly.iter().fold(Vec2::new(f64::MIN, f64::MIN), |m, p| Vec2::new(m.x.max(p.x), m.y.max(p.y)));
        self.for_box(lo, hi, |p| crate::geom::point_in_polygon(p, poly).then_some(v));
    }

    fn material(&self, p: Vec2) -> u8 {
        self.cell_of(p).map_or(GRASS, |i| self.cells[i])
    }
}

fn ground_color(m: u8) -> [f64; 3] {
    match m {
        ROAD => [0.30, 0.30, 0.32],
        SIDEWALK => [0.60, 0.58, 0.55],
        MARKING => [0.90, 0.90, 0.85],
        _ => [0.30, 0.45, 0.25],
    }
}

pub fn agent_color(kind: AgentKind) -> [f64; 3] {
    match kind {
        AgentKind::Pedestrian => [0.85, 0.30, 0.30],
        AgentKind::Car => [0.20, 0.35, 0.80],
        AgentKind::Truck => [0.80, 0.60, 0.20],
        AgentKind::Van => [0.85, 0.85, 0.85],
        AgentKind::Bus => [0.90, 0.75, 0.10],
        AgentKind::Motorcyclist => [0.60, 0.20, 0.70],
        AgentKind::Bicyclist => [0.20, 0.70, 0.60],
    }
}

const BUILDING_COLOR: [f64; 3] = [0.55, 0.45, 0.40];
const WALL_COLOR: [f64; 3] = [0.50, 0.50, 0.50];

/// Everything a ray can hit in the horizontal plane.
#[derive(Debug, Clone, Copy)]
struct Solid {
    obb: Obb,
    height: f64,
    color: [f64; 3],
    agent: Option<u32>,
}

fn solids(map: &TownMap, state: &WorldState) -> Vec<Solid> {
    let mut out: Vec<Solid> = state
        .agents
        .iter()
        .map(|a| Solid { obb: a.obb(), height: a.height(), color: agent_color(a.kind), agent: Some(a.id) })
        .collect();
    out.extend(map.obstacles.iter().map(|o| Solid { obb: o.obb(), height: o.height, color: BUILDING_COLOR, agent: None }));
    out
}

/// Distance from an interior point to the bounds edge along `dir`.
fn bounds_exit(b: &Bounds, o: Vec2, dir: Vec2) -> Option<f64> {
    if !b.contains(o) {
        return None;
    }
    let mut t = f64::INFINITY;
    for (oc, dc, lo, hi) in [(o.x, dir.x, b.min.x, b.max.x), (o.y, dir.y, b.min.y, b.max.y)] {
        if dc > 1e-15 {
            t = t.min((hi - oc) / dc);
        } else if dc < -1e-15 {
            t = t.min((lo - oc) / dc);
        }
    }
    t.is_finite().then_some(t)
}

/// Builds per-map lookup data once and produces observations for any state.
#[derive(Debug, Clone)]
pub struct SensorRig {
    pub config: SensorConfig,
    raster: GroundRaster,
}

/// Camera image and ralidar tensor for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub camera: Image,
    pub ralidar: Image,
}

impl SensorRig {
    pub fn new(map: &TownMap, config: SensorConfig) -> Self {
        SensorRig { config, raster: GroundRaster::build(map, 0.25) }
    }

    pub fn observe(&self, map: &TownMap, state: &WorldState) -> Observation {
        let camera = self.render_camera(map, state);
        let lidar = lidar_scan(map, state, &self.config.lidar);
        let radar = radar_scan(map, state, &self.config.radar);
        let ralidar = assemble_ralidar(&lidar, &radar, &self.config.camera, &self.config.radar);
        Observation { camera, ralidar }
    }

    /// Noise-free flat-shaded rendering.
    pub fn render_clean(&self, map: &TownMap, state: &WorldState) -> Image {
        let cam = &self.config.camera;
        let mut img = Image::zeros(cam.height, cam.width, 3);
        let ego = &state.ego.pose;
        let origin = ego.to_world(cam.mount.position());
        let yaw = ego.yaw + cam.mount.yaw;
        let world = solids(map, state);
        let bounds = map.bounds();
        let mut hits: Vec<(f64, f64, [f64; 3])> = Vec::new();
        for col in 0..cam.width {
            let xn = (col as f64 + 0.5 - cam.cx) / cam.fx;
            let n = (1.0 + xn * xn).sqrt();
            let dir = Vec2::new(1.0, -xn).rotate(yaw) * (1.0 / n);
            hits.clear();
            for s in &world {
                if let Some(t) = s.obb.ray_hit(origin, dir) {
                    if t > 0.0 {
                        hits.push((t / n, s.height, s.color));
                    }
                }
            }
            if let Some(t) = bounds_exit(&bounds, origin, dir) {
                hits.push((t / n, 3.0, WALL_COLOR));
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0));
            for row in 0..cam.height {
                let yn = (row as f64 + 0.5 - cam.cy) / cam.fy;
                let ground_z = if yn > 0.0 { cam.mount_height / yn } else { f64::INFINITY };
                let mut color = None;
                for &(z, h, c) in &hits {
                    if ground_z <= z {
                        break;
                    }
                    let height = cam.mount_height - z * yn;
                    if (0.0..=h).contains(&height) {
                        color = Some(c);
                        break;
                    }
                }
                let c = color.unwrap_or_else(|| {
                    if yn > 0.0 {
                        ground_color(self.raster.material(origin + dir * (ground_z * n)))
                    } else {
                        let f = (row as f64 + 0.5) / cam.cy;
                        [0.45 + 0.3 * f, 0.60 + 0.22 * f, 0.85 + 0.05 * f]
                    }
                });
                let px = img.pixel_mut(row, col);
                for k in 0..3 {
                    px[k] = c[k] as f32;
                }
            }
        }
        img
    }

    /// Rendering with the state's condition applied: contrast scaling, additive
    /// Gaussian noise, clamping.
    pub fn render_camera(&self, map: &TownMap, state: &WorldState) -> Image {
        let mut img = self.render_clean(map, state);
        degrade_camera(&mut img, &state.condition, state.seed, state.tick);
        img
    }
}

pub fn degrade_camera(img: &mut Image, cond: &ConditionProfile, seed: u64, tick: u64) {
    let mut rng = tick_rng(seed, tick, STREAM_CAMERA);
    let noise = Normal::new(0.0, cond.cam_noise_sigma.max(0.0)).expect("finite sigma");
    let c = cond.cam_contrast;
    for v in img.data.iter_mut() {
        let n = if cond.cam_noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        *v = (c * *v as f64 + n).clamp(0.0, 1.0) as f32;
    }
}

pub fn lidar_scan(map: &TownMap, state: &WorldState, cfg: &LidarConfig) -> LidarScan {
    let cond = &state.condition;
    let mut rng = tick_rng(state.seed, state.tick, STREAM_LIDAR);
    let jitter = Normal::new(0.0, cond.lidar_range_jitter.max(0.0)).expect("finite jitter");
    let ego = &state.ego.pose;
    let origin = ego.position();
    let world = solids(map, state);
    let bounds = map.bounds();
    let mut scan = LidarScan::default();
    for k in 0..cfg.rays {
        let az = k as f64 * std::f64::consts::TAU / cfg.rays as f64;
        let dir = Vec2::from_angle(ego.yaw + az);
        let keep = rng.gen::<f64>() >= cond.lidar_dropout;
        let dr = if cond.lidar_range_jitter > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
        let mut best: Option<(f64, f64)> = None;
        for s in &world {
            if let Some(t) = s.obb.ray_hit(origin, dir) {
                if t > 0.0 && best.map_or(true, |(b, _)| t < b) {
                    best = Some((t, s.height));
                }
            }
        }
        if let Some(t) = bounds_exit(&bounds, origin, dir) {
            if best.map_or(true, |(b, _)| t < b) {
                best = Some((t, cfg.boundary_height));
            }
        }
        let Some((t, h)) = best else { continue };
        if t > cfg.max_range || !keep {
            continue;
        }
        let r = (t + dr).max(0.0);
        scan.rays_hit += 1;
        let (s, c) = az.sin_cos();
        let top = h.min(cfg.max_height);
        let mut z = cfg.vertical_step;
        while z <= top + 1e-9 {
            scan.points.push([r * c, r * s, z]);
            z += cfg.vertical_step;
        }
    }
    scan
}

/// Range rate of a target relative to the ego reference point.
pub fn range_rate(rel_pos: Vec2, rel_vel: Vec2) -> f64 {
    let r = rel_pos.norm();
    if r > 0.0 {
        rel_pos.dot(rel_vel) / r
    } else {
        0.0
    }
}

pub fn radar_scan(map: &TownMap, state: &WorldState, cfg: &RadarConfig) -> Vec<RadarReturn> {
    let cond = &state.condition;
    let mut rng = tick_rng(state.seed, state.tick, STREAM_RADAR);
    let noise = Normal::new(0.0, cond.radar_noise.max(0.0)).expect("finite noise");
    let ego = &state.ego.pose;
    let origin = ego.position();
    let ego_vel = state.ego.world_velocity();
    let world = solids(map, state);
    let mut out = Vec::new();
    for a in &state.agents {
        let rel = a.pose.position() - origin;
        let range = rel.norm();
        let local = ego.to_local(a.pose.position());
        let az = local.y.atan2(local.x);
        if !(range > 0.0 && range <= cfg.max_range && az.abs() <= cfg.half_fov) {
            continue;
        }
        let dir = rel * (1.0 / range);
        let own = a.obb().ray_hit(origin, dir).unwrap_or(0.0);
        let occluded = world.iter().any(|s| {
            s.agent != Some(a.id) && s.obb.ray_hit(origin, dir).is_some_and(|t| t > 0.0 && t < own)
        });
        if occluded {
            continue;
        }
        let n = if cond.radar_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        out.push(RadarReturn { azimuth: az, range, relative_speed: range_rate(rel, a.velocity() - ego_vel) + n, agent: a.id });
    }
    out
}

/// Projects lidar points (nearest depth wins per pixel) and radar returns
/// (disc splat of relative speed, nearest range wins) into one H x W x 4 tensor.
pub fn assemble_ralidar(lidar: &LidarScan, radar: &[RadarReturn], cam: &CameraIntrinsics, rc: &RadarConfig) -> Image {
    let mut img = Image::zeros(cam.height, cam.width, 4);
    let mut zbuf = vec![f64::INFINITY; cam.height * cam.width];
    for p in &lidar.points {
        let Some(pr) = cam.project(*p) else { continue };
        let (r, c) = pr.pixel();
        let i = r * cam.width + c;
        if pr.depth < zbuf[i] {
            zbuf[i] = pr.depth;
            let xyz = cam.to_camera(*p);
            let px = img.pixel_mut(r, c);
            px[0] = xyz[0] as f32;
            px[1] = xyz[1] as f32;
            px[2] = xyz[2] as f32;
        }
    }
    let mut rbuf = vec![f64::INFINITY; cam.height * cam.width];
    let rad = rc.splat_radius as i64;
    for ret in radar {
        let (s, c) = ret.azimuth.sin_cos();
        let Some(pr) = cam.project([ret.range * c, ret.range * s, rc.return_height]) else { continue };
        let (r0, c0) = pr.pixel();
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                if dr * dr + dc * dc > rad * rad {
                    continue;
                }
                let (r, c) = (r0 as i64 + dr, c0 as i64 + dc);
                if r < 0 || c < 0 || r >= cam.height as i64 || c >= cam.width as i64 {
                    continue;
                }
                let i = r as usize * cam.width + c as usize;
                if ret.range < rbuf[i] {
                    rbuf[i] = ret.range;
                    img.pixel_mut(r as usize, c as usize)[3] = ret.relative_speed as f32;
                }
            }
        }
    }
    img
}
