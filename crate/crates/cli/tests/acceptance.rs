//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Criteria 8-10 train real policies and take
//! most of the runtime.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use navfuse::action::ActionTriple;
use navfuse::benchmark::{compute_metrics, episode_metrics, PolicySpec, SpeedLimits, SuiteReport};
use navfuse::control::{reliability, FusionConstants};
use navfuse::expert_data::{EpisodeLog, EpisodeSetup, Outcome, TickLog};
use navfuse::planner::{astar, extract_local_route, FullRoute, Graph, LOCAL_ROUTE_POINTS, LOCAL_ROUTE_SPACING, ROUTE_FEATURES};
use navfuse::policy::gmm::{nll_loss, raw_len, MotionGmm};
use navfuse::policy::train::{batch_gradients, evaluate};
use navfuse::policy::{PolicyInput, Sample};
use navfuse::sensors::{assemble_ralidar, CameraIntrinsics, LidarScan, RadarConfig};
use navfuse::world::{ConditionName, Density, Intersection, Lane, MapNode, TownMap};
use navfuse::{Policy, PolicyConfig, Pose2D, Vec2};
use navfuse_cli::commands::{self, Template};
use navfuse_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome_ = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1, 2

fn tiny_policy() -> PolicyConfig {
    PolicyConfig {
        feature_dim: 4,
        mixture_count: 2,
        horizon_steps: 2,
        image_height: 6,
        image_width: 8,
        conv_channels: vec![2, 3],
        velocity_hidden: 3,
        route_hidden: 3,
        action_hidden: 3,
        gmm_hidden: 5,
        ..PolicyConfig::default()
    }
}

fn gradient_check() -> Outcome_ {
    let start = Instant::now();
    let cfg = tiny_policy();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for draw in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + draw);
        let mut p = Policy::<f64>::init(PolicyConfig { init_seed: draw, ..cfg.clone() }).map_err(|e| e.to_string())?;
        for t in p.network.tensors_mut() {
            if t.shape.len() == 1 {
                t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.3));
            }
        }
        let camera: Vec<f32> = (0..cfg.camera_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ralidar: Vec<f32> = (0..cfg.ralidar_len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let route: Vec<f32> = (0..ROUTE_FEATURES).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let motion: Vec<f32> = (0..cfg.motion_len()).map(|i| if i % 2 == 0 { rng.gen_range(0.0..10.0) } else { rng.gen_range(-0.5..0.5) }).collect();
        let s = Sample {
            input: PolicyInput { camera: &camera, ralidar: &ralidar, velocity: [rng.gen_range(0.0..12.0), rng.gen_range(-0.5..0.5)], route: &route },
            expert: ActionTriple::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
            motion: &motion,
        };
        let (g, _) = batch_gradients(&p, &[s]).map_err(|e| e.to_string())?;
        let grads: Vec<Vec<f64>> = g.tensors().iter().map(|(_, t)| t.data.clone()).collect();
        for (k, gk) in grads.iter().enumerate() {
            let picks: Vec<usize> = if gk.len() <= 6 { (0..gk.len()).collect() } else { (0..6).map(|_| rng.gen_range(0..gk.len())).collect() };
            for i in picks {
                let h = 1e-5;
                let orig = p.network.tensors_mut()[k].data[i];
                p.network.tensors_mut()[k].data[i] = orig + h;
                let up = evaluate(&p, std::slice::from_ref(&s)).unwrap().total;
                p.network.tensors_mut()[k].data[i] = orig - h;
                let down = evaluate(&p, std::slice::from_ref(&s)).unwrap().total;
                p.network.tensors_mut()[k].data[i] = orig;
                let num = (up - down) / (2.0 * h);
                let rel = (gk[i] - num).abs() / gk[i].abs().max(num.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4, format!("worst relative error {worst:.2e}"))?;
    check(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!("100 draws, {checked} coordinates, worst relative error {worst:.2e}, {secs:.1} s"))
}

fn naive_nll(g: &MotionGmm<f64>, x: &[f64]) -> f64 {
    let k = g.horizon * 2;
    let mut p = 0.0;
    for m in 0..g.components {
        let mut dens = g.weights[m];
        for i in 0..k {
            let v = g.variances[m * k + i];
            let e = x[i] - g.means[m * k + i];
            dens *= (-e * e / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        p += dens;
    }
    -p.ln()
}

fn gmm_identity() -> Outcome_ {
    let t = 30;
    let mut raw = vec![0.0f64; raw_len(1, t)];
    for (i, v) in raw[1..1 + 2 * t].iter_mut().enumerate() {
        *v = i as f64 * 0.1 - 2.0;
    }
    for v in raw[1 + 2 * t..].iter_mut() {
        *v = (1.0f64 - 1e-6).ln();
    }
    let g = MotionGmm::from_raw(&raw, 1, t);
    check(g.variances.iter().all(|v| (v - 1.0).abs() < 1e-15), "variances are not 1")?;
    let nll = nll_loss(&g, &g.means.clone());
    let err = (nll - 30.0 * (2.0 * std::f64::consts::PI).ln()).abs();
    check(err < 1e-9, format!("NLL off by {err:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (m, t) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let raw: Vec<f64> = (0..raw_len(m, t)).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let x: Vec<f64> = (0..2 * t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g = MotionGmm::from_raw(&raw, m, t);
        let (a, b) = (nll_loss(&g, &x), naive_nll(&g, &x));
        worst = worst.max((a - b).abs() / b.abs().max(1e-300));
    }
    check(worst < 1e-10, format!("naive density disagrees by {worst:.2e}"))?;
    Ok(format!("30 ln 2pi within {err:.1e}; 1000 small mixtures within {worst:.1e} relative"))
}

// ---------------------------------------------------------------- 3

fn gate_identities() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let c = FusionConstants { c1: rng.gen_range(0.01..5.0), c2: rng.gen_range(0.0..50.0), target_distance: 5.0 };
        let below = rng.gen_range(0.0..=c.c2);
        check(reliability(below, &c) == 1.0, format!("lambda != 1 at {below} <= {}", c.c2))?;
        check(reliability(c.c2, &c) == 1.0, "lambda != 1 at c2")?;
    }
    let mut worst_half: f64 = 0.0;
    for c2 in [0.0, 0.5, 3.0, 17.25, 120.0] {
        let c = FusionConstants { c1: 1.0, c2, target_distance: 5.0 };
        worst_half = worst_half.max((reliability(c2 + 2f64.ln(), &c) - 0.5).abs());
    }
    check(worst_half <= 1e-12, format!("lambda at c2 + ln 2 off by {worst_half:.2e}"))?;
    for _ in 0..10_000 {
        let c = FusionConstants { c1: rng.gen_range(0.01..5.0), c2: rng.gen_range(0.0..20.0), target_distance: 5.0 };
        let (a, b) = (rng.gen_range(0.0..80.0), rng.gen_range(0.0..80.0));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        check(reliability(lo, &c) >= reliability(hi, &c), format!("not monotone at {lo} {hi}"))?;
    }
    Ok(format!("lambda = 1 below c2, |lambda - 0.5| = {worst_half:.1e} at c2 + ln 2, monotone on 10000 draws"))
}

// ---------------------------------------------------------------- 4, 5

fn random_route(rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let mut p = Vec2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
    let mut heading: f64 = rng.gen_range(-3.1..3.1);
    let mut pts = vec![p];
    for _ in 0..rng.gen_range(8..40) {
        heading += rng.gen_range(-2.0..2.0);
        let len: f64 = rng.gen_range(1.0..15.0);
        let steps = (len / rng.gen_range(0.05..2.0f64)).ceil() as usize;
        for _ in 0..steps {
            p = p + Vec2::from_angle(heading) * (len / steps as f64);
            pts.push(p);
        }
    }
    pts
}

struct Resampler {
    pts: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Resampler {
    fn new(pts: &[Vec2]) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + w[0].dist(w[1]));
        }
        Resampler { pts: pts.to_vec(), cum }
    }

    fn at(&self, s: f64) -> Vec2 {
        let i = match self.cum.iter().position(|&c| c > s) {
            Some(0) => return self.pts[0],
            Some(i) => i - 1,
            None => return *self.pts.last().unwrap(),
        };
        self.pts[i].lerp(self.pts[i + 1], (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i]))
    }

    /// Smallest arc length past `s0` whose point is `r` away from `at(s0)`.
    fn next(&self, s0: f64, r: f64) -> Option<f64> {
        let c = self.at(s0);
        let end = *self.cum.last().unwrap();
        let (mut prev, mut s) = (s0, s0);
        while s < end {
            let vertex = self.cum.iter().copied().find(|&v| v > s).unwrap_or(end);
            s = (s + 0.01).min(vertex);
            if self.at(s).dist(c) >= r {
                let (mut lo, mut hi) = (prev, s);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if self.at(mid).dist(c) >= r {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(hi);
            }
            prev = s;
        }
        None
    }
}

fn local_route_conformance() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (mut worst_pos, mut worst_gap): (f64, f64) = (0.0, 0.0);
    let mut spaced = 0;
    for r in 0..1000 {
        let pts = random_route(&mut rng);
        let route = FullRoute::from_waypoints(pts.clone());
        let oracle = Resampler::new(&pts);
        let k = rng.gen_range(0..pts.len());
        let ego = Pose2D::new(pts[k].x + rng.gen_range(-3.0..3.0), pts[k].y + rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let mut nearest = 0;
        for (i, w) in pts.iter().enumerate() {
            if w.dist(ego.position()) < pts[nearest].dist(ego.position()) {
                nearest = i;
            }
        }
        let local = extract_local_route(&route, &ego);
        check(local.points.len() == LOCAL_ROUTE_POINTS, format!("route {r}: {} points", local.points.len()))?;
        check(local.points[0] == pts[nearest], format!("route {r}: not anchored at the nearest waypoint"))?;
        let mut s = oracle.cum[nearest];
        let mut filling = false;
        for w in local.points.windows(2) {
            if !filling {
                if let Some(next) = oracle.next(s, LOCAL_ROUTE_SPACING) {
                    s = next;
                    worst_pos = worst_pos.max(w[1].dist(oracle.at(s)));
                    worst_gap = worst_gap.max((w[0].dist(w[1]) - 0.4).abs());
                    spaced += 1;
                    continue;
                }
                filling = true;
            }
            check(w[1] == route.goal(), format!("route {r}: fill point is not the goal"))?;
        }
    }
    check(worst_pos < 1e-6 && worst_gap < 1e-6, format!("position error {worst_pos:.2e}, spacing error {worst_gap:.2e}"))?;
    Ok(format!("1000 routes, {spaced} spaced pairs, spacing error {worst_gap:.1e}, oracle distance {worst_pos:.1e}"))
}

fn dijkstra(g: &Graph, s: usize, t: usize) -> Option<f64> {
    let n = g.positions.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[s] = 0.0;
    loop {
        let Some(u) = (0..n).filter(|&v| !done[v] && dist[v].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b])) else { break };
        done[u] = true;
        for &(v, c, _) in &g.adj[u] {
            dist[v] = dist[v].min(dist[u] + c);
        }
    }
    dist[t].is_finite().then_some(dist[t])
}

fn planner_optimality() -> Outcome_ {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut reachable = 0;
    for i in 0..1000 {
        let n = rng.gen_range(2..=200);
        let pos: Vec<Vec2> = (0..n).map(|_| Vec2::new(rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0))).collect();
        let mut g = Graph::new(pos.clone());
        for id in 0..rng.gen_range(n..=4 * n) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                g.add_edge(a, b, pos[a].dist(pos[b]) * rng.gen_range(1.0..1.6), id);
            }
        }
        let (s, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let a = astar(&g, s, t).map(|p| p.cost);
        let d = dijkstra(&g, s, t);
        check(a == d, format!("graph {i}: A* {a:?} vs Dijkstra {d:?}"))?;
        reachable += d.is_some() as usize;
    }
    Ok(format!("1000 graphs ({reachable} reachable pairs), costs identical"))
}

// ---------------------------------------------------------------- 6

fn projection() -> Outcome_ {
    let cam = CameraIntrinsics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let (mut n, mut worst): (usize, f64) = (0, 0.0);
    while n < 10_000 {
        let c = [rng.gen_range(-40.0..40.0), rng.gen_range(-20.0..20.0), rng.gen_range(0.5..60.0)];
        let p = cam.from_camera(c);
        let Some(pr) = cam.project(p) else { continue };
        let q = cam.unproject(pr.row, pr.col, pr.depth);
        worst = (0..3).map(|k| (p[k] - q[k]).abs()).fold(worst, f64::max);
        n += 1;
    }
    check(worst < 1e-9, format!("round trip error {worst:.2e}"))?;
    let near = cam.from_camera([0.3, 0.2, 5.0]);
    let far = cam.from_camera([0.6, 0.4, 10.0]);
    check(cam.project(near).unwrap().pixel() == cam.project(far).unwrap().pixel(), "test points do not share a pixel")?;
    for pts in [vec![near, far], vec![far, near]] {
        let img = assemble_ralidar(&LidarScan { points: pts, rays_hit: 1 }, &[], &cam, &RadarConfig::default());
        let (r, c) = cam.project(near).unwrap().pixel();
        check(img.pixel(r, c)[..3] == [0.3f32, 0.2, 5.0], "far point won the pixel")?;
    }
    Ok(format!("10000 points within {worst:.1e}; nearer point wins in both orders"))
}

// ---------------------------------------------------------------- 7

fn hand_map() -> TownMap {
    let nodes = vec![
        MapNode { id: 0, x: 0.0, y: -1.75 },
        MapNode { id: 1, x: 100.0, y: -1.75 },
        MapNode { id: 2, x: 100.0, y: 1.75 },
        MapNode { id: 3, x: 0.0, y: 1.75 },
    ];
    let lanes = vec![
        Lane { id: 0, from: 0, to: 1, width: 3.5, centerline: vec![Vec2::new(0.0, -1.75), Vec2::new(100.0, -1.75)] },
        Lane { id: 1, from: 2, to: 3, width: 3.5, centerline: vec![Vec2::new(100.0, 1.75), Vec2::new(0.0, 1.75)] },
    ];
    let inter = vec![Intersection {
        id: 0,
        polygon: vec![Vec2::new(40.0, -3.5), Vec2::new(50.0, -3.5), Vec2::new(50.0, 3.5), Vec2::new(40.0, 3.5)],
    }];
    TownMap::new("hand", nodes, lanes, inter, vec![], vec![Pose2D::new(0.0, -1.75, 0.0)], vec![])
}

fn hand_log(seed: u64, outcome: Outcome, ticks: &[(f64, f64, f64, f64)]) -> EpisodeLog {
    EpisodeLog {
        setup: EpisodeSetup {
            map: "hand".into(),
            start: Pose2D::new(0.0, -1.75, 0.0),
            goal: Pose2D::new(90.0, -1.75, 0.0),
            density: Density::Empty,
            density_scale: 0.1,
            condition: ConditionName::CLEAR_DAY,
            seed,
            max_ticks: 100,
        },
        outcome,
        ticks: ticks.iter().enumerate().map(|(i, &(x, y, yaw, speed))| TickLog { tick: i as u64, pose: Pose2D::new(x, y, yaw), speed }).collect(),
        collisions: Vec::new(),
        route_length: 90.0,
        error: None,
    }
}

fn metrics_oracle(desk: &Desk) -> Outcome_ {
    // limits: road 50 km/h = 13.89 m/s, intersection 20 km/h = 5.56 m/s
    let pi = std::f64::consts::PI;
    let logs = [
        (hand_log(1, Outcome::Success, &(0..10).map(|i| (i as f64, -1.75, 0.0, 10.0)).collect::<Vec<_>>()), 0, 0),
        (
            hand_log(2, Outcome::Success, &[10.0, 12.0, 14.0, 15.0, 13.9, 13.88, 14.0, 10.0].iter().enumerate().map(|(i, &v)| (10.0 + i as f64, -1.75, 0.0, v)).collect::<Vec<_>>()),
            0,
            4,
        ),
        (
            hand_log(
                3,
                Outcome::Collision,
                &[(41.0, 5.0), (42.0, 5.5), (43.0, 5.6), (44.0, 6.0), (45.0, 5.55), (46.0, 5.57), (47.0, 4.0), (48.0, 3.0), (52.0, 6.0)]
                    .iter()
                    .map(|&(x, v)| (x, -1.75, 0.0, v))
                    .collect::<Vec<_>>(),
            ),
            0,
            3,
        ),
        (
            hand_log(
                4,
                Outcome::Timeout,
                &[
                    (20.0, 1.75, 0.0, 8.0),
                    (21.0, 1.75, 0.0, 8.0),
                    (22.0, 1.75, 0.0, 8.0),
                    (23.0, -1.75, 0.0, 8.0),
                    (24.0, -1.75, 0.0, 8.0),
                    (25.0, -10.0, 0.0, 8.0),
                    (45.0, 1.75, 0.0, 4.0),
                    (30.0, -1.75, pi, 4.0),
                    (31.0, -0.05, 0.0, 4.0),
                ],
            ),
            5,
            0,
        ),
        (hand_log(5, Outcome::Timeout, &(0..4).map(|i| (60.0 + i as f64, -1.75, 0.0, 50.0 / 3.6)).collect::<Vec<_>>()), 0, 0),
    ];
    let map = hand_map();
    let limits = SpeedLimits::default();
    for (l, wl, ov) in &logs {
        let m = episode_metrics(&map, "hand", l, &limits);
        check((m.wrong_lane_ticks, m.overspeed_ticks) == (*wl, *ov), format!("log {}: got ({}, {}), hand count ({wl}, {ov})", l.setup.seed, m.wrong_lane_ticks, m.overspeed_ticks))?;
    }
    let maps = BTreeMap::from([("hand".to_string(), map)]);
    let pairs: Vec<_> = logs.iter().map(|(l, _, _)| ("hand".to_string(), l.clone())).collect();
    let t = compute_metrics(&maps, &pairs, &limits).map_err(|e| e.to_string())?.tasks.remove(0);
    check((t.sr, t.wl, t.ovsp) == (40.0, 12.5, 17.5), format!("task SR/WL/OVSP {} {} {}", t.sr, t.wl, t.ovsp))?;

    let mut cfg = desk.cfg.clone();
    cfg.out = desk.dir.path().join("crit7");
    cfg.suite.id = "expert".into();
    cfg.suite.densities = vec![Density::Regular];
    cfg.suite.policies = vec![PolicySpec::Expert { name: "expert".into() }];
    let report = commands::bench(&cfg, &[], 1).map_err(|e| e.to_string())?;
    let e = &report.metrics.tasks[0];
    check(e.episodes == 20, format!("{} expert episodes", e.episodes))?;
    check(e.wl < 1.0 && e.ovsp < 1.0, format!("expert WL {:.2}% OVSP {:.2}%", e.wl, e.ovsp))?;
    Ok(format!("5 hand logs exact; expert on {} over 20 episodes: SR {:.0}%, WL {:.2}%, OVSP {:.2}%", e.task(), e.sr, e.wl, e.ovsp))
}

// ---------------------------------------------------------------- 8, 9, 10

const DESK: &str = r#"
seed = 0
out = "out"
maps = ["grid4x4.json", "rural.json"]

[policy]
image_height = 20
image_width = 48
batch_size = 16

[collect]
episodes = 100
maps = ["grid4x4"]
densities = ["empty", "regular"]

[collect.perturbation]
rate = 0.05
max_offset = 0.3
min_ticks = 4
max_ticks = 10

[train]
epochs = 10
validate_every = 1000

[suite]
id = "desk"
maps = ["grid4x4"]
densities = ["empty"]
conditions = ["ClearDay"]
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19]
"#;

struct Desk {
    dir: tempfile::TempDir,
    cfg: RunConfig,
}

fn desk() -> Desk {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    commands::make_map(&commands::template_params(Template::Grid, 0), &d.join("grid4x4.json")).unwrap();
    commands::make_map(&commands::template_params(Template::Rural, 0), &d.join("rural.json")).unwrap();
    let cfg = RunConfig::from_toml(DESK, d).unwrap();
    Desk { dir, cfg }
}

fn train_variant(base: &RunConfig, seed: u64, ralidar: bool) -> Result<(PathBuf, f64), String> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.policy.use_ralidar = ralidar;
    cfg.train.checkpoint = format!("{}{seed}", if ralidar { "multimodal" } else { "vision" });
    let start = Instant::now();
    let s = commands::train(&cfg).map_err(|e| e.to_string())?;
    Ok((s.checkpoint, start.elapsed().as_secs_f64()))
}

fn sr(report: &SuiteReport, policy: &str) -> f64 {
    let t: Vec<_> = report.metrics.tasks.iter().filter(|t| t.policy == policy).collect();
    let eps: usize = t.iter().map(|t| t.episodes).sum();
    let wins: usize = t.iter().map(|t| t.successes).sum();
    100.0 * wins as f64 / eps as f64
}

fn closed_loop_learning(desk: &Desk, trained: &mut Option<PathBuf>) -> Outcome_ {
    let start = Instant::now();
    let (_, stats) = commands::collect(&desk.cfg, 1).map_err(|e| e.to_string())?;
    let collect_secs = start.elapsed().as_secs_f64();
    check(stats.episodes >= 100, format!("{} episodes", stats.episodes))?;
    let (ckpt, train_secs) = train_variant(&desk.cfg, 0, true)?;
    let total = collect_secs + train_secs;
    check(total <= 1800.0, format!("collect + train took {total:.0} s"))?;
    *trained = Some(ckpt.clone());

    let mut cfg = desk.cfg.clone();
    cfg.suite.policies = vec![
        PolicySpec::Checkpoint { name: "trained".into(), path: ckpt },
        PolicySpec::Untrained { name: "untrained".into(), config: cfg.policy.clone() },
    ];
    let report = commands::bench(&cfg, &[], 1).map_err(|e| e.to_string())?;
    let (t, u) = (sr(&report, "trained"), sr(&report, "untrained"));
    check(t >= 80.0 && t > u && u <= 10.0, format!("trained SR {t:.0}%, untrained SR {u:.0}%"))?;
    Ok(format!(
        "corpus {stats}; collect {collect_secs:.0} s + train {train_secs:.0} s; trained SR {t:.0}%, untrained SR {u:.0}% on 20 empty ClearDay episodes"
    ))
}

fn multimodal_trend(desk: &Desk, trained: &Option<PathBuf>) -> Outcome_ {
    let first = trained.clone().ok_or("needs the criterion 8 checkpoint")?;
    let mut policies = Vec::new();
    for seed in 0..3u64 {
        let mm = if seed == 0 { first.clone() } else { train_variant(&desk.cfg, seed, true)?.0 };
        let vo = train_variant(&desk.cfg, seed, false)?.0;
        policies.push(PolicySpec::Checkpoint { name: format!("multimodal{seed}"), path: mm });
        policies.push(PolicySpec::Checkpoint { name: format!("vision{seed}"), path: vo });
    }
    let mut cfg = desk.cfg.clone();
    cfg.suite.id = "storm".into();
    cfg.suite.maps = vec!["grid4x4".into()];
    cfg.suite.densities = vec![Density::Regular];
    cfg.suite.conditions = vec![ConditionName::STORM_DARK];
    cfg.suite.policies = policies;
    let report = commands::bench(&cfg, &[], 1).map_err(|e| e.to_string())?;
    let mut gaps = Vec::new();
    let mut lines = Vec::new();
    for seed in 0..3 {
        let (m, v) = (sr(&report, &format!("multimodal{seed}")), sr(&report, &format!("vision{seed}")));
        lines.push(format!("seed {seed}: {m:.0}% vs {v:.0}%"));
        gaps.push(m - v);
    }
    let mean = gaps.iter().sum::<f64>() / 3.0;
    let detail = format!("StormDark SR multimodal vs vision-only, {}; mean gap {mean:.1} pp", lines.join(", "));
    check(gaps.iter().all(|g| *g >= 0.0) && mean >= 10.0, detail.clone())?;
    Ok(detail)
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn dataset_bytes(root: &Path) -> Vec<u8> {
    let mut all = std::fs::read(root.join("index.json")).unwrap();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for d in dirs {
        all.extend(std::fs::read(d.join("header.json")).unwrap());
        all.extend(std::fs::read(d.join("frames.bin")).unwrap());
    }
    all
}

fn determinism(desk: &Desk, trained: &Option<PathBuf>) -> Outcome_ {
    let ckpt = trained.clone().ok_or("needs the criterion 8 checkpoint")?;
    let mut suites = 0;
    let mut files = 0;
    for (id, densities) in [("desk", vec![Density::Empty]), ("mixed", vec![Density::Empty, Density::Regular])] {
        let mut runs = Vec::new();
        for rerun in ["first", "second"] {
            let mut cfg = desk.cfg.clone();
            cfg.out = desk.dir.path().join("crit10").join(rerun);
            cfg.suite.id = id.into();
            cfg.suite.densities = densities.clone();
            cfg.suite.seeds = (0..6).collect();
            cfg.suite.policies = vec![
                PolicySpec::Expert { name: "expert".into() },
                PolicySpec::Checkpoint { name: "trained".into(), path: ckpt.clone() },
            ];
            let report = commands::bench(&cfg, &[], if rerun == "first" { 1 } else { 2 }).map_err(|e| e.to_string())?;
            runs.push(outputs(&commands::bench_dir(&cfg)));
            check(runs.last().unwrap().iter().any(|(n, _)| n.contains(&report.config_hash)), "outputs lack the config hash")?;
        }
        check(runs[0] == runs[1], format!("suite {id} outputs differ between reruns"))?;
        files += runs[0].len();
        suites += 1;
    }

    let mut small = desk.cfg.clone();
    small.collect.episodes = 12;
    small.train.max_steps = 40;
    small.train.validate_every = 20;
    let mut data = Vec::new();
    let mut ckpts = Vec::new();
    for rerun in ["a", "b"] {
        small.out = desk.dir.path().join("crit10").join(format!("data-{rerun}"));
        commands::collect(&small, 1).map_err(|e| e.to_string())?;
        data.push(dataset_bytes(&small.dataset_dir()));
        let s = commands::train(&small).map_err(|e| e.to_string())?;
        ckpts.push((std::fs::read(&s.checkpoint).unwrap(), std::fs::read(&s.loss_csv).unwrap()));
    }
    check(data[0] == data[1], "collected datasets differ")?;
    check(ckpts[0] == ckpts[1], "trained checkpoints differ")?;
    Ok(format!("{suites} suites rerun ({files} CSV/JSON files), dataset and checkpoint reruns identical"))
}

fn main() {
    let started = Instant::now();
    let desk = desk();
    let mut trained = None;
    let mut results: Vec<(usize, &str, Outcome_, f64)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome_| {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        println!("criterion {n:>2} {tag}  {name}: {detail} [{secs:.1} s]");
        results.push((n, name, r, secs));
    };
    run(1, "gradient fidelity", &mut gradient_check);
    run(2, "mixture likelihood identity", &mut gmm_identity);
    run(3, "reliability gate", &mut gate_identities);
    run(4, "local route resampling", &mut local_route_conformance);
    run(5, "planner optimality", &mut planner_optimality);
    run(6, "projection", &mut projection);
    run(7, "metrics oracle", &mut || metrics_oracle(&desk));
    run(8, "closed-loop learning", &mut || closed_loop_learning(&desk, &mut trained));
    run(9, "multimodal robustness", &mut || multimodal_trend(&desk, &trained));
    run(10, "determinism", &mut || determinism(&desk, &trained));

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed in {:.0} s", results.len() - failed.len(), results.len(), started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
