use std::collections::BTreeMap;

use navfuse::benchmark::metrics::*;
use navfuse::benchmark::suite::*;
use navfuse::expert_data::{EpisodeLog, EpisodeSetup, Outcome, TickLog};
use navfuse::policy::PolicyConfig;
use navfuse::world::templates::{grid_town, GridParams};
use navfuse::world::{ConditionName, Density, Intersection, Lane, MapNode, TownMap};
use navfuse::{Pose2D, Vec2};

/// East- and westbound lanes along y = -1.75 / +1.75 with an intersection
/// box over x in [40, 50].
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

fn setup(seed: u64) -> EpisodeSetup {
    EpisodeSetup {
        map: "hand".into(),
        start: Pose2D::new(0.0, -1.75, 0.0),
        goal: Pose2D::new(90.0, -1.75, 0.0),
        density: Density::Empty,
        density_scale: 0.1,
        condition: ConditionName::CLEAR_DAY,
        seed,
        max_ticks: 100,
    }
}

fn log(seed: u64, outcome: Outcome, ticks: &[(f64, f64, f64, f64)]) -> EpisodeLog {
    EpisodeLog {
        setup: setup(seed),
        outcome,
        ticks: ticks
            .iter()
            .enumerate()
            .map(|(i, &(x, y, yaw, speed))| TickLog { tick: i as u64, pose: Pose2D::new(x, y, yaw), speed })
            .collect(),
        collisions: Vec::new(),
        route_length: 90.0,
        error: None,
    }
}

/// (log, wrong-lane ticks, overspeed ticks), counted by hand against
/// road 13.89 m/s and intersection 5.56 m/s limits.
fn hand_logs() -> Vec<(EpisodeLog, usize, usize)> {
    let pi = std::f64::consts::PI;
    let clean: Vec<_> = (0..10).map(|i| (i as f64, -1.75, 0.0, 10.0)).collect();
    let road_speeds = [10.0, 12.0, 14.0, 15.0, 13.9, 13.88, 14.0, 10.0];
    let fast: Vec<_> = road_speeds.iter().enumerate().map(|(i, &v)| (10.0 + i as f64, -1.75, 0.0, v)).collect();
    let inter_speeds = [5.0, 5.5, 5.6, 6.0, 5.55, 5.57, 4.0, 3.0];
    let mut turn: Vec<_> = inter_speeds.iter().enumerate().map(|(i, &v)| (41.0 + i as f64, -1.75, 0.0, v)).collect();
    turn.push((52.0, -1.75, 0.0, 6.0));
    let wrong = vec![
        (20.0, 1.75, 0.0, 8.0),
        (21.0, 1.75, 0.0, 8.0),
        (22.0, 1.75, 0.0, 8.0),
        (23.0, -1.75, 0.0, 8.0),
        (24.0, -1.75, 0.0, 8.0),
        (25.0, -10.0, 0.0, 8.0),
        (45.0, 1.75, 0.0, 4.0),
        (30.0, -1.75, pi, 4.0),
        (31.0, -0.05, 0.0, 4.0),
    ];
    let at_limit: Vec<_> = (0..4).map(|i| (60.0 + i as f64, -1.75, 0.0, 50.0 / 3.6)).collect();
    vec![
        (log(1, Outcome::Success, &clean), 0, 0),
        (log(2, Outcome::Success, &fast), 0, 4),
        (log(3, Outcome::Collision, &turn), 0, 3),
        (log(4, Outcome::Timeout, &wrong), 5, 0),
        (log(5, Outcome::Timeout, &at_limit), 0, 0),
    ]
}

#[test]
fn hand_logs_score_exactly() {
    let map = hand_map();
    let limits = SpeedLimits::default();
    for (l, wl, ov) in hand_logs() {
        let m = episode_metrics(&map, "hand", &l, &limits);
        assert_eq!((m.wrong_lane_ticks, m.overspeed_ticks), (wl, ov), "seed {}", l.setup.seed);
        assert_eq!(m.wrong_lane_fraction, wl as f64 / l.ticks.len() as f64);
        assert_eq!(m.overspeed_fraction, ov as f64 / l.ticks.len() as f64);
    }
    let maps = BTreeMap::from([("hand".to_string(), map)]);
    let logs: Vec<_> = hand_logs().into_iter().map(|(l, _, _)| ("hand".to_string(), l)).collect();
    let report = compute_metrics(&maps, &logs, &limits).unwrap();
    assert_eq!(report.tasks.len(), 1);
    let t = &report.tasks[0];
    assert_eq!((t.episodes, t.successes), (5, 2));
    assert_eq!(t.sr, 40.0);
    assert_eq!(t.wl, 12.5);
    assert_eq!(t.ovsp, 17.5);
}

#[test]
fn region_rules_on_hand_map() {
    let map = hand_map();
    assert!(!is_wrong_lane(&map.region_of(&Pose2D::new(45.0, 1.75, 0.0))));
    assert!(is_wrong_lane(&map.region_of(&Pose2D::new(20.0, 1.75, 0.0))));
    assert!(is_wrong_lane(&map.region_of(&Pose2D::new(20.0, 9.0, 0.0))));
    assert!(!is_wrong_lane(&map.region_of(&Pose2D::new(20.0, 1.75, std::f64::consts::PI))));
    let limits = SpeedLimits::default();
    assert!(is_overspeed(&map.region_of(&Pose2D::new(45.0, 0.0, 0.0)), 5.6, &limits));
    assert!(!is_overspeed(&map.region_of(&Pose2D::new(35.0, -1.75, 0.0)), 5.6, &limits));
}

#[test]
fn unknown_map_is_a_config_error() {
    let logs = vec![("hand".to_string(), hand_logs().remove(0).0)];
    let err = compute_metrics(&BTreeMap::new(), &logs, &SpeedLimits::default()).unwrap_err();
    assert!(matches!(err, navfuse::Error::Config(_)));
}

fn small_suite() -> (BTreeMap<String, TownMap>, SuiteConfig, Vec<PolicySpec>) {
    let map = grid_town(&GridParams::default());
    let maps = BTreeMap::from([(map.name.clone(), map)]);
    let cfg = SuiteConfig {
        id: "t".into(),
        maps: vec!["grid4x4".into()],
        densities: vec![Density::Empty, Density::Regular],
        conditions: vec![ConditionName::CLEAR_DAY],
        seeds: (0..3).collect(),
        ..SuiteConfig::default()
    };
    let untrained = PolicyConfig { image_height: 10, image_width: 24, feature_dim: 16, conv_channels: vec![4, 4, 4], ..PolicyConfig::default() };
    let policies = vec![
        PolicySpec::Expert { name: "expert".into() },
        PolicySpec::Untrained { name: "untrained".into(), config: untrained },
    ];
    (maps, cfg, policies)
}

fn read_outputs(report: &SuiteReport) -> Vec<(String, Vec<u8>)> {
    report.files.iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap())).collect()
}

#[test]
fn suite_reruns_resume_and_recompute_identically() {
    let (maps, cfg, policies) = small_suite();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_suite(&maps, &cfg, &policies, a.path(), 1).unwrap();
    let expert = first.task("expert", "grid4x4", Density::Empty, ConditionName::CLEAR_DAY).unwrap();
    assert_eq!(expert.sr, 100.0);
    let untrained = first.task("untrained", "grid4x4", Density::Empty, ConditionName::CLEAR_DAY).unwrap();
    assert_eq!(untrained.sr, 0.0);
    for f in read_outputs(&first).iter().filter(|f| f.0.ends_with(".csv")) {
        assert!(String::from_utf8_lossy(&f.1).starts_with(&format!("# suite t config {}", first.config_hash)));
    }

    let other = run_suite(&maps, &cfg, &policies, b.path(), 2).unwrap();
    assert_eq!(read_outputs(&first), read_outputs(&other));

    // drop one artifact; the rerun recomputes only it and lands on the same bytes
    let victim = artifact_path(a.path(), &first.config_hash, "expert", &first.logs[0].1.setup.key());
    std::fs::remove_file(&victim).unwrap();
    let resumed = run_suite(&maps, &cfg, &policies, a.path(), 1).unwrap();
    assert!(victim.is_file());
    assert_eq!(read_outputs(&first), read_outputs(&resumed));

    let again = recompute_reports(&maps, a.path(), "t").unwrap();
    assert_eq!(read_outputs(&first), read_outputs(&again));
}

#[test]
fn config_change_moves_artifacts() {
    let (maps, mut cfg, policies) = small_suite();
    cfg.seeds = vec![0];
    cfg.densities = vec![Density::Empty];
    let dir = tempfile::tempdir().unwrap();
    let a = run_suite(&maps, &cfg, &policies[..1], dir.path(), 1).unwrap();
    cfg.time_limit_factor = 4.0;
    let b = run_suite(&maps, &cfg, &policies[..1], dir.path(), 1).unwrap();
    assert_ne!(a.config_hash, b.config_hash);
    assert!(dir.path().join("episodes").join(&a.config_hash).is_dir());
    assert!(dir.path().join("episodes").join(&b.config_hash).is_dir());
}

#[test]
fn missing_checkpoint_fails_before_running() {
    let (maps, cfg, _) = small_suite();
    let dir = tempfile::tempdir().unwrap();
    let policies = vec![PolicySpec::Checkpoint { name: "net".into(), path: dir.path().join("absent.ckpt") }];
    let err = run_suite(&maps, &cfg, &policies, dir.path(), 1).unwrap_err();
    assert!(matches!(err, navfuse::Error::MissingArtifacts(_)));
    assert!(!dir.path().join("episodes").exists());
}
