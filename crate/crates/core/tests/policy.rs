use navfuse::action::ActionTriple;
use navfuse::planner::ROUTE_FEATURES;
use navfuse::policy::checkpoint;
use navfuse::policy::gmm::{nll_loss, nll_with_grad, raw_len, MotionGmm};
use navfuse::policy::layers::sigmoid;
use navfuse::policy::network::fuse_with_logits;
use navfuse::policy::train::batch_gradients;
use navfuse::policy::{l1_loss, Policy, PolicyConfig, PolicyInput, Sample, Trainer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> PolicyConfig {
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

struct Owned {
    camera: Vec<f32>,
    ralidar: Vec<f32>,
    velocity: [f32; 2],
    route: Vec<f32>,
    expert: ActionTriple,
    motion: Vec<f32>,
}

impl Owned {
    fn random(cfg: &PolicyConfig, rng: &mut impl Rng) -> Self {
        Owned {
            camera: (0..cfg.camera_len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
            ralidar: (0..cfg.ralidar_len()).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            velocity: [rng.gen_range(0.0..12.0), rng.gen_range(-0.5..0.5)],
            route: (0..ROUTE_FEATURES).map(|_| rng.gen_range(-30.0..30.0)).collect(),
            expert: ActionTriple::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
            motion: (0..cfg.motion_len()).map(|i| if i % 2 == 0 { rng.gen_range(0.0..10.0) } else { rng.gen_range(-0.5..0.5) }).collect(),
        }
    }

    fn zeros(cfg: &PolicyConfig) -> Self {
        Owned {
            camera: vec![0.0; cfg.camera_len()],
            ralidar: vec![0.0; cfg.ralidar_len()],
            velocity: [0.0; 2],
            route: vec![0.0; ROUTE_FEATURES],
            expert: ActionTriple::IDLE,
            motion: vec![0.0; cfg.motion_len()],
        }
    }

    fn input(&self) -> PolicyInput<'_> {
        PolicyInput { camera: &self.camera, ralidar: &self.ralidar, velocity: self.velocity, route: &self.route }
    }

    fn sample(&self) -> Sample<'_> {
        Sample { input: self.input(), expert: self.expert, motion: &self.motion }
    }
}

fn total_loss(p: &Policy<f64>, s: &Sample) -> f64 {
    navfuse::policy::train::evaluate(p, std::slice::from_ref(s)).unwrap().total
}

/// Spreads biases so ReLU units are not stuck exactly at zero.
fn jitter_biases(p: &mut Policy<f64>, rng: &mut impl Rng) {
    for t in p.network.tensors_mut() {
        if t.shape.len() == 1 {
            for v in t.data.iter_mut() {
                *v = rng.gen_range(-0.1..0.3);
            }
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let cfg = tiny();
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let mut p = Policy::<f64>::init(PolicyConfig { init_seed: draw, ..cfg.clone() }).unwrap();
        jitter_biases(&mut p, &mut rng);
        let data = Owned::random(&cfg, &mut rng);
        let s = data.sample();
        let (g, _) = batch_gradients(&p, &[s]).unwrap();
        let grads: Vec<Vec<f64>> = g.tensors().iter().map(|(_, t)| t.data.clone()).collect();
        let n_tensors = grads.len();
        for k in 0..n_tensors {
            let len = grads[k].len();
            let picks: Vec<usize> = if len <= 6 { (0..len).collect() } else { (0..6).map(|_| rng.gen_range(0..len)).collect() };
            for i in picks {
                let h = 1e-5;
                let orig = p.network.tensors_mut()[k].data[i];
                p.network.tensors_mut()[k].data[i] = orig + h;
                let up = total_loss(&p, &s);
                p.network.tensors_mut()[k].data[i] = orig - h;
                let down = total_loss(&p, &s);
                p.network.tensors_mut()[k].data[i] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = grads[k][i];
                // below 1e-6 the central difference itself carries ~1e-11 roundoff
                let scale = ana.abs().max(num.abs()).max(1e-6);
                let rel = (ana - num).abs() / scale;
                worst = worst.max(rel);
                assert!(rel < 1e-4, "draw {draw} tensor {k}[{i}]: analytic {ana} numeric {num} rel {rel}");
            }
        }
    }
    eprintln!("worst relative error {worst:.3e}");
}

#[test]
fn zero_inputs_zero_biases_give_zero_features() {
    let cfg = tiny();
    let mut p = Policy::<f64>::init(cfg.clone()).unwrap();
    for t in p.network.tensors_mut() {
        if t.shape.len() == 1 {
            t.fill(0.0);
        }
    }
    let x = Owned::zeros(&cfg).input().prepare::<f64>(&cfg).unwrap();
    for f in p.network.encode(&x) {
        assert!(f.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn camera_pixel_only_changes_camera_feature() {
    let cfg = tiny();
    let p = Policy::<f64>::init(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut d = Owned::random(&cfg, &mut rng);
    let a = p.network.encode(&d.input().prepare::<f64>(&cfg).unwrap());
    d.camera[5] = 1.0 - d.camera[5];
    let b = p.network.encode(&d.input().prepare::<f64>(&cfg).unwrap());
    assert_eq!(a[1], b[1]);
    assert_eq!(a[2], b[2]);
    assert_eq!(a[3], b[3]);
}

#[test]
fn attention_examples() {
    let f = [vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 3.0], vec![-1.0, 5.0]];
    let concat: Vec<f64> = f.iter().flatten().copied().collect();
    let eq = fuse_with_logits(f.clone(), concat.clone(), &[0.3; 4]);
    assert!(eq.attention.iter().all(|a| (a - 0.25).abs() < 1e-15));
    assert!((eq.fused[0] - 0.75).abs() < 1e-15 && (eq.fused[1] - 2.5).abs() < 1e-15);
    let lin = fuse_with_logits(f.clone(), concat.clone(), &[1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln()]);
    for (a, e) in lin.attention.iter().zip([0.1, 0.2, 0.3, 0.4]) {
        assert!((a - e).abs() < 1e-12);
    }
    let sat = fuse_with_logits(f.clone(), concat, &[0.0, 50.0, 0.0, 0.0]);
    assert!((sat.fused[0] - 0.0).abs() < 1e-9 && (sat.fused[1] - 2.0).abs() < 1e-9);
}

#[test]
fn zero_heads_give_neutral_outputs() {
    let cfg = tiny();
    let mut p = Policy::<f64>::init(cfg.clone()).unwrap();
    for l in p.network.action.layers.iter_mut().chain(p.network.gmm.layers.iter_mut()) {
        l.w.fill(0.0);
        l.b.fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = Owned::random(&cfg, &mut rng);
    let out = p.predict(&d.input()).unwrap();
    assert_eq!(out.action, ActionTriple::new(0.0, 0.5, 0.5));
    assert!(out.gmm.weights.iter().all(|w| (*w - 0.5).abs() < 1e-15));
    assert!(out.gmm.variances.iter().all(|v| *v == 1.0 + 1e-6));
    assert!(out.gmm.means.iter().all(|m| *m == 0.0));
}

#[test]
fn l1_examples() {
    let z = ActionTriple::IDLE;
    assert_eq!(l1_loss(&z, &z), 0.0);
    assert_eq!(l1_loss(&z, &ActionTriple::new(1.0, 1.0, 1.0)), 1.0);
    assert!((l1_loss(&ActionTriple::new(0.5, 0.0, 0.0), &ActionTriple::new(-0.5, 0.0, 0.0)) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn nll_at_mode_is_analytic() {
    let t = 30;
    let mut raw = vec![0.0f64; raw_len(1, t)];
    for (i, v) in raw[1..1 + 2 * t].iter_mut().enumerate() {
        *v = i as f64 * 0.1;
    }
    // exp(raw) + floor == 1 exactly needs raw = ln(1 - 1e-6)
    for v in raw[1 + 2 * t..].iter_mut() {
        *v = (1.0f64 - 1e-6).ln();
    }
    let g = MotionGmm::from_raw(&raw, 1, t);
    let target = g.means.clone();
    let nll = nll_loss(&g, &target);
    assert!((nll - 30.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-9, "{nll}");
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

proptest! {
    #[test]
    fn nll_matches_naive_density(raw in prop::collection::vec(-1.5f64..1.5, raw_len(2, 2)), x in prop::collection::vec(-2.0f64..2.0, 4)) {
        let g = MotionGmm::from_raw(&raw, 2, 2);
        let a = nll_loss(&g, &x);
        let b = naive_nll(&g, &x);
        prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }

    #[test]
    fn nll_permutation_invariant(raw in prop::collection::vec(-1.5f64..1.5, raw_len(2, 2)), x in prop::collection::vec(-2.0f64..2.0, 4)) {
        let k = 4;
        let mut sw = vec![raw[1], raw[0]];
        sw.extend_from_slice(&raw[2 + k..2 + 2 * k]);
        sw.extend_from_slice(&raw[2..2 + k]);
        sw.extend_from_slice(&raw[2 + 3 * k..]);
        sw.extend_from_slice(&raw[2 + 2 * k..2 + 3 * k]);
        let a = nll_loss(&MotionGmm::from_raw(&raw, 2, 2), &x);
        let b = nll_loss(&MotionGmm::from_raw(&sw, 2, 2), &x);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn head_outputs_stay_in_range(seed in 0u64..1000) {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Policy::<f64>::init(PolicyConfig { init_seed: seed, ..cfg.clone() }).unwrap();
        let d = Owned::random(&cfg, &mut rng);
        let out = p.predict(&d.input()).unwrap();
        prop_assert!(out.action.in_range());
        prop_assert!((out.gmm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.gmm.variances.iter().all(|v| *v >= 1e-6));
        prop_assert!((out.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.attention.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

#[test]
fn nll_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw: Vec<f64> = (0..raw_len(3, 4)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, g) = nll_with_grad(&raw, 3, 4, &x);
    for i in 0..raw.len() {
        let mut a = raw.clone();
        let mut b = raw.clone();
        a[i] += 1e-6;
        b[i] -= 1e-6;
        let num = (nll_with_grad(&a, 3, 4, &x).0 - nll_with_grad(&b, 3, 4, &x).0) / 2e-6;
        assert!((num - g[i]).abs() < 1e-6 * g[i].abs().max(1.0), "{i}: {num} vs {}", g[i]);
    }
}

#[test]
fn squash_bounds() {
    assert_eq!(sigmoid(0.0f64), 0.5);
    assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let cfg = PolicyConfig { learning_rate: 0.0, ..tiny() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = Owned::random(&cfg, &mut rng);
    let p = Policy::<f64>::init(cfg).unwrap();
    let mut t = Trainer::new(p.clone());
    for _ in 0..5 {
        t.train_step(&[d.sample()]).unwrap();
    }
    assert_eq!(t.policy, p);
}

#[test]
fn single_sample_overfit() {
    let cfg = PolicyConfig { learning_rate: 1e-3, ..tiny() };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = Owned::random(&cfg, &mut rng);
    let mut t = Trainer::new(Policy::<f64>::init(cfg).unwrap());
    let first = t.train_step(&[d.sample()]).unwrap().total;
    for _ in 0..499 {
        t.train_step(&[d.sample()]).unwrap();
    }
    let last = total_loss(&t.policy, &d.sample());
    assert!(last <= 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn empty_batch_rejected() {
    let mut t = Trainer::new(Policy::<f64>::init(tiny()).unwrap());
    assert!(t.train_step(&[]).is_err());
}

#[test]
fn predict_is_deterministic() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = Owned::random(&cfg, &mut rng);
    let p = Policy::<f64>::init(cfg).unwrap();
    assert_eq!(p.predict(&d.input()).unwrap(), p.predict(&d.input()).unwrap());
}

#[test]
fn shape_mismatch_is_config_error() {
    let cfg = tiny();
    let p = Policy::<f64>::init(cfg.clone()).unwrap();
    let mut d = Owned::zeros(&cfg);
    d.camera.pop();
    let err = p.predict(&d.input()).unwrap_err();
    assert!(err.is_config());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    let p32: Policy<f32> = Policy::<f64>::init(tiny()).unwrap().cast();
    checkpoint::save(&p32, serde_json::json!({"note": "x"}), &path).unwrap();
    let (back, header) = checkpoint::load::<f32>(&path).unwrap();
    assert_eq!(back, p32);
    assert_eq!(header.meta["note"], "x");
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(checkpoint::to_bytes(&back, header.meta.clone()), bytes);
}

#[test]
fn corrupt_checkpoint_rejected() {
    assert!(checkpoint::from_bytes::<f32>(b"not a checkpoint").is_err());
    let p: Policy<f32> = Policy::<f64>::init(tiny()).unwrap().cast();
    let mut bytes = checkpoint::to_bytes(&p, serde_json::Value::Null);
    bytes.truncate(bytes.len() - 3);
    assert!(checkpoint::from_bytes::<f32>(&bytes).is_err());
}

#[test]
fn desk_latency_under_ten_ms() {
    let cfg = PolicyConfig::default();
    let p: Policy<f32> = Policy::<f64>::init(cfg.clone()).unwrap().cast();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = Owned::random(&cfg, &mut rng);
    p.predict(&d.input()).unwrap();
    let n = 20;
    let t0 = std::time::Instant::now();
    for _ in 0..n {
        std::hint::black_box(p.predict(&d.input()).unwrap());
    }
    let per = t0.elapsed().as_secs_f64() / n as f64;
    eprintln!("predict latency {:.2} ms", per * 1e3);
    assert!(per < 0.010, "latency {per}");
}
