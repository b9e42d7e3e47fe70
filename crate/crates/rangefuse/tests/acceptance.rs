//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
//! below. Runs as a plain binary so the lines are printed unconditionally.
//! `RANGEFUSE_ACCEPT=1,4,9` restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use rangefuse::cli::{build_scene, simulate_dataset};
use rangefuse::config::RunConfig;
use rangefuse_core::dataset::Dataset;
use rangefuse_core::geom::{EulerAngles, Pose, Rotation, Vec3};
use rangefuse_core::lsq::{centroid_guess, solve_pose_lm, LmOptions, RangeObs};
use rangefuse_core::nn::{grad_check, Activation, Conv1d, Edge, GatLayer, GraphTopology, Gru, Mlp, ParamStore, Tape, Tensor, Var, FD_STEP};
use rangefuse_core::nominal::{frame_from_anchors, FrameTracker, NominalFrame};
use rangefuse_core::odom::{build_graph, ranging_forward, run_odometry, EstimatorMode, ModelConfig, OdomNet, OdometryConfig, PosePrior, PriorSource};
use rangefuse_core::sensor::{RangeMeasurement, Scene};
use rangefuse_core::simulate::{preset_scene, stream_rng, MaskWindow, NoiseModel, Preset};
use rangefuse_core::train::{challenge_eval, ChallengeSplit, relative_loss, absolute_loss, sequence_loss, total_loss, train, ChallengeKind, LossConfig, TrainConfig, TrainSequence};
use rangefuse_core::{train::ape, Result as CoreResult};

const FD_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-3;
const LS_EXACT_TOL: f64 = 1e-6;
const LS_ORACLE_BAND: f64 = 0.2;
const NOMINAL_TOL: f64 = 1e-9;
const TUNNEL_BOUND: f64 = 60.0;
const BIAS_MEAN: f64 = 0.18;
const BIAS_MEAN_TOL: f64 = 0.06;
const ULSG_VS_ULS: f64 = 0.7;
const ULS_ENVELOPE_MIN: f64 = 1.3;
const IR_ULSG_ENVELOPE_MAX: f64 = 1.2;
const MISSING_MAX: f64 = 2.0;
const QUICK_LIMIT: Duration = Duration::from_secs(60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let mut o = f();
    let dt = t0.elapsed();
    o.detail.push_str(&format!("; {:.1}s", dt.as_secs_f64()));
    if let Some(l) = limit {
        if dt > l {
            o.pass = false;
            o.detail.push_str(&format!(" exceeds {}s", l.as_secs()));
        }
    }
    o
}

// ---------------------------------------------------------------- #1

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn contract(tape: &mut Tape, y: Var, seed: u64) -> CoreResult<Var> {
    let (r, c) = tape.shape(y);
    let w = random(&mut stream_rng(seed, 7), r, c);
    let w = tape.constant(&w)?;
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn fd<F>(store: &mut ParamStore, f: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> CoreResult<Var>,
{
    let rep = grad_check(store, f, FD_STEP, FD_FLOOR).expect("grad check");
    assert!(rep.checked > 0);
    rep.max_rel_error
}

fn micro_model() -> ModelConfig {
    ModelConfig { hidden: 6, gat_heads: 2, gat_head_dim: 3, gat_layers: 2, gru_hidden: 4, gru_layers: 2, conv_channels: [3, 4], feat_dim: 3, imu_window: 8, ..Default::default() }
}

fn criterion_gradients() -> Outcome {
    let mut rng = stream_rng(11, 0);
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let mut s = ParamStore::new();
    let conv = Conv1d::init(&mut s, &mut rng, "conv", 3, 4, 3).unwrap();
    s.insert("x", random(&mut rng, 3, 9)).unwrap();
    worst.push(("conv1d", fd(&mut s, |t, s| {
        let x = t.param(s, "x")?;
        let y = conv.forward(t, s, x)?;
        contract(t, y, 1)
    })));

    let mut s = ParamStore::new();
    let gru = Gru::init(&mut s, &mut rng, "gru", 3, 5).unwrap();
    s.insert("x", random(&mut rng, 1, 3)).unwrap();
    s.insert("h", random(&mut rng, 1, 5)).unwrap();
    worst.push(("gru step", fd(&mut s, |t, s| {
        let x = t.param(s, "x")?;
        let h = t.param(s, "h")?;
        let y = gru.step(t, s, x, h)?;
        contract(t, y, 2)
    })));

    let topo = {
        let mut edges = Vec::new();
        for (a, b, k) in [(0, 2, 0), (1, 2, 0), (1, 3, 0), (2, 4, 1), (3, 4, 1)] {
            edges.push(Edge { src: a, dst: b, kind: k });
            edges.push(Edge { src: b, dst: a, kind: k + 2 });
        }
        edges.extend((0..5).map(|i| Edge { src: i, dst: i, kind: 4 }));
        GraphTopology::new(vec![0, 0, 1, 1, 2], edges).unwrap()
    };
    let mut s = ParamStore::new();
    let gat = GatLayer::init(&mut s, &mut rng, "gat", 4, 2, 3, 3, 5, true).unwrap();
    s.insert("x", random(&mut rng, 5, 4)).unwrap();
    worst.push(("gat layer", fd(&mut s, |t, s| {
        let x = t.param(s, "x")?;
        let y = gat.forward(t, s, x, &topo)?;
        contract(t, y, 3)
    })));

    let mut s = ParamStore::new();
    let mlp = Mlp::init(&mut s, &mut rng, "mlp", &[4, 7, 3], Activation::Elu).unwrap();
    s.insert("x", random(&mut rng, 2, 4)).unwrap();
    worst.push(("mlp", fd(&mut s, |t, s| {
        let x = t.param(s, "x")?;
        let y = mlp.forward(t, s, x)?;
        contract(t, y, 4)
    })));

    // Losses end to end: four epochs give three predicted poses.
    let (scene, profile) = preset_scene(Preset::Indoor);
    let traj = rangefuse_core::simulate::build_trajectory(&profile.with_duration(0.3)).unwrap();
    let ds = rangefuse_core::simulate::simulate_sensors(&traj, &scene, &NoiseModel { gaussian_sigma: 0.03, ..NoiseModel::zero(4) }, &Default::default()).unwrap();
    assert_eq!(ds.epochs().len(), 4);
    let seq = TrainSequence { dataset: &ds, scene: &scene };
    let config = TrainConfig { model: micro_model(), ..Default::default() };
    for (mode, forced, label) in [(EstimatorMode::IrUlsg, false, "loss IR_ULSG"), (EstimatorMode::Ug, false, "loss UG")] {
        let mut net = OdomNet::new(micro_model(), 9).unwrap();
        let frozen = net.clone();
        let e = fd(&mut net.store, |t, s| sequence_loss(t, &frozen, s, mode, &seq, &config, forced));
        worst.push((label, e));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let list: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(max <= FD_TOL, format!("max rel err {max:.2e} <= {FD_TOL:.0e} [{}]", list.join(", ")))
}

// ---------------------------------------------------------------- #2

fn range_cost(x: &[f64; 6], rows: &[(Vec3, Vec3, f64)]) -> f64 {
    let pose = Pose::new(Rotation::from_euler(EulerAngles::new(x[3], x[4], x[5])), Vec3::new(x[0], x[1], x[2]));
    rows.iter().map(|(tag, anchor, d)| ((pose.transform_point(*tag) - *anchor).norm() - d).powi(2)).sum()
}

/// Global grid over position and yaw, then axis-wise grid refinement with a
/// shrinking step. Shares nothing with the LM solver but the cost.
fn grid_oracle(rows: &[(Vec3, Vec3, f64)], lo: Vec3, hi: Vec3) -> [f64; 6] {
    let mut best = ([0.0; 6], f64::INFINITY);
    let n = [9, 9, 5];
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                for y in 0..16 {
                    let f = |a: f64, b: f64, i: usize, n: usize| a + (b - a) * i as f64 / (n - 1) as f64;
                    let x = [f(lo.x, hi.x, i, n[0]), f(lo.y, hi.y, j, n[1]), f(lo.z, hi.z, k, n[2]), 0.0, 0.0, -3.0 + 0.375 * y as f64];
                    let c = range_cost(&x, rows);
                    if c < best.1 {
                        best = (x, c);
                    }
                }
            }
        }
    }
    let (mut x, mut c) = best;
    let mut step = [0.5, 0.5, 0.5, 0.2, 0.2, 0.2];
    while step[0] > 1e-9 {
        let mut moved = false;
        for d in 0..6 {
            for s in [-1.0, 1.0] {
                let mut cand = x;
                cand[d] += s * step[d];
                let cc = range_cost(&cand, rows);
                if cc < c {
                    (x, c, moved) = (cand, cc, true);
                }
            }
        }
        if !moved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    x
}

fn criterion_ls_oracle() -> Outcome {
    let (scene, profile) = preset_scene(Preset::Indoor);
    let traj = rangefuse_core::simulate::build_trajectory(&profile.with_duration(50.0)).unwrap();
    let clean = rangefuse_core::simulate::simulate_sensors(&traj, &scene, &NoiseModel::zero(1), &Default::default()).unwrap();
    let out = run_odometry(&clean, &scene, EstimatorMode::Uls, None, &OdometryConfig::default()).unwrap();
    let gt = clean.ground_truth();
    let exact = out.trajectory.iter().zip(&gt[1..]).map(|(p, g)| (p.pose.trans - g.pose.trans).norm()).fold(0.0, f64::max);
    let n_exact = out.trajectory.len();

    let noisy = rangefuse_core::simulate::simulate_sensors(&traj, &scene, &NoiseModel { gaussian_sigma: 0.05, ..NoiseModel::zero(2) }, &Default::default()).unwrap();
    let epochs = noisy.epochs();
    let (lo, hi) = scene.anchors.values().fold((Vec3::new(1e9, 1e9, 1e9), Vec3::new(-1e9, -1e9, -1e9)), |(lo, hi), a| {
        (Vec3::new(lo.x.min(a.x), lo.y.min(a.y), lo.z.min(a.z)), Vec3::new(hi.x.max(a.x), hi.y.max(a.y), hi.z.max(a.z)))
    });
    let (mut se_lm, mut se_or) = (0.0, 0.0);
    let picks: Vec<usize> = (0..50).map(|i| 1 + i * (epochs.len() - 1) / 50).collect();
    for &k in &picks {
        let e = &epochs[k];
        let obs: Vec<RangeObs> = e.ranges.iter().map(|r| RangeObs { tag_id: r.tag_id, anchor_id: r.anchor_id, d: r.d }).collect();
        let (lm, _) = solve_pose_lm(&obs, &scene, centroid_guess(&scene), &LmOptions::default()).unwrap();
        let rows: Vec<(Vec3, Vec3, f64)> = e.ranges.iter().map(|r| (scene.tags[&r.tag_id], scene.anchors[&r.anchor_id], r.d)).collect();
        let or = grid_oracle(&rows, lo, hi);
        let g = e.gt.unwrap().trans;
        se_lm += (lm.x - g.x).powi(2) + (lm.y - g.y).powi(2);
        se_or += (or[0] - g.x).powi(2) + (or[1] - g.y).powi(2);
    }
    let (rm_lm, rm_or) = ((se_lm / 50.0).sqrt(), (se_or / 50.0).sqrt());
    let ratio = rm_lm / rm_or;
    let pass = exact < LS_EXACT_TOL && n_exact == 500 && (ratio - 1.0).abs() <= LS_ORACLE_BAND;
    outcome(
        pass,
        format!("zero-noise max err {exact:.1e} m over {n_exact} epochs (< {LS_EXACT_TOL:.0e}); noisy xy rmse LM {rm_lm:.4} vs grid oracle {rm_or:.4}, ratio {ratio:.3} (within ±{LS_ORACLE_BAND})"),
    )
}

// ---------------------------------------------------------------- #3

fn criterion_nominal() -> Outcome {
    let (scene, profile) = preset_scene(Preset::Outdoor);
    let traj = rangefuse_core::simulate::build_trajectory(&profile.with_duration(20.0)).unwrap();
    let poses: Vec<Pose> = rangefuse_core::simulate::sample_trajectory(&traj, 0.1).iter().map(|s| s.pose).collect();
    let anchors: Vec<_> = scene.anchors.iter().map(|(id, p)| (*id, *p)).collect();
    let mut rng = stream_rng(3, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = Pose::new(
            Rotation::from_euler(EulerAngles::new(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0))),
            Vec3::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3), rng.random_range(-50.0..50.0)),
        );
        let moved: Vec<_> = anchors.iter().map(|(id, p)| (*id, g.transform_point(*p))).collect();
        let (f0, f1) = (frame_from_anchors(&anchors), frame_from_anchors(&moved));
        for p in &poses {
            let a = f0.to_nominal(p);
            let b = f1.to_nominal(&g.compose(p));
            worst = worst.max((a.trans - b.trans).norm());
        }
    }

    let (scene, profile) = preset_scene(Preset::Tunnel);
    let traj = rangefuse_core::simulate::build_trajectory(&profile).unwrap();
    let samples = rangefuse_core::simulate::sample_trajectory(&traj, 0.1);
    let all: Vec<_> = scene.anchors.iter().map(|(id, p)| (*id, *p)).collect();
    let cfg = OdometryConfig::default();
    let mut tracker = FrameTracker::new(cfg.radius, cfg.hysteresis);
    let (mut n_max, mut xmin, mut xmax): (f64, f64, f64) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for s in &samples {
        let p = s.pose.trans;
        let seen: Vec<_> = all.iter().copied().filter(|(_, a)| (*a - p).norm() <= 40.0).collect();
        tracker.update(&seen, p, s.t);
        let f: &NominalFrame = tracker.active().unwrap();
        let n = f.to_nominal(&s.pose).trans;
        n_max = n_max.max(n.x.abs()).max(n.y.abs()).max(n.z.abs());
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
    }
    let span = xmax - xmin;
    let pass = worst < NOMINAL_TOL && n_max <= TUNNEL_BOUND && span >= 300.0;
    outcome(
        pass,
        format!("rigid-transform change {worst:.1e} m (< {NOMINAL_TOL:.0e}); tunnel |N| max {n_max:.1} m (<= {TUNNEL_BOUND}) over a {span:.0} m world span, {} frames", tracker.frame_id() + 1),
    )
}

// ---------------------------------------------------------------- #4

fn criterion_graph() -> Outcome {
    let (scene, _) = preset_scene(Preset::Indoor);
    let net = OdomNet::new(micro_model(), 5).unwrap();
    let frame = frame_from_anchors(&scene.anchors.iter().map(|(i, p)| (*i, *p)).collect::<Vec<_>>());
    let prior = PosePrior { pose_n: Pose::from_vector6([0.2, -0.1, 1.0, 0.0, 0.0, 0.4]), source: PriorSource::PreviousEstimate };
    let mut rng = stream_rng(8, 0);
    let mut ranges = Vec::new();
    for a in 0..8u32 {
        for t in 0..3u32 {
            if (a + t) % 4 != 0 {
                ranges.push(RangeMeasurement { t: 0.0, tag_id: t, anchor_id: a, d: rng.random_range(1.0..5.0) });
            }
        }
    }
    let base = ranging_forward(&build_graph(&ranges, &scene, &frame, &prior, None, None).unwrap(), &net).unwrap();
    let mut identical = true;
    for _ in 0..20 {
        let mut shuffled = ranges.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let p = ranging_forward(&build_graph(&shuffled, &scene, &frame, &prior, None, None).unwrap(), &net).unwrap();
        identical &= p.to_vector6().iter().zip(base.to_vector6()).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let mut finite = true;
    for a in 0..8u32 {
        for tags in [vec![0u32], vec![0, 1, 2]] {
            let r: Vec<_> = tags.iter().map(|&t| RangeMeasurement { t: 0.0, tag_id: t, anchor_id: a, d: 2.5 }).collect();
            let p = ranging_forward(&build_graph(&r, &scene, &frame, &prior, None, None).unwrap(), &net).unwrap();
            finite &= p.is_finite();
        }
    }

    let mut dup_ok = true;
    for keep in 1..=3u32 {
        let r: Vec<_> = ranges.iter().copied().filter(|m| m.tag_id < keep).collect();
        let g = build_graph(&r, &scene, &frame, &prior, None, None).unwrap();
        let pairs: BTreeSet<(u32, u32)> = r.iter().map(|m| (m.anchor_id, m.tag_id)).collect();
        let m_of = |a: u32| pairs.iter().filter(|p| p.0 == a).count();
        let anchors: BTreeSet<u32> = pairs.iter().map(|p| p.0).collect();
        let expected: usize = anchors.iter().map(|&a| m_of(a)).sum();
        dup_ok &= g.anchor_nodes.len() == expected && expected == pairs.len();
    }
    outcome(
        identical && finite && dup_ok,
        format!("permutations bit-identical {identical}; single-anchor finite {finite}; anchor nodes = sum of per-anchor tag counts {dup_ok}"),
    )
}

// ---------------------------------------------------------------- training helpers

fn model(hidden: usize) -> ModelConfig {
    ModelConfig { hidden, gat_heads: 2, gat_head_dim: hidden / 2, gat_layers: 2, gru_hidden: 32, feat_dim: 16, conv_channels: [8, 16], ..Default::default() }
}

fn run_config(preset: Preset, seed: u64, epochs: usize, lr: f64, dropout: f64) -> RunConfig {
    let mut cfg = RunConfig { seed, preset: preset.as_str().into(), ..Default::default() };
    cfg.model = model(32).into();
    cfg.train.epochs = epochs;
    cfg.train.pretrain_epochs = 10;
    cfg.train.lr = lr;
    cfg.train.anchor_dropout = dropout;
    cfg.loss.teacher_forcing_end_epoch = epochs / 2;
    cfg
}

/// Held-out trajectory variants; errors are pooled over all of them because a
/// single run's segment ratio varies by tens of percent with the noise draw.
const TEST_VARIANTS: [u64; 4] = [0, 11, 12, 13];

/// Shared scene plus `n` training sequences (variants 1..=n) and the
/// held-out variants over the preset's full duration.
fn datasets(cfg: &RunConfig, n: u64, duration: f64, test_masks: &[&str]) -> (Scene, Vec<Dataset>, Vec<Dataset>) {
    let scene = build_scene(cfg).unwrap();
    let train: Vec<Dataset> = (1..=n)
        .map(|v| {
            let mut c = cfg.clone();
            c.simulation.variant = v;
            c.simulation.duration = Some(duration);
            simulate_dataset(&c, &scene).unwrap()
        })
        .collect();
    let test = TEST_VARIANTS
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            c.simulation.variant = v;
            c.simulation.masks = test_masks.iter().map(|s| s.to_string()).collect();
            simulate_dataset(&c, &scene).unwrap()
        })
        .collect();
    (scene, train, test)
}

/// Sample-weighted RMS of per-run RMSE values.
fn pool(parts: impl IntoIterator<Item = (f64, usize)>) -> f64 {
    let (sum, n) = parts.into_iter().fold((0.0, 0usize), |(s, n), (r, k)| (s + r * r * k as f64, n + k));
    (sum / n as f64).sqrt()
}

/// Pooled xyz RMSE of both challenge segments over the test runs.
fn pooled_split(tests: &[Dataset], scene: &Scene, kind: &ChallengeKind, mode: EstimatorMode, net: Option<&OdomNet>, oc: &OdometryConfig) -> [f64; 2] {
    let splits: Vec<ChallengeSplit> = tests
        .iter()
        .map(|t| {
            let out = run_odometry(t, scene, mode, net, oc).unwrap();
            challenge_eval(kind, &out.trajectory, &t.ground_truth(), scene, 10.0).unwrap()
        })
        .collect();
    core::array::from_fn(|i| pool(splits.iter().filter_map(|s| s.segments[i].as_ref()).map(|a| (a.rmse_xyz, a.len()))))
}

fn fit(cfg: &RunConfig, scene: &Scene, train_ds: &[Dataset], mode: EstimatorMode) -> OdomNet {
    let seqs: Vec<TrainSequence> = train_ds.iter().map(|d| TrainSequence { dataset: d, scene }).collect();
    train(&seqs, mode, &cfg.train_config(), cfg.seed).unwrap().net
}

// ---------------------------------------------------------------- #5

fn criterion_bias_learning() -> Outcome {
    let cfg = run_config(Preset::Indoor, 7, 100, 0.003, 0.0);
    let (scene, train_ds, tests) = datasets(&cfg, 3, 40.0, &[]);
    let mean_bias = scene.bias.values().sum::<f64>() / scene.bias.len() as f64;
    let net = fit(&cfg, &scene, &train_ds, EstimatorMode::Ulsg);
    let oc = cfg.odometry_config();
    let xy = |mode, net| {
        pool(tests.iter().map(|t| {
            let a = ape(&run_odometry(t, &scene, mode, net, &oc).unwrap().trajectory, &t.ground_truth(), 10.0).unwrap();
            (a.rmse_xy, a.len())
        }))
    };
    let (uls, ulsg) = (xy(EstimatorMode::Uls, None), xy(EstimatorMode::Ulsg, Some(&net)));
    let ratio = ulsg / uls;
    let pass = ratio <= ULSG_VS_ULS && (mean_bias - BIAS_MEAN).abs() <= BIAS_MEAN_TOL;
    outcome(
        pass,
        format!("mean bias {mean_bias:.3} m; held-out xy rmse ULSG {ulsg:.3} vs ULS {uls:.3}, ratio {ratio:.2} (<= {ULSG_VS_ULS})"),
    )
}

// ---------------------------------------------------------------- #6

fn criterion_envelope() -> Outcome {
    let cfg = run_config(Preset::Outdoor, 7, 400, 0.005, 0.0);
    let (scene, train_ds, tests) = datasets(&cfg, 5, 60.0, &[]);
    let net = fit(&cfg, &scene, &train_ds, EstimatorMode::IrUlsg);
    let oc = cfg.odometry_config();
    // Segment 0 is inside the hull, segment 1 outside.
    let uls = pooled_split(&tests, &scene, &ChallengeKind::Envelope, EstimatorMode::Uls, None, &oc);
    let ours = pooled_split(&tests, &scene, &ChallengeKind::Envelope, EstimatorMode::IrUlsg, Some(&net), &oc);
    let (ru, ro) = (uls[1] / uls[0], ours[1] / ours[0]);
    outcome(
        ru >= ULS_ENVELOPE_MIN && ro <= IR_ULSG_ENVELOPE_MAX,
        format!(
            "outside/inside xyz over {} runs: ULS {ru:.2} (>= {ULS_ENVELOPE_MIN}; {:.3}/{:.3} m), IR_ULSG {ro:.2} (<= {IR_ULSG_ENVELOPE_MAX}; {:.3}/{:.3} m)",
            tests.len(),
            uls[1],
            uls[0],
            ours[1],
            ours[0]
        ),
    )
}

// ---------------------------------------------------------------- #7

fn criterion_anchor_missing() -> Outcome {
    let masks = ["20:30:0.5", "45:55:0.5"];
    let cfg = run_config(Preset::Tunnel, 7, 100, 0.005, 0.3);
    let (scene, train_ds, tests) = datasets(&cfg, 4, 60.0, &masks);
    let net = fit(&cfg, &scene, &train_ds, EstimatorMode::IrUlsg);
    let windows: Vec<MaskWindow> = masks.iter().map(|m| m.parse().unwrap()).collect();
    let oc = cfg.odometry_config();
    let split = pooled_split(&tests, &scene, &ChallengeKind::AnchorMissing(windows), EstimatorMode::IrUlsg, Some(&net), &oc);
    let ratio = split[1] / split[0];
    let test = &tests[0];

    // Single anchor: keep one anchor id per epoch.
    let single = Dataset::new(
        test.records
            .iter()
            .filter(|r| match r {
                rangefuse_core::sensor::Record::Range(m) => m.anchor_id == test.ranges().filter(|x| x.t == m.t).map(|x| x.anchor_id).min().unwrap(),
                _ => true,
            })
            .cloned()
            .collect(),
    );
    let one = run_odometry(&single, &scene, EstimatorMode::IrUlsg, Some(&net), &oc).unwrap();
    let finite = one.trajectory.iter().all(|p| p.pose.is_finite());
    outcome(
        ratio <= MISSING_MAX && finite,
        format!(
            "IR_ULSG xyz rmse over {} runs: normal {:.3} m, missing {:.3} m, ratio {ratio:.2} (<= {MISSING_MAX}); single-anchor run finite {finite}",
            tests.len(),
            split[0],
            split[1]
        ),
    )
}

// ---------------------------------------------------------------- #8

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(
        &cfg_path,
        "seed = 21\npreset = \"indoor\"\nmodes = [\"ULS\", \"IR_ULSG\"]\n[simulation]\nduration = 4.0\n\
         [model]\nhidden = 6\ngat_heads = 2\ngat_head_dim = 3\ngat_layers = 1\ngru_hidden = 4\ngru_layers = 1\nconv_channels = [3, 4]\nfeat_dim = 3\nimu_window = 8\n\
         [train]\nepochs = 3\npretrain_epochs = 1\n[loss]\nbptt_len = 10\nteacher_forcing_end_epoch = 2\n",
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_rangefuse");
    let run = |args: &[&str]| {
        let o = Command::new(bin).args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stdout));
    };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let c = s(&cfg_path);
        run(&["simulate", "--config", &c, "--out", &s(&out)]);
        let ds = s(&out.join("dataset.jsonl"));
        run(&["train", "--config", &c, "--mode", "IR_ULSG", "--dataset", &ds, "--out", &s(&out)]);
        run(&["eval", "--config", &c, "--dataset", &ds, "--checkpoint", &s(&out.join("checkpoint.bin")), "--out", &s(&out)]);
        files.push(out);
    }
    let names = ["dataset.jsonl", "scene.json", "checkpoint.bin", "train_log.csv", "trajectory_ULS.csv", "trajectory_IR_ULSG.csv", "metrics.json"];
    let differing: Vec<&str> = names.iter().copied().filter(|n| fs::read(files[0].join(n)).unwrap() != fs::read(files[1].join(n)).unwrap()).collect();
    outcome(differing.is_empty(), format!("{} artifacts compared across two simulate/train/eval runs; differing: {differing:?}", names.len()))
}

// ---------------------------------------------------------------- #9

fn criterion_loss_algebra() -> Outcome {
    let cfg = LossConfig { lambda_rel: 1.0, ..Default::default() };
    let mut rng = stream_rng(17, 0);
    let mut bitwise = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..20);
        let mut rows = || (0..n).map(|_| core::array::from_fn(|_| rng.random_range(-4.0..4.0))).collect::<Vec<[f64; 6]>>();
        let (a, b, c, d) = (rows(), rows(), rows(), rows());
        let rel = relative_loss(&a, &b, &cfg).unwrap();
        let abs = absolute_loss(&c, &d, &cfg).unwrap();
        bitwise &= total_loss(rel, abs, &cfg).to_bits() == (rel + abs).to_bits();
    }

    let (scene, profile) = preset_scene(Preset::Indoor);
    let traj = rangefuse_core::simulate::build_trajectory(&profile.with_duration(20.0)).unwrap();
    let ds = rangefuse_core::simulate::simulate_sensors(&traj, &scene, &NoiseModel { gaussian_sigma: 0.05, dropout_prob: 0.3, ..NoiseModel::zero(3) }, &Default::default()).unwrap();
    let net = OdomNet::new(micro_model(), 2).unwrap();
    let mut identity = true;
    let mut steps = 0;
    for mode in [EstimatorMode::Ug, EstimatorMode::Ulsg] {
        let out = run_odometry(&ds, &scene, mode, Some(&net), &OdometryConfig::default()).unwrap();
        for w in out.log.windows(2) {
            if w[1].frame_switched {
                continue;
            }
            identity &= w[1].prior_n.iter().zip(&w[0].estimate_n).all(|(a, b)| a.to_bits() == b.to_bits());
            steps += 1;
        }
    }
    outcome(bitwise && identity, format!("total == rel + abs bitwise over 1000 draws {bitwise}; prior == previous estimate over {steps} UG/ULSG steps {identity}"))
}

// ---------------------------------------------------------------- driver

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a filter are accepted and ignored.
    let only: Option<BTreeSet<u32>> = std::env::var("RANGEFUSE_ACCEPT").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 9] = [
        (1, "gradient gate", Some(QUICK_LIMIT), criterion_gradients),
        (2, "LS oracle", Some(QUICK_LIMIT), criterion_ls_oracle),
        (3, "nominal-frame invariance", Some(QUICK_LIMIT), criterion_nominal),
        (4, "graph invariances", Some(QUICK_LIMIT), criterion_graph),
        (5, "bias learning (indoor)", Some(Duration::from_secs(15 * 60)), criterion_bias_learning),
        (6, "envelope (outdoor)", Some(Duration::from_secs(20 * 60)), criterion_envelope),
        (7, "anchor missing (tunnel)", Some(Duration::from_secs(30 * 60)), criterion_anchor_missing),
        (8, "determinism", None, criterion_determinism),
        (9, "loss algebra and prior identity", None, criterion_loss_algebra),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = timed(limit, f);
        println!("[{}] #{id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
