//! Deterministic scene, trajectory and sensor generation.
//!
//! Randomness comes from ChaCha8 seeded with the root seed; each consumer
//! draws from its own stream so adding a sensor never perturbs another:
//!
//! | stream                     | consumer                               |
//! |----------------------------|----------------------------------------|
//! | `1`                        | per-pair bias draw                     |
//! | `2`                        | IMU noise and IMU bias                 |
//! | `3`                        | trajectory variant parameters          |
//! | `4`                        | network initialisation                 |
//! | `5`                        | scheduled-sampling coin flips          |
//! | `6`                        | training-time anchor dropout           |
//! | `0x1_0000_0000 + tag << 16 + anchor` | one tag-anchor range stream  |
//! | `0x2_0000_0000 + window`   | anchor masking window                  |
//!
//! The range noise model is a stand-in for real radio behaviour: gaussian
//! noise, a constant per-pair bias, and NLOS excess delay drawn from an
//! exponential distribution.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::str::FromStr;

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geom::{EulerAngles, Pose, Rotation, Vec3};
use crate::sensor::{
    true_range, AnchorId, GroundTruthPose, ImuSample, RangeMeasurement, Record, Scene, TagId,
};

pub const STREAM_BIAS: u64 = 1;
pub const STREAM_IMU: u64 = 2;
pub const STREAM_VARIANT: u64 = 3;
pub const STREAM_INIT: u64 = 4;
pub const STREAM_SCHEDULE: u64 = 5;
pub const STREAM_DROPOUT: u64 = 6;
pub const STREAM_RANGE_BASE: u64 = 0x1_0000_0000;
pub const STREAM_MASK_BASE: u64 = 0x2_0000_0000;

pub const DEFAULT_IMU_RATE: f64 = 200.0;
pub const DEFAULT_UWB_RATE: f64 = 10.0;

/// Seeded generator for one documented stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn range_stream(tag: TagId, anchor: AnchorId) -> u64 {
    STREAM_RANGE_BASE + ((tag as u64) << 16) + anchor as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub gaussian_sigma: f64,
    /// Per-pair constant bias is drawn uniformly from `[0, bias_range]`.
    pub bias_range: f64,
    pub nlos_prob: f64,
    /// Mean of the exponential NLOS excess delay.
    pub nlos_extra: f64,
    pub dropout_prob: f64,
    pub seed: u64,
    pub accel_sigma: f64,
    pub gyro_sigma: f64,
    /// Constant accelerometer bias components are drawn from `[-b, b]`.
    pub accel_bias: f64,
    pub gyro_bias: f64,
}

impl NoiseModel {
    pub fn zero(seed: u64) -> Self {
        Self {
            gaussian_sigma: 0.0,
            bias_range: 0.0,
            nlos_prob: 0.0,
            nlos_extra: 0.0,
            dropout_prob: 0.0,
            seed,
            accel_sigma: 0.0,
            gyro_sigma: 0.0,
            accel_bias: 0.0,
            gyro_bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.nlos_prob) || !prob(self.dropout_prob) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".to_string()));
        }
        let non_neg = [
            self.gaussian_sigma,
            self.bias_range,
            self.nlos_extra,
            self.accel_sigma,
            self.gyro_sigma,
            self.accel_bias,
            self.gyro_bias,
        ];
        if non_neg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("noise magnitudes must be finite and >= 0".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    LissajousPlanar,
    Corridor3d,
    TunnelCurve,
}

impl TrajectoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryKind::LissajousPlanar => "lissajous_planar",
            TrajectoryKind::Corridor3d => "corridor_3d",
            TrajectoryKind::TunnelCurve => "tunnel_curve",
        }
    }
}

impl FromStr for TrajectoryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lissajous_planar" => Ok(Self::LissajousPlanar),
            "corridor_3d" => Ok(Self::Corridor3d),
            "tunnel_curve" => Ok(Self::TunnelCurve),
            other => Err(Error::InvalidArgument(alloc::format!("unknown trajectory kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryProfile {
    pub kind: TrajectoryKind,
    /// Size of the region covered by the motion.
    pub extent: Vec3,
    /// Centre of that region in the world frame.
    pub center: Vec3,
    pub duration: f64,
    pub speed: f64,
    /// Selects phases and frequency ratios; variant 0 is the canonical path.
    pub variant: u64,
}

impl TrajectoryProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.speed > 0.0) {
            return Err(Error::InvalidArgument("duration and speed must be positive".to_string()));
        }
        let e = self.extent;
        let planar_ok = self.kind == TrajectoryKind::LissajousPlanar && e.z >= 0.0;
        if !(e.x > 0.0 && e.y > 0.0 && (e.z > 0.0 || planar_ok)) {
            return Err(Error::InvalidArgument("extent must be positive".to_string()));
        }
        Ok(())
    }

    pub fn with_variant(mut self, variant: u64) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }
}

/// `offset + rate * t + sum(amp * sin(freq * t + phase))`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Channel {
    pub offset: f64,
    pub rate: f64,
    pub terms: Vec<(f64, f64, f64)>,
}

impl Channel {
    pub fn constant(v: f64) -> Self {
        Self { offset: v, ..Default::default() }
    }

    pub fn sine(offset: f64, amp: f64, freq: f64, phase: f64) -> Self {
        Self { offset, rate: 0.0, terms: vec![(amp, freq, phase)] }
    }

    /// Value and first two derivatives.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let mut v = self.offset + self.rate * t;
        let mut d = self.rate;
        let mut dd = 0.0;
        for &(a, w, p) in &self.terms {
            let (s, c) = (w * t + p).sin_cos();
            v += a * s;
            d += a * w * c;
            dd -= a * w * w * s;
        }
        (v, d, dd)
    }
}

/// Analytic motion: position channels `x, y, z` and attitude channels
/// `roll, pitch, yaw`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub channels: [Channel; 6],
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose,
    pub velocity: Vec3,
    pub accel_world: Vec3,
    pub omega_body: Vec3,
}

impl Trajectory {
    pub fn sample(&self, t: f64) -> TrajectorySample {
        let ev: Vec<(f64, f64, f64)> = self.channels.iter().map(|c| c.eval(t)).collect();
        let (roll, pitch, yaw) = (ev[3].0, ev[4].0, ev[5].0);
        let (dr, dp, dy) = (ev[3].1, ev[4].1, ev[5].1);
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        // Z-Y-X Euler rates to body rates.
        let omega_body = Vec3::new(dr - dy * sp, dp * cr + dy * sr * cp, -dp * sr + dy * cr * cp);
        TrajectorySample {
            t,
            pose: Pose::new(
                Rotation::from_euler(EulerAngles::new(roll, pitch, yaw)),
                Vec3::new(ev[0].0, ev[1].0, ev[2].0),
            ),
            velocity: Vec3::new(ev[0].1, ev[1].1, ev[2].1),
            accel_world: Vec3::new(ev[0].2, ev[1].2, ev[2].2),
            omega_body,
        }
    }
}

/// Tunnel centreline lateral offset at along-track coordinate `x`.
pub const TUNNEL_LENGTH: f64 = 330.0;
pub const TUNNEL_BEND: f64 = 60.0;

pub fn tunnel_centerline(x: f64) -> f64 {
    TUNNEL_BEND * (PI * x / TUNNEL_LENGTH).sin()
}

/// Builds the analytic path of a profile.
pub fn build_trajectory(profile: &TrajectoryProfile) -> Result<Trajectory> {
    profile.validate()?;
    let mut rng = stream_rng(profile.variant, STREAM_VARIANT);
    let canonical = profile.variant == 0;
    let mut jitter = |lo: f64, hi: f64, default: f64| if canonical { default } else { rng.random_range(lo..hi) };
    let c = profile.center;
    let e = profile.extent;
    let v = profile.speed;
    let channels = match profile.kind {
        TrajectoryKind::LissajousPlanar => {
            let (ax, ay) = (0.5 * e.x, 0.5 * e.y);
            let fx = jitter(0.55, 1.0, 0.8);
            let fy = jitter(0.45, 0.9, 0.6);
            let px = jitter(0.0, 2.0 * PI, 0.0);
            let py = jitter(0.0, 2.0 * PI, 0.5 * PI);
            let yaw_amp = jitter(0.4, 0.9, 0.7);
            let yaw_f = jitter(0.1, 0.3, 0.2);
            let yaw_p = jitter(0.0, 2.0 * PI, 0.0);
            [
                Channel::sine(c.x, ax, fx * v / ax, px),
                Channel::sine(c.y, ay, fy * v / ay, py),
                Channel::constant(c.z),
                Channel::constant(0.0),
                Channel::constant(0.0),
                Channel::sine(0.0, yaw_amp, yaw_f, yaw_p),
            ]
        }
        TrajectoryKind::Corridor3d => {
            // Starts at the low-x end of the corridor and sweeps along it.
            let ax = 0.5 * e.x;
            let wx = v / ax;
            let y_amp = jitter(0.25, 0.45, 0.35) * e.y;
            [
                Channel::sine(c.x, -ax, wx, 0.5 * PI),
                Channel::sine(c.y, y_amp, jitter(0.15, 0.35, 0.25), jitter(0.0, 2.0 * PI, 0.0)),
                Channel::sine(c.z, 0.35 * e.z, jitter(0.1, 0.3, 0.2), jitter(0.0, 2.0 * PI, 0.0)),
                Channel::sine(0.0, 0.05, jitter(0.3, 0.8, 0.5), jitter(0.0, 2.0 * PI, 0.0)),
                Channel::sine(0.0, 0.05, jitter(0.3, 0.8, 0.4), jitter(0.0, 2.0 * PI, 1.0)),
                Channel::sine(0.0, 0.3, jitter(0.05, 0.2, 0.1), jitter(0.0, 2.0 * PI, 0.0)),
            ]
        }
        TrajectoryKind::TunnelCurve => {
            // Along-track at constant speed; lateral offset follows the bend.
            let k = PI / e.x;
            let x0 = c.x - 0.5 * e.x;
            let wiggle = jitter(0.5, 1.5, 1.0);
            let y = Channel {
                offset: c.y - 0.5 * e.y,
                rate: 0.0,
                terms: vec![(e.y, k * v, 0.0), (wiggle, jitter(0.1, 0.3, 0.2), jitter(0.0, 2.0 * PI, 0.0))],
            };
            [
                Channel { offset: x0, rate: v, terms: Vec::new() },
                y,
                Channel::sine(c.z, 0.5 * e.z, jitter(0.1, 0.3, 0.15), jitter(0.0, 2.0 * PI, 0.0)),
                Channel::sine(0.0, 0.04, jitter(0.3, 0.8, 0.5), jitter(0.0, 2.0 * PI, 0.0)),
                Channel::sine(0.0, 0.04, jitter(0.3, 0.8, 0.4), jitter(0.0, 2.0 * PI, 1.0)),
                Channel::sine(0.0, 0.2, jitter(0.05, 0.2, 0.1), jitter(0.0, 2.0 * PI, 0.0)),
            ]
        }
    };
    Ok(Trajectory { channels, duration: profile.duration })
}

/// Samples the analytic path every `dt` seconds from 0 to the duration.
pub fn generate_trajectory(profile: &TrajectoryProfile, dt: f64) -> Result<Vec<TrajectorySample>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".to_string()));
    }
    let traj = build_trajectory(profile)?;
    Ok(sample_trajectory(&traj, dt))
}

pub fn sample_trajectory(traj: &Trajectory, dt: f64) -> Vec<TrajectorySample> {
    let n = (traj.duration / dt + 1e-9).floor() as usize;
    (0..=n).map(|i| traj.sample(i as f64 * dt)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Indoor,
    Outdoor,
    Tunnel,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Indoor, Preset::Outdoor, Preset::Tunnel];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Indoor => "indoor",
            Preset::Outdoor => "outdoor",
            Preset::Tunnel => "tunnel",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(Preset::Indoor),
            "outdoor" => Ok(Preset::Outdoor),
            "tunnel" => Ok(Preset::Tunnel),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

fn map_of<K: Ord + Copy>(items: &[(K, Vec3)]) -> BTreeMap<K, Vec3> {
    items.iter().copied().collect()
}

/// Tunnel anchors: two walls at uniform height. Right-wall ids come first so
/// that every nominal frame along the tunnel has its z axis up.
pub fn tunnel_anchors() -> Vec<(AnchorId, Vec3)> {
    let per_wall = 18;
    let mut out = Vec::new();
    for (wall, side) in [(0u32, -4.0), (1u32, 4.0)] {
        for j in 0..per_wall {
            let x = TUNNEL_LENGTH * j as f64 / (per_wall - 1) as f64;
            out.push((wall * per_wall + j, Vec3::new(x, tunnel_centerline(x) + side, 3.0)));
        }
    }
    out
}

/// Scenes reproducing the three experiment regimes.
pub fn scene_preset(name: &str) -> Result<(Scene, TrajectoryProfile)> {
    let preset: Preset = name.parse()?;
    Ok(preset_scene(preset))
}

pub fn preset_scene(preset: Preset) -> (Scene, TrajectoryProfile) {
    match preset {
        Preset::Indoor => {
            let anchors = map_of(&[
                (0, Vec3::new(-2.5, -2.1, 0.3)),
                (1, Vec3::new(-2.5, 0.0, 2.5)),
                (2, Vec3::new(-2.5, 2.1, 0.3)),
                (3, Vec3::new(-0.1, -2.1, 2.5)),
                (4, Vec3::new(0.1, 2.1, 2.5)),
                (5, Vec3::new(2.5, -2.1, 0.3)),
                (6, Vec3::new(2.5, 0.0, 2.5)),
                (7, Vec3::new(2.5, 2.1, 0.3)),
            ]);
            let tags = map_of(&[
                (0, Vec3::new(0.25, 0.0, 0.05)),
                (1, Vec3::new(-0.125, 0.2165, 0.05)),
                (2, Vec3::new(-0.125, -0.2165, 0.05)),
            ]);
            let profile = TrajectoryProfile {
                kind: TrajectoryKind::LissajousPlanar,
                extent: Vec3::new(3.0, 3.0, 0.0),
                center: Vec3::new(0.0, 0.0, 1.0),
                duration: 60.0,
                speed: 0.4,
                variant: 0,
            };
            (Scene::new(anchors, tags).expect("preset"), profile)
        }
        Preset::Outdoor => {
            let anchors = map_of(&[
                (0, Vec3::new(10.0, 0.0, 1.0)),
                (1, Vec3::new(10.0, 4.0, 2.8)),
                (2, Vec3::new(20.0, 0.0, 2.6)),
                (3, Vec3::new(20.0, 4.0, 1.2)),
            ]);
            let profile = TrajectoryProfile {
                kind: TrajectoryKind::Corridor3d,
                extent: Vec3::new(40.0, 4.0, 2.0),
                center: Vec3::new(0.0, 2.0, 2.0),
                duration: 60.0,
                speed: 2.0,
                variant: 0,
            };
            (Scene::new(anchors, quad_tags()).expect("preset"), profile)
        }
        Preset::Tunnel => {
            let anchors = map_of(&tunnel_anchors());
            let profile = TrajectoryProfile {
                kind: TrajectoryKind::TunnelCurve,
                extent: Vec3::new(TUNNEL_LENGTH, TUNNEL_BEND, 0.6),
                center: Vec3::new(0.5 * TUNNEL_LENGTH, 0.5 * TUNNEL_BEND, 2.7),
                duration: 66.0,
                speed: 5.0,
                variant: 0,
            };
            (Scene::new(anchors, quad_tags()).expect("preset"), profile)
        }
    }
}

fn quad_tags() -> BTreeMap<TagId, Vec3> {
    map_of(&[
        (0, Vec3::new(0.3, 0.3, 0.0)),
        (1, Vec3::new(-0.3, 0.3, 0.0)),
        (2, Vec3::new(-0.3, -0.3, 0.0)),
        (3, Vec3::new(0.3, -0.3, 0.0)),
    ])
}

/// Default corruption for each preset. Indoor biases average 18 cm.
pub fn preset_noise(preset: Preset, seed: u64) -> NoiseModel {
    let base = NoiseModel {
        accel_sigma: 0.02,
        gyro_sigma: 0.002,
        accel_bias: 0.05,
        gyro_bias: 0.002,
        ..NoiseModel::zero(seed)
    };
    match preset {
        Preset::Indoor => NoiseModel {
            gaussian_sigma: 0.03,
            bias_range: 0.36,
            nlos_prob: 0.02,
            nlos_extra: 0.15,
            ..base
        },
        Preset::Outdoor => NoiseModel {
            gaussian_sigma: 0.05,
            bias_range: 0.2,
            nlos_prob: 0.02,
            nlos_extra: 0.3,
            dropout_prob: 0.02,
            ..base
        },
        Preset::Tunnel => NoiseModel {
            gaussian_sigma: 0.05,
            bias_range: 0.2,
            nlos_prob: 0.05,
            nlos_extra: 0.4,
            dropout_prob: 0.03,
            ..base
        },
    }
}

/// Range gating distance used by the tunnel experiments.
pub fn preset_max_range(preset: Preset) -> f64 {
    match preset {
        Preset::Tunnel => 40.0,
        _ => f64::INFINITY,
    }
}

/// Draws the per-pair constant biases into the scene, uniformly from
/// `[0, bias_range]`, visiting pairs in (tag, anchor) order.
pub fn draw_biases(scene: &mut Scene, bias_range: f64, seed: u64) {
    scene.bias.clear();
    if bias_range <= 0.0 {
        return;
    }
    let mut rng = stream_rng(seed, STREAM_BIAS);
    for &tag in scene.tags.keys() {
        for &anchor in scene.anchors.keys() {
            scene.bias.insert((tag, anchor), rng.random_range(0.0..=bias_range));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorRates {
    pub imu_rate: f64,
    pub uwb_rate: f64,
    pub max_range: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self { imu_rate: DEFAULT_IMU_RATE, uwb_rate: DEFAULT_UWB_RATE, max_range: f64::INFINITY }
    }
}

/// Simulates IMU, range and ground-truth records along the trajectory. The
/// scene's bias map is applied to the ranges.
pub fn simulate_sensors(traj: &Trajectory, scene: &Scene, noise: &NoiseModel, rates: &SensorRates) -> Result<Dataset> {
    noise.validate()?;
    if !(rates.imu_rate > 0.0 && rates.uwb_rate > 0.0) {
        return Err(Error::InvalidArgument("sensor rates must be positive".to_string()));
    }
    let mut records = Vec::new();

    let mut imu_rng = stream_rng(noise.seed, STREAM_IMU);
    let sym = |rng: &mut ChaCha8Rng, b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
    let accel_bias = Vec3::new(sym(&mut imu_rng, noise.accel_bias), sym(&mut imu_rng, noise.accel_bias), sym(&mut imu_rng, noise.accel_bias));
    let gyro_bias = Vec3::new(sym(&mut imu_rng, noise.gyro_bias), sym(&mut imu_rng, noise.gyro_bias), sym(&mut imu_rng, noise.gyro_bias));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n_imu = (traj.duration * rates.imu_rate + 1e-9).floor() as usize;
    for i in 0..=n_imu {
        let t = i as f64 / rates.imu_rate;
        let s = traj.sample(t);
        let f_body = s.pose.rot.inverse().rotate(s.accel_world + scene.gravity);
        let mut draw3 = |sigma: f64| {
            let v = Vec3::new(unit.sample(&mut imu_rng), unit.sample(&mut imu_rng), unit.sample(&mut imu_rng));
            v * sigma
        };
        let accel = f_body + accel_bias + draw3(noise.accel_sigma);
        let gyro = s.omega_body + gyro_bias + draw3(noise.gyro_sigma);
        records.push(Record::Imu(ImuSample { t, accel, gyro }));
    }

    let nlos = if noise.nlos_extra > 0.0 { Some(Exp::new(1.0 / noise.nlos_extra).expect("rate")) } else { None };
    let mut pair_rngs: BTreeMap<(TagId, AnchorId), ChaCha8Rng> = BTreeMap::new();
    for &tag in scene.tags.keys() {
        for &anchor in scene.anchors.keys() {
            pair_rngs.insert((tag, anchor), stream_rng(noise.seed, range_stream(tag, anchor)));
        }
    }
    let n_uwb = (traj.duration * rates.uwb_rate + 1e-9).floor() as usize;
    for k in 0..=n_uwb {
        let t = k as f64 / rates.uwb_rate;
        let s = traj.sample(t);
        records.push(Record::Gt(GroundTruthPose { t, pose: s.pose }));
        for (&(tag, anchor), rng) in pair_rngs.iter_mut() {
            // Fixed number of draws per epoch keeps every stream aligned.
            let g = unit.sample(rng);
            let u_nlos: f64 = rng.random();
            let extra = nlos.map(|d| d.sample(rng)).unwrap_or(0.0);
            let u_drop: f64 = rng.random();
            let geometric = (s.pose.transform_point(scene.tags[&tag]) - scene.anchors[&anchor]).norm();
            if geometric > rates.max_range || u_drop < noise.dropout_prob {
                continue;
            }
            let mut d = true_range(&s.pose, scene, tag, anchor)? + noise.gaussian_sigma * g;
            if u_nlos < noise.nlos_prob {
                d += extra;
            }
            records.push(Record::Range(RangeMeasurement { t, tag_id: tag, anchor_id: anchor, d: d.max(0.0) }));
        }
    }
    Ok(Dataset::new(records))
}

/// One anchor-loss window: `[start, end)` seconds and the fraction of anchor
/// ids kept inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskWindow {
    pub start: f64,
    pub end: f64,
    pub keep_fraction: f64,
}

impl MaskWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

impl FromStr for MaskWindow {
    type Err = Error;
    /// `START:END:KEEP`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidArgument(alloc::format!("mask window `{s}` is not START:END:KEEP"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
        Ok(MaskWindow { start: num(parts[0])?, end: num(parts[1])?, keep_fraction: num(parts[2])? })
    }
}

/// Removes a random subset of anchor ids inside each window. The subset is
/// fixed per window and chosen among the anchors observed in it.
pub fn mask_anchors(dataset: &Dataset, windows: &[MaskWindow], seed: u64) -> Result<Dataset> {
    for w in windows {
        if !(w.keep_fraction > 0.0 && w.keep_fraction <= 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "keep_fraction {} outside (0, 1]",
                w.keep_fraction
            )));
        }
        if !(w.end > w.start) {
            return Err(Error::InvalidArgument("mask window must have end > start".to_string()));
        }
    }
    let mut sorted: Vec<MaskWindow> = windows.to_vec();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    if sorted.windows(2).any(|p| p[1].start < p[0].end) {
        return Err(Error::InvalidArgument("mask windows overlap".to_string()));
    }

    let mut kept: Vec<Vec<AnchorId>> = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let mut ids: Vec<AnchorId> = dataset
            .ranges()
            .filter(|r| w.contains(r.t))
            .map(|r| r.anchor_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let keep = ((w.keep_fraction * ids.len() as f64).round() as usize).max(1).min(ids.len());
        let mut rng = stream_rng(seed, STREAM_MASK_BASE + i as u64);
        ids.shuffle(&mut rng);
        ids.truncate(keep);
        ids.sort_unstable();
        kept.push(ids);
    }
    let records = dataset
        .records
        .iter()
        .filter(|rec| match rec {
            Record::Range(r) => windows
                .iter()
                .zip(&kept)
                .find(|(w, _)| w.contains(r.t))
                .is_none_or(|(_, ids)| ids.binary_search(&r.anchor_id).is_ok()),
            _ => true,
        })
        .copied()
        .collect();
    Ok(Dataset { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nominal::build_nominal;

    #[test]
    fn presets_match_experiment_table() {
        let (s, _) = scene_preset("indoor").unwrap();
        assert_eq!((s.tags.len(), s.anchors.len()), (3, 8));
        let (s, _) = scene_preset("outdoor").unwrap();
        assert_eq!((s.tags.len(), s.anchors.len()), (4, 4));
        let (s, p) = scene_preset("tunnel").unwrap();
        assert_eq!((s.tags.len(), s.anchors.len()), (4, 36));
        let z: Vec<f64> = s.anchors.values().map(|a| a.z).collect();
        assert!(z.iter().all(|v| *v == z[0]), "tunnel anchors share one height");
        assert_eq!(p.kind, TrajectoryKind::TunnelCurve);
        assert!(matches!(scene_preset("mars"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn outdoor_starts_outside_hull() {
        let (scene, profile) = preset_scene(Preset::Outdoor);
        let start = generate_trajectory(&profile, 0.1).unwrap()[0].pose.trans;
        let (xmin, xmax) = scene.anchors.values().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.x), b.max(p.x)));
        assert!(start.x < xmin || start.x > xmax, "start {start:?}");
    }

    #[test]
    fn preset_nominal_frames_point_up() {
        for preset in Preset::ALL {
            let (scene, profile) = preset_scene(preset);
            let traj = generate_trajectory(&profile, 1.0).unwrap();
            let anchors = scene.anchor_list();
            for s in &traj {
                let f = build_nominal(&anchors, 40.0, s.pose.trans).unwrap();
                let up = f.rot.rotate(Vec3::Z);
                assert!(up.z > 0.9, "{preset:?} at {:?}: {up:?}", s.pose.trans);
            }
        }
    }

    #[test]
    fn constant_velocity_has_zero_acceleration() {
        let traj = Trajectory {
            channels: [
                Channel { offset: 1.0, rate: 2.0, terms: Vec::new() },
                Channel { offset: 0.0, rate: -1.0, terms: Vec::new() },
                Channel::constant(1.0),
                Channel::constant(0.0),
                Channel::constant(0.0),
                Channel::constant(0.3),
            ],
            duration: 5.0,
        };
        for s in sample_trajectory(&traj, 0.1) {
            assert_eq!(s.accel_world, Vec3::ZERO);
            assert_eq!(s.velocity, Vec3::new(2.0, -1.0, 0.0));
        }
    }

    #[test]
    fn circular_arc_centripetal_acceleration() {
        let (r, v) = (2.5, 1.5);
        let w = v / r;
        let traj = Trajectory {
            channels: [
                Channel::sine(0.0, r, w, 0.5 * PI),
                Channel::sine(0.0, r, w, 0.0),
                Channel::constant(0.0),
                Channel::constant(0.0),
                Channel::constant(0.0),
                Channel::constant(0.0),
            ],
            duration: 10.0,
        };
        for s in sample_trajectory(&traj, 0.05) {
            assert!((s.accel_world.norm() - v * v / r).abs() < 1e-9);
            assert!((s.velocity.norm() - v).abs() < 1e-9);
        }
    }

    #[test]
    fn lissajous_is_planar() {
        let (_, profile) = preset_scene(Preset::Indoor);
        for variant in 0..4 {
            let traj = generate_trajectory(&profile.with_variant(variant), 0.05).unwrap();
            assert!(traj.iter().all(|s| s.pose.trans.z == 1.0 && s.velocity.z == 0.0));
            assert!(traj.iter().all(|s| s.pose.trans.x.abs() <= 1.5 + 1e-12 && s.pose.trans.y.abs() <= 1.5 + 1e-12));
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let (_, profile) = preset_scene(Preset::Outdoor);
        let traj = build_trajectory(&profile.with_variant(3)).unwrap();
        let h = 1e-5;
        for i in 0..50 {
            let t = 0.7 * i as f64 + 0.1;
            let s = traj.sample(t);
            let (a, b) = (traj.sample(t - h), traj.sample(t + h));
            let vel = (b.pose.trans - a.pose.trans) * (0.5 / h);
            let acc = (b.velocity - a.velocity) * (0.5 / h);
            assert!((vel - s.velocity).norm() < 1e-6);
            assert!((acc - s.accel_world).norm() < 1e-6);
            // body rate: R^T dR/dt
            let dr = a.pose.rot.inverse() * b.pose.rot;
            let q = dr.quaternion();
            let omega = Vec3::new(q[1], q[2], q[3]) * (2.0 / (2.0 * h));
            assert!((omega - s.omega_body).norm() < 1e-5, "{omega:?} vs {:?}", s.omega_body);
        }
    }

    fn zero_noise_dataset(preset: Preset, duration: f64) -> (Scene, Dataset) {
        let (scene, profile) = preset_scene(preset);
        let traj = build_trajectory(&profile.with_duration(duration)).unwrap();
        let ds = simulate_sensors(&traj, &scene, &NoiseModel::zero(1), &SensorRates::default()).unwrap();
        (scene, ds)
    }

    #[test]
    fn zero_noise_ranges_are_exact() {
        let (scene, ds) = zero_noise_dataset(Preset::Indoor, 5.0);
        let gt = ds.ground_truth();
        let mut count = 0;
        for r in ds.ranges() {
            let pose = gt.iter().find(|g| g.t == r.t).unwrap().pose;
            assert_eq!(r.d, true_range(&pose, &scene, r.tag_id, r.anchor_id).unwrap());
            count += 1;
        }
        assert_eq!(count, 51 * 24);
        let epochs = ds.epochs();
        assert!(epochs[1..].iter().all(|e| e.imu.len() == 20));
    }

    #[test]
    fn range_gating_respected() {
        let (scene, profile) = preset_scene(Preset::Tunnel);
        let traj = build_trajectory(&profile.with_duration(20.0)).unwrap();
        let rates = SensorRates { max_range: 40.0, ..Default::default() };
        let ds = simulate_sensors(&traj, &scene, &preset_noise(Preset::Tunnel, 3), &rates).unwrap();
        let gt = ds.ground_truth();
        let mut n = 0;
        for r in ds.ranges() {
            let pose = gt.iter().find(|g| g.t == r.t).unwrap().pose;
            let geo = (pose.transform_point(scene.tags[&r.tag_id]) - scene.anchors[&r.anchor_id]).norm();
            assert!(geo <= 40.0);
            n += 1;
        }
        assert!(n > 0);
    }

    #[test]
    fn dropout_fraction_matches_binomial_bound() {
        let mut anchors = BTreeMap::new();
        anchors.insert(0, Vec3::new(3.0, 0.0, 0.0));
        let mut tags = BTreeMap::new();
        tags.insert(0, Vec3::ZERO);
        let scene = Scene::new(anchors, tags).unwrap();
        let traj = Trajectory {
            channels: [
                Channel::constant(0.0),
                Channel::constant(0.0),
                Channel::constant(0.0),
                Channel::constant(0.0),
                Channel::constant(0.0),
                Channel::constant(0.0),
            ],
            duration: 999.9,
        };
        let noise = NoiseModel { dropout_prob: 0.5, ..NoiseModel::zero(17) };
        let ds = simulate_sensors(&traj, &scene, &noise, &SensorRates { imu_rate: 1.0, ..Default::default() }).unwrap();
        let kept = ds.ranges().count() as f64 / 10_000.0;
        assert!((kept - 0.5).abs() <= 0.02, "{kept}");
    }

    #[test]
    fn same_seed_same_records() {
        let (mut scene, profile) = preset_scene(Preset::Outdoor);
        let noise = preset_noise(Preset::Outdoor, 99);
        draw_biases(&mut scene, noise.bias_range, noise.seed);
        let traj = build_trajectory(&profile.with_duration(5.0)).unwrap();
        let a = simulate_sensors(&traj, &scene, &noise, &SensorRates::default()).unwrap();
        let b = simulate_sensors(&traj, &scene, &noise, &SensorRates::default()).unwrap();
        assert_eq!(a, b);
        let other = simulate_sensors(&traj, &scene, &NoiseModel { seed: 100, ..noise }, &SensorRates::default()).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn indoor_bias_mean_near_eighteen_cm() {
        let (mut scene, _) = preset_scene(Preset::Indoor);
        let noise = preset_noise(Preset::Indoor, 5);
        draw_biases(&mut scene, noise.bias_range, noise.seed);
        let mean = scene.bias.values().sum::<f64>() / scene.bias.len() as f64;
        assert_eq!(scene.bias.len(), 24);
        assert!((mean - 0.18).abs() < 0.05, "{mean}");
        assert!(scene.bias.values().all(|b| (0.0..=0.36).contains(b)));
    }

    #[test]
    fn imu_reintegration_reproduces_trajectory() {
        let (scene, profile) = preset_scene(Preset::Outdoor);
        let traj = build_trajectory(&profile.with_variant(2).with_duration(10.0)).unwrap();
        let ds = simulate_sensors(&traj, &scene, &NoiseModel::zero(0), &SensorRates::default()).unwrap();
        let imu: Vec<ImuSample> = ds
            .records
            .iter()
            .filter_map(|r| if let Record::Imu(s) = r { Some(*s) } else { None })
            .collect();
        let s0 = traj.sample(0.0);
        let (mut rot, mut vel, mut pos) = (s0.pose.rot, s0.velocity, s0.pose.trans);
        let g = scene.gravity;
        for w in imu.windows(2) {
            let dt = w[1].t - w[0].t;
            let a0 = rot.rotate(w[0].accel) - g;
            let rot1 = rot * Rotation::exp((w[0].gyro + w[1].gyro) * (0.5 * dt));
            let a1 = rot1.rotate(w[1].accel) - g;
            pos += vel * dt + (a0 * (2.0 / 3.0) + a1 * (1.0 / 3.0)) * (0.5 * dt * dt);
            vel += (a0 + a1) * (0.5 * dt);
            rot = rot1;
        }
        let end = traj.sample(10.0);
        assert!((pos - end.pose.trans).norm() < 1e-3, "{}", (pos - end.pose.trans).norm());
    }

    #[test]
    fn mask_keep_all_is_identity() {
        let (_, ds) = zero_noise_dataset(Preset::Indoor, 3.0);
        let w = [MaskWindow { start: 1.0, end: 2.0, keep_fraction: 1.0 }];
        assert_eq!(mask_anchors(&ds, &w, 4).unwrap(), ds);
    }

    #[test]
    fn mask_half_keeps_four_of_eight() {
        let (_, ds) = zero_noise_dataset(Preset::Indoor, 3.0);
        let w = [MaskWindow { start: 1.0, end: 2.0, keep_fraction: 0.5 }];
        let masked = mask_anchors(&ds, &w, 4).unwrap();
        let mut inside: Vec<_> = masked.ranges().filter(|r| r.t >= 1.0 && r.t < 2.0).map(|r| r.anchor_id).collect();
        inside.sort_unstable();
        inside.dedup();
        assert_eq!(inside.len(), 4);
        let outside = |d: &Dataset| d.ranges().filter(|r| r.t < 1.0 || r.t >= 2.0).count();
        assert_eq!(outside(&masked), outside(&ds));
        assert_eq!(mask_anchors(&ds, &w, 4).unwrap(), masked);
    }

    #[test]
    fn mask_to_single_anchor_and_errors() {
        let (_, ds) = zero_noise_dataset(Preset::Indoor, 3.0);
        let w = [MaskWindow { start: 0.5, end: 1.5, keep_fraction: 0.1 }];
        let masked = mask_anchors(&ds, &w, 1).unwrap();
        for e in masked.epochs().iter().filter(|e| e.t >= 0.5 && e.t < 1.5) {
            assert_eq!(e.anchor_ids().len(), 1);
        }
        let bad = [MaskWindow { start: 0.0, end: 1.0, keep_fraction: 0.0 }];
        assert!(mask_anchors(&ds, &bad, 1).is_err());
        let overlap = [
            MaskWindow { start: 0.0, end: 1.0, keep_fraction: 0.5 },
            MaskWindow { start: 0.5, end: 2.0, keep_fraction: 0.5 },
        ];
        assert!(mask_anchors(&ds, &overlap, 1).is_err());
        assert_eq!("100:110:0.5".parse::<MaskWindow>().unwrap(), MaskWindow { start: 100.0, end: 110.0, keep_fraction: 0.5 });
    }
}
