//! UWB ranging and IMU forward models, and the record types shared by the
//! simulator and the estimators.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation, Vec3};

pub type TagId = u32;
pub type AnchorId = u32;

/// Gravity in the world frame, z up.
pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, 9.8);

/// One IMU reading: specific force and angular rate in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vec3,
    pub gyro: Vec3,
}

/// One tag-anchor distance observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeMeasurement {
    pub t: f64,
    pub tag_id: TagId,
    pub anchor_id: AnchorId,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthPose {
    pub t: f64,
    pub pose: Pose,
}

/// A line of a dataset stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Record {
    Imu(ImuSample),
    Range(RangeMeasurement),
    Gt(GroundTruthPose),
}

impl Record {
    pub fn t(&self) -> f64 {
        match self {
            Record::Imu(s) => s.t,
            Record::Range(r) => r.t,
            Record::Gt(g) => g.t,
        }
    }

    fn kind_rank(&self) -> u8 {
        match self {
            Record::Imu(_) => 0,
            Record::Gt(_) => 1,
            Record::Range(_) => 2,
        }
    }

    /// Replay order: time, then imu < gt < range, then (tag, anchor).
    pub fn replay_cmp(&self, other: &Record) -> core::cmp::Ordering {
        self.t()
            .total_cmp(&other.t())
            .then(self.kind_rank().cmp(&other.kind_rank()))
            .then_with(|| match (self, other) {
                (Record::Range(a), Record::Range(b)) => {
                    (a.tag_id, a.anchor_id).cmp(&(b.tag_id, b.anchor_id))
                }
                _ => core::cmp::Ordering::Equal,
            })
    }
}

/// Sorts records into deterministic replay order (stable).
pub fn sort_records(records: &mut [Record]) {
    records.sort_by(|a, b| a.replay_cmp(b));
}

/// Anchors in the world frame, tag lever arms in the body frame and the
/// per-pair constant range bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub anchors: BTreeMap<AnchorId, Vec3>,
    pub tags: BTreeMap<TagId, Vec3>,
    pub bias: BTreeMap<(TagId, AnchorId), f64>,
    pub gravity: Vec3,
}

impl Scene {
    pub fn new(anchors: BTreeMap<AnchorId, Vec3>, tags: BTreeMap<TagId, Vec3>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Empty("scene anchors"));
        }
        if tags.is_empty() {
            return Err(Error::Empty("scene tags"));
        }
        Ok(Self { anchors, tags, bias: BTreeMap::new(), gravity: GRAVITY })
    }

    pub fn anchor(&self, id: AnchorId) -> Result<Vec3> {
        self.anchors.get(&id).copied().ok_or(Error::UnknownAnchor(id))
    }

    pub fn tag(&self, id: TagId) -> Result<Vec3> {
        self.tags.get(&id).copied().ok_or(Error::UnknownTag(id))
    }

    pub fn bias(&self, tag: TagId, anchor: AnchorId) -> f64 {
        self.bias.get(&(tag, anchor)).copied().unwrap_or(0.0)
    }

    /// Copy of the scene with every bias removed; what an estimator knows.
    pub fn without_bias(&self) -> Scene {
        Scene { bias: BTreeMap::new(), ..self.clone() }
    }

    pub fn anchor_list(&self) -> Vec<(AnchorId, Vec3)> {
        self.anchors.iter().map(|(&id, &p)| (id, p)).collect()
    }
}

/// Noise-free range between a tag on the body and an anchor, including the
/// pair's constant bias.
pub fn true_range(pose: &Pose, scene: &Scene, tag_id: TagId, anchor_id: AnchorId) -> Result<f64> {
    let tag = scene.tag(tag_id)?;
    let anchor = scene.anchor(anchor_id)?;
    Ok((pose.transform_point(tag) - anchor).norm() + scene.bias(tag_id, anchor_id))
}

/// Rotates body-frame IMU readings into the world frame and removes gravity.
pub fn imu_to_world(prev_rot: &Rotation, a_body: Vec3, w_body: Vec3, g: Vec3) -> (Vec3, Vec3) {
    (prev_rot.rotate(a_body) - g, prev_rot.rotate(w_body))
}

/// World-frame IMU pairs collected between two UWB epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    /// `(a_W, w_W)` pairs in time order.
    pub samples: Vec<(Vec3, Vec3)>,
}

impl ImuWindow {
    /// Preprocesses raw body-frame samples with the previous rotation estimate.
    pub fn from_body_samples(samples: &[ImuSample], prev_rot: &Rotation, g: Vec3) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("imu window"));
        }
        let samples = samples
            .iter()
            .map(|s| imu_to_world(prev_rot, s.accel, s.gyro, g))
            .collect();
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Channel-major `6 x n` matrix, padded or truncated to `n` columns by
    /// repeating the boundary samples.
    pub fn to_channels(&self, n: usize) -> Result<Vec<f64>> {
        if self.samples.is_empty() {
            return Err(Error::Empty("imu window"));
        }
        let len = self.samples.len();
        let mut out = alloc::vec![0.0; 6 * n];
        for col in 0..n {
            // Centre the available samples; repeat the edges.
            let src = if len >= n {
                col + (len - n) / 2
            } else {
                let offset = (n - len) / 2;
                col.saturating_sub(offset).min(len - 1)
            };
            let (a, w) = self.samples[src];
            let v = [a.x, a.y, a.z, w.x, w.y, w.z];
            for (ch, value) in v.iter().enumerate() {
                out[ch * n + col] = *value;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::EulerAngles;
    use core::f64::consts::FRAC_PI_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene_345(bias: f64) -> Scene {
        let mut anchors = BTreeMap::new();
        anchors.insert(0, Vec3::new(3.0, 4.0, 0.0));
        anchors.insert(1, Vec3::new(4.0, 4.0, 0.0));
        let mut tags = BTreeMap::new();
        tags.insert(0, Vec3::ZERO);
        let mut s = Scene::new(anchors, tags).unwrap();
        if bias != 0.0 {
            s.bias.insert((0, 0), bias);
        }
        s
    }

    #[test]
    fn true_range_examples() {
        let s = scene_345(0.0);
        assert_eq!(true_range(&Pose::IDENTITY, &s, 0, 0).unwrap(), 5.0);
        let s = scene_345(0.18);
        assert!((true_range(&Pose::IDENTITY, &s, 0, 0).unwrap() - 5.18).abs() < 1e-12);
        let p = Pose::from_translation(Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(true_range(&p, &s, 0, 1).unwrap(), 5.0);
    }

    #[test]
    fn true_range_unknown_ids() {
        let s = scene_345(0.0);
        assert_eq!(true_range(&Pose::IDENTITY, &s, 9, 0), Err(Error::UnknownTag(9)));
        assert_eq!(true_range(&Pose::IDENTITY, &s, 0, 42), Err(Error::UnknownAnchor(42)));
    }

    #[test]
    fn true_range_rigid_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut s = scene_345(0.0);
            s.tags.insert(0, Vec3::new(0.3, -0.2, 0.1));
            let pose = Pose::from_vector6([
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                0.2,
                -0.4,
                1.0,
            ]);
            let g = Pose::from_vector6([
                rng.random_range(-50.0..50.0),
                3.0,
                rng.random_range(-50.0..50.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            ]);
            let before = true_range(&pose, &s, 0, 0).unwrap();
            for a in s.anchors.values_mut() {
                *a = g.transform_point(*a);
            }
            let after = true_range(&g.compose(&pose), &s, 0, 0).unwrap();
            assert!((before - after).abs() < 1e-9);
        }
    }

    #[test]
    fn imu_to_world_examples() {
        let (a, w) = imu_to_world(&Rotation::IDENTITY, Vec3::new(0.0, 0.0, 9.8), Vec3::Z, GRAVITY);
        assert_eq!(a, Vec3::ZERO);
        assert_eq!(w, Vec3::Z);
        let (a, _) = imu_to_world(&Rotation::rz(FRAC_PI_2), Vec3::new(9.8, 0.0, 0.0), Vec3::ZERO, GRAVITY);
        assert!((a - Vec3::new(0.0, 9.8, -9.8)).norm() < 1e-12);
        // identity rotation and zero gravity: identity map
        let r = Rotation::from_euler(EulerAngles::default());
        let (a, w) = imu_to_world(&r, Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0), Vec3::ZERO);
        assert_eq!((a, w), (Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0)));
    }

    #[test]
    fn window_padding_repeats_boundaries() {
        let w = ImuWindow {
            samples: (0..3).map(|i| (Vec3::new(i as f64, 0.0, 0.0), Vec3::ZERO)).collect(),
        };
        let ch = w.to_channels(7).unwrap();
        assert_eq!(&ch[0..7], &[0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0]);
        let long = ImuWindow {
            samples: (0..10).map(|i| (Vec3::new(i as f64, 0.0, 0.0), Vec3::ZERO)).collect(),
        };
        assert_eq!(&long.to_channels(4).unwrap()[0..4], &[3.0, 4.0, 5.0, 6.0]);
        assert!(ImuWindow { samples: Vec::new() }.to_channels(4).is_err());
    }

    #[test]
    fn replay_order_puts_imu_before_range() {
        let mut recs = alloc::vec![
            Record::Range(RangeMeasurement { t: 1.0, tag_id: 1, anchor_id: 0, d: 1.0 }),
            Record::Range(RangeMeasurement { t: 1.0, tag_id: 0, anchor_id: 2, d: 1.0 }),
            Record::Imu(ImuSample { t: 1.0, accel: Vec3::ZERO, gyro: Vec3::ZERO }),
            Record::Imu(ImuSample { t: 0.5, accel: Vec3::ZERO, gyro: Vec3::ZERO }),
        ];
        sort_records(&mut recs);
        assert!(matches!(recs[0], Record::Imu(s) if s.t == 0.5));
        assert!(matches!(recs[1], Record::Imu(_)));
        assert!(matches!(recs[2], Record::Range(r) if r.tag_id == 0));
    }
}
