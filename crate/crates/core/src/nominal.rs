//! Nominal frame: a local frame centred on the nearby anchor group and
//! oriented by the principal axes of the anchor positions.
//!
//! Axis rules:
//! - eigenvectors of the anchor covariance, by descending eigenvalue;
//! - each axis is signed so that anchor projections increase with anchor-id
//!   rank, falling back to "largest-magnitude component positive" when the
//!   projections carry no ordering information;
//! - the third axis is `first x second`;
//! - a collinear layout takes `normalize(world_z x first)` as second axis;
//! - equal eigenvalues are resolved towards world x, y, z in that order.
//!
//! The id-rank sign rule makes the frame follow rigid motions of the anchor
//! layout, so body coordinates in the nominal frame are unchanged when the
//! whole scene is moved.

use alloc::vec::Vec;

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation, Vec3};
use crate::linalg::symmetric_eigen;
use crate::sensor::AnchorId;

/// Default anchor selection radius, matching the range gating distance.
pub const DEFAULT_RADIUS: f64 = 40.0;
const TIE_RATIO: f64 = 1e-9;
const COLLINEAR_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct NominalFrame {
    /// Nominal origin in the world frame.
    pub origin: Vec3,
    /// Orientation of the nominal axes in the world frame.
    pub rot: Rotation,
    /// Sorted ids of the anchors that defined the frame.
    pub anchor_set: Vec<AnchorId>,
}

impl NominalFrame {
    /// Pure translation frame; mostly useful in tests.
    pub fn from_pose(pose: Pose, anchor_set: Vec<AnchorId>) -> Self {
        Self { origin: pose.trans, rot: pose.rot, anchor_set }
    }

    /// The nominal-to-world transform.
    pub fn pose(&self) -> Pose {
        Pose::new(self.rot, self.origin)
    }

    pub fn to_nominal(&self, pose_w: &Pose) -> Pose {
        self.pose().inverse().compose(pose_w)
    }

    pub fn from_nominal(&self, pose_n: &Pose) -> Pose {
        self.pose().compose(pose_n)
    }

    pub fn point_to_nominal(&self, p: Vec3) -> Vec3 {
        self.rot.inverse().rotate(p - self.origin)
    }

    pub fn point_from_nominal(&self, p: Vec3) -> Vec3 {
        self.rot.rotate(p) + self.origin
    }

    pub fn vector_to_nominal(&self, v: Vec3) -> Vec3 {
        self.rot.inverse().rotate(v)
    }
}

pub fn to_nominal(f: &NominalFrame, pose_w: &Pose) -> Pose {
    f.to_nominal(pose_w)
}

pub fn from_nominal(f: &NominalFrame, pose_n: &Pose) -> Pose {
    f.from_nominal(pose_n)
}

/// Re-expresses a pose given in `old` nominal coordinates in `new` ones.
pub fn rebase(old: &NominalFrame, new: &NominalFrame, pose_old_n: &Pose) -> Pose {
    new.to_nominal(&old.from_nominal(pose_old_n))
}

/// Builds the nominal frame from the anchors within `radius` of `reference`.
pub fn build_nominal(anchors: &[(AnchorId, Vec3)], radius: f64, reference: Vec3) -> Result<NominalFrame> {
    let mut selected: Vec<(AnchorId, Vec3)> = anchors
        .iter()
        .copied()
        .filter(|(_, p)| (*p - reference).norm() <= radius)
        .collect();
    if selected.is_empty() {
        return Err(Error::NoAnchorsInRadius { radius });
    }
    selected.sort_by_key(|(id, _)| *id);
    selected.dedup_by_key(|(id, _)| *id);
    Ok(frame_from_anchors(&selected))
}

/// Frame from an already selected, id-sorted anchor group.
pub fn frame_from_anchors(selected: &[(AnchorId, Vec3)]) -> NominalFrame {
    let n = selected.len() as f64;
    let origin = selected.iter().fold(Vec3::ZERO, |acc, (_, p)| acc + *p) * (1.0 / n);
    let centred: Vec<Vec3> = selected.iter().map(|(_, p)| *p - origin).collect();
    let anchor_set = selected.iter().map(|(id, _)| *id).collect();

    let mut cov = [0.0; 9];
    for c in &centred {
        let v = c.to_array();
        for i in 0..3 {
            for j in 0..3 {
                cov[i * 3 + j] += v[i] * v[j] / n;
            }
        }
    }
    let eig = symmetric_eigen(&cov, 3);
    let values = &eig.values;
    let vectors: Vec<Vec3> = eig.vectors.iter().map(|v| Vec3::new(v[0], v[1], v[2])).collect();

    if values[0] <= f64::MIN_POSITIVE {
        return NominalFrame { origin, rot: Rotation::IDENTITY, anchor_set };
    }

    let axes = resolve_ties(values, &vectors);
    let first = orient(axes[0], &centred);
    let second = if values[1] < COLLINEAR_RATIO * values[0] {
        let s = Vec3::Z.cross(first);
        if s.norm() > 1e-6 {
            s.normalized()
        } else {
            Vec3::X.cross(first).normalized()
        }
    } else {
        orient(axes[1], &centred)
    };
    // Re-orthogonalize against rounding before forming the third axis.
    let second = (second - first * first.dot(second)).normalized();
    let third = first.cross(second);
    NominalFrame { origin, rot: Rotation::from_axes(first, second, third), anchor_set }
}

/// Replaces eigenvectors inside groups of equal eigenvalues by the
/// projections of world x, y, z onto the group's span.
fn resolve_ties(values: &[f64], vectors: &[Vec3]) -> Vec<Vec3> {
    let scale = values[0].abs().max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(3);
    let mut i = 0;
    while i < 3 {
        let mut j = i + 1;
        while j < 3 && (values[i] - values[j]).abs() <= TIE_RATIO * scale {
            j += 1;
        }
        if j - i == 1 {
            out.push(vectors[i]);
        } else {
            let span = &vectors[i..j];
            let mut chosen: Vec<Vec3> = Vec::new();
            for world in [Vec3::X, Vec3::Y, Vec3::Z] {
                if chosen.len() == span.len() {
                    break;
                }
                let mut p = span.iter().fold(Vec3::ZERO, |acc, v| acc + *v * v.dot(world));
                for c in &chosen {
                    p = p - *c * c.dot(p);
                }
                if p.norm() > 0.1 {
                    chosen.push(p.normalized());
                }
            }
            // The span always has a basis among the world axes' projections.
            out.extend(chosen);
        }
        i = j;
    }
    out
}

fn orient(axis: Vec3, centred: &[Vec3]) -> Vec3 {
    let n = centred.len() as f64;
    let mean_rank = (n - 1.0) / 2.0;
    let score: f64 = centred
        .iter()
        .enumerate()
        .map(|(rank, c)| (rank as f64 - mean_rank) * c.dot(axis))
        .sum();
    let scale: f64 = centred.iter().map(|c| c.norm()).sum::<f64>() * n;
    let positive = if score.abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
        score > 0.0
    } else {
        let a = axis.to_array();
        let mut k = 0;
        for i in 1..3 {
            if a[i].abs() > a[k].abs() + 1e-12 {
                k = i;
            }
        }
        a[k] > 0.0
    };
    if positive {
        axis
    } else {
        -axis
    }
}

/// Outcome of a [`FrameTracker`] update.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameUpdate {
    pub frame_id: usize,
    /// The frame that was active before this update, when a switch happened.
    pub previous: Option<NominalFrame>,
}

/// Maintains the active nominal frame along a trajectory. A new anchor
/// selection replaces the active frame only after it has persisted for
/// `hysteresis` seconds.
#[derive(Debug, Clone)]
pub struct FrameTracker {
    pub radius: f64,
    pub hysteresis: f64,
    active: Option<NominalFrame>,
    frame_id: usize,
    pending: Option<(Vec<AnchorId>, f64)>,
}

impl FrameTracker {
    pub fn new(radius: f64, hysteresis: f64) -> Self {
        Self { radius, hysteresis, active: None, frame_id: 0, pending: None }
    }

    pub fn active(&self) -> Option<&NominalFrame> {
        self.active.as_ref()
    }

    pub fn frame_id(&self) -> usize {
        self.frame_id
    }

    pub fn update(&mut self, anchors: &[(AnchorId, Vec3)], reference: Vec3, t: f64) -> FrameUpdate {
        let mut selected: Vec<(AnchorId, Vec3)> = anchors
            .iter()
            .copied()
            .filter(|(_, p)| (*p - reference).norm() <= self.radius)
            .collect();
        selected.sort_by_key(|(id, _)| *id);
        selected.dedup_by_key(|(id, _)| *id);

        let Some(active) = &self.active else {
            if selected.is_empty() {
                // Nothing in range yet: fall back to the nearest anchor.
                if let Some(nearest) = anchors
                    .iter()
                    .min_by(|a, b| (a.1 - reference).norm().total_cmp(&(b.1 - reference).norm()))
                {
                    selected.push(*nearest);
                }
            }
            self.active = Some(frame_from_anchors(&selected));
            return FrameUpdate { frame_id: self.frame_id, previous: None };
        };
        let ids: Vec<AnchorId> = selected.iter().map(|(id, _)| *id).collect();
        if ids.is_empty() || ids == active.anchor_set {
            self.pending = None;
            return FrameUpdate { frame_id: self.frame_id, previous: None };
        }
        match &self.pending {
            Some((pending, since)) if *pending == ids => {
                if t - since >= self.hysteresis {
                    let previous = self.active.replace(frame_from_anchors(&selected));
                    self.frame_id += 1;
                    self.pending = None;
                    return FrameUpdate { frame_id: self.frame_id, previous };
                }
            }
            _ => self.pending = Some((ids, t)),
        }
        FrameUpdate { frame_id: self.frame_id, previous: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, span: f64) -> Pose {
        Pose::from_vector6([
            rng.random_range(-span..span),
            rng.random_range(-span..span),
            rng.random_range(-span..span),
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        ])
    }

    fn spread_anchors() -> Vec<(AnchorId, Vec3)> {
        vec![
            (0, Vec3::new(-4.0, -1.5, 0.3)),
            (1, Vec3::new(-1.0, -2.0, 2.5)),
            (2, Vec3::new(1.5, -1.0, 0.5)),
            (3, Vec3::new(4.2, -0.5, 2.2)),
            (4, Vec3::new(-3.0, 1.8, 2.4)),
            (5, Vec3::new(0.5, 2.2, 0.4)),
            (6, Vec3::new(3.5, 2.0, 2.6)),
        ]
    }

    #[test]
    fn symmetric_centroid_at_origin() {
        let a = vec![
            (0, Vec3::new(1.0, 0.0, 0.0)),
            (1, Vec3::new(-1.0, 0.0, 0.0)),
            (2, Vec3::new(0.0, 1.0, 0.0)),
            (3, Vec3::new(0.0, -1.0, 0.0)),
        ];
        let f = build_nominal(&a, 10.0, Vec3::ZERO).unwrap();
        assert!(f.origin.norm() < 1e-15);
        let m = f.rot.to_matrix();
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        assert!((det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_layout_along_x() {
        let a: Vec<_> = (0..5).map(|i| (i as u32, Vec3::new(i as f64 * 10.0, 0.0, 3.0))).collect();
        let f = build_nominal(&a, 1000.0, Vec3::ZERO).unwrap();
        let x_axis = f.rot.rotate(Vec3::X);
        assert!((x_axis - Vec3::X).norm() < 1e-12, "{x_axis:?}");
        let y_axis = f.rot.rotate(Vec3::Y);
        assert!((y_axis - Vec3::Y).norm() < 1e-12);
        assert!((f.origin - Vec3::new(20.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn principal_axes_match_covariance_oracle() {
        // Power iteration on the covariance is an independent route to the
        // principal direction.
        let a = spread_anchors();
        let f = build_nominal(&a, 100.0, Vec3::ZERO).unwrap();
        let c = a.iter().fold(Vec3::ZERO, |acc, (_, p)| acc + *p) * (1.0 / a.len() as f64);
        assert!((f.origin - c).norm() < 1e-9);
        let cov = |v: Vec3| {
            a.iter().fold(Vec3::ZERO, |acc, (_, p)| {
                let d = *p - c;
                acc + d * d.dot(v)
            })
        };
        let mut v = Vec3::new(1.0, 0.3, 0.2);
        for _ in 0..500 {
            v = cov(v).normalized();
        }
        let first = f.rot.rotate(Vec3::X);
        assert!(1.0 - first.dot(v).abs() < 1e-12);
        // Deflated power iteration for the second axis.
        let lambda1 = cov(v).dot(v);
        let mut w = Vec3::new(0.2, 1.0, -0.1);
        for _ in 0..500 {
            w = (cov(w) - v * (lambda1 * v.dot(w))).normalized();
        }
        let second = f.rot.rotate(Vec3::Y);
        assert!(1.0 - second.dot(w).abs() < 1e-9);
    }

    #[test]
    fn permutation_gives_identical_frame() {
        let mut a = spread_anchors();
        let f = build_nominal(&a, 100.0, Vec3::ZERO).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            a.shuffle(&mut rng);
            assert_eq!(build_nominal(&a, 100.0, Vec3::ZERO).unwrap(), f);
        }
    }

    #[test]
    fn no_anchors_in_radius_errors() {
        let a = spread_anchors();
        assert!(matches!(
            build_nominal(&a, 1.0, Vec3::new(100.0, 0.0, 0.0)),
            Err(Error::NoAnchorsInRadius { .. })
        ));
    }

    #[test]
    fn round_trip_and_origin() {
        let f = build_nominal(&spread_anchors(), 100.0, Vec3::ZERO).unwrap();
        let at_origin = Pose::new(Rotation::rz(0.4), f.origin);
        assert!(f.to_nominal(&at_origin).trans.norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let p = random_pose(&mut rng, 20.0);
            let back = f.to_nominal(&f.from_nominal(&p));
            assert!((back.trans - p.trans).norm() < 1e-9);
            assert!(back.rot.angle_to(&p.rot) < 1e-9);
        }
    }

    #[test]
    fn shared_translation_cancels() {
        let a = spread_anchors();
        let body = Pose::from_vector6([0.5, 0.2, 1.0, 0.0, 0.1, 0.7]);
        let f = build_nominal(&a, 100.0, Vec3::ZERO).unwrap();
        let shift = Vec3::new(100.0, 0.0, 0.0);
        let moved: Vec<_> = a.iter().map(|(id, p)| (*id, *p + shift)).collect();
        let g = build_nominal(&moved, 100.0, shift).unwrap();
        let moved_body = Pose::new(body.rot, body.trans + shift);
        let n1 = f.to_nominal(&body);
        let n2 = g.to_nominal(&moved_body);
        assert!((n1.trans - n2.trans).norm() < 1e-12);
    }

    #[test]
    fn rigid_motion_leaves_nominal_coordinates_unchanged() {
        let a = spread_anchors();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let g = random_pose(&mut rng, 500.0);
            let body = random_pose(&mut rng, 3.0);
            let f = build_nominal(&a, 100.0, Vec3::ZERO).unwrap();
            let moved: Vec<_> = a.iter().map(|(id, p)| (*id, g.transform_point(*p))).collect();
            let fg = build_nominal(&moved, 100.0, g.trans).unwrap();
            let n1 = f.to_nominal(&body);
            let n2 = fg.to_nominal(&g.compose(&body));
            assert!((n1.trans - n2.trans).norm() < 1e-9);
            assert!(n1.rot.angle_to(&n2.rot) < 1e-9);
        }
    }

    #[test]
    fn rebase_examples() {
        let f = build_nominal(&spread_anchors(), 100.0, Vec3::ZERO).unwrap();
        let p = Pose::from_vector6([1.0, 2.0, 0.5, 0.1, 0.2, 0.3]);
        let same = rebase(&f, &f, &p);
        assert!((same.trans - p.trans).norm() < 1e-12);

        let a = NominalFrame::from_pose(Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)), vec![]);
        let b = NominalFrame::from_pose(Pose::from_translation(Vec3::new(4.0, 2.0, 0.0)), vec![]);
        let moved = rebase(&a, &b, &Pose::IDENTITY);
        assert!((moved.trans - Vec3::new(-3.0, -2.0, 0.0)).norm() < 1e-12);

        let g = NominalFrame::from_pose(Pose::from_vector6([5.0, -3.0, 1.0, 0.1, 0.0, 1.2]), vec![]);
        let there_and_back = rebase(&g, &f, &rebase(&f, &g, &p));
        assert!((there_and_back.trans - p.trans).norm() < 1e-9);
        assert!(there_and_back.rot.angle_to(&p.rot) < 1e-9);
    }

    #[test]
    fn tracker_switches_after_hysteresis() {
        let anchors: Vec<_> = (0..10).map(|i| (i as u32, Vec3::new(i as f64 * 10.0, (i % 2) as f64 * 6.0, 3.0))).collect();
        let mut tr = FrameTracker::new(15.0, 1.0);
        tr.update(&anchors, Vec3::new(0.0, 0.0, 3.0), 0.0);
        assert_eq!(tr.active().unwrap().anchor_set, vec![0, 1]);
        // Moving on: the new selection must persist one second.
        let r = tr.update(&anchors, Vec3::new(20.0, 0.0, 3.0), 1.0);
        assert!(r.previous.is_none());
        let r = tr.update(&anchors, Vec3::new(20.0, 0.0, 3.0), 1.5);
        assert!(r.previous.is_none());
        let r = tr.update(&anchors, Vec3::new(20.0, 0.0, 3.0), 2.0);
        assert_eq!(r.previous.unwrap().anchor_set, vec![0, 1]);
        assert_eq!(r.frame_id, 1);
        assert_eq!(tr.active().unwrap().anchor_set, vec![1, 2, 3]);
    }

    #[test]
    fn frame_switches_preserve_world_trajectory() {
        let anchors: Vec<_> = (0..30).map(|i| (i as u32, Vec3::new(i as f64 * 10.0, (i % 2) as f64 * 6.0, 3.0))).collect();
        let mut tr = FrameTracker::new(25.0, 1.0);
        let mut prev_frame: Option<NominalFrame> = None;
        let mut carried: Option<Pose> = None;
        for k in 0..600 {
            let t = k as f64 * 0.1;
            let world = Pose::from_vector6([t * 4.0, 3.0 + (0.3 * t).sin(), 2.5, 0.0, 0.0, 0.2]);
            let up = tr.update(&anchors, world.trans, t);
            let frame = tr.active().unwrap().clone();
            if let (Some(prev), Some(c)) = (&prev_frame, carried) {
                // carry the previous epoch's nominal pose over the switch
                let rebased = rebase(prev, &frame, &c);
                let expected_prev_world = prev.from_nominal(&c);
                assert!((frame.from_nominal(&rebased).trans - expected_prev_world.trans).norm() < 1e-9);
                if up.previous.is_some() {
                    assert_eq!(up.previous.as_ref(), Some(prev));
                }
            }
            carried = Some(frame.to_nominal(&world));
            prev_frame = Some(frame);
        }
        assert!(tr.frame_id() > 5);
    }
}
