//! Absolute pose error and the split evaluations for the envelope and
//! anchor-missing scenarios.

use alloc::vec::Vec;

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::odom::TrajectoryPoint;
use crate::sensor::{GroundTruthPose, Scene};
use crate::simulate::MaskWindow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApeSample {
    pub t: f64,
    pub err_xy: f64,
    pub err_xyz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApeResult {
    pub rmse_xy: f64,
    pub rmse_xyz: f64,
    pub errors: Vec<ApeSample>,
}

impl ApeResult {
    pub fn from_samples(errors: Vec<ApeSample>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Empty("no estimate overlaps the ground truth"));
        }
        let n = errors.len() as f64;
        let rmse_xy = (errors.iter().map(|e| e.err_xy * e.err_xy).sum::<f64>() / n).sqrt();
        let rmse_xyz = (errors.iter().map(|e| e.err_xyz * e.err_xyz).sum::<f64>() / n).sqrt();
        Ok(Self { rmse_xy, rmse_xyz, errors })
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Pairs every estimate with the nearest ground-truth pose within
/// `1 / (2 uwb_rate)`. Estimates without a partner are skipped.
pub fn associate(trajectory: &[TrajectoryPoint], gt: &[GroundTruthPose], uwb_rate: f64) -> Vec<(f64, Vec3, Vec3)> {
    let tol = 0.5 / uwb_rate;
    let mut sorted: Vec<&GroundTruthPose> = gt.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut out = Vec::with_capacity(trajectory.len());
    for p in trajectory {
        let i = sorted.partition_point(|g| g.t < p.t);
        let best = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| sorted.get(j))
            .min_by(|a, b| (a.t - p.t).abs().total_cmp(&(b.t - p.t).abs()));
        if let Some(g) = best.filter(|g| (g.t - p.t).abs() <= tol) {
            out.push((p.t, p.pose.trans, g.pose.trans));
        }
    }
    out
}

fn sample(t: f64, est: Vec3, gt: Vec3) -> ApeSample {
    let d = est - gt;
    ApeSample { t, err_xy: (d.x * d.x + d.y * d.y).sqrt(), err_xyz: d.norm() }
}

/// Position RMSE in the shared world frame, with no alignment.
pub fn ape(trajectory: &[TrajectoryPoint], gt: &[GroundTruthPose], uwb_rate: f64) -> Result<ApeResult> {
    ApeResult::from_samples(associate(trajectory, gt, uwb_rate).into_iter().map(|(t, e, g)| sample(t, e, g)).collect())
}

/// Convex hull of the anchors' xy projection, counter-clockwise.
pub fn anchor_hull(scene: &Scene) -> Result<Vec<[f64; 2]>> {
    let mut pts: Vec<[f64; 2]> = scene.anchors.values().map(|a| [a.x, a.y]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let hull = convex_hull(&pts);
    if hull.len() < 3 {
        return Err(Error::Degenerate("anchor hull needs three non-collinear xy positions"));
    }
    Ok(hull)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone chain over points sorted by (x, y); collinear points are dropped.
pub fn convex_hull(sorted: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if sorted.len() < 3 {
        return sorted.to_vec();
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in sorted {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in sorted.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Inside or on the boundary of a counter-clockwise convex polygon.
pub fn point_in_hull(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChallengeKind {
    Envelope,
    AnchorMissing(Vec<MaskWindow>),
}

/// APE split into two labelled segments; an empty segment is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChallengeSplit {
    pub labels: [&'static str; 2],
    pub segments: [Option<ApeResult>; 2],
    pub overall: ApeResult,
}

impl ChallengeSplit {
    /// Second-segment xyz RMSE over the first; `None` if either is empty.
    pub fn ratio_xyz(&self) -> Option<f64> {
        match &self.segments {
            [Some(a), Some(b)] => Some(b.rmse_xyz / a.rmse_xyz),
            _ => None,
        }
    }
}

/// Envelope: `inside` / `outside` the anchor hull. Anchor missing: `normal` /
/// `missing` by mask window.
pub fn challenge_eval(
    kind: &ChallengeKind,
    trajectory: &[TrajectoryPoint],
    gt: &[GroundTruthPose],
    scene: &Scene,
    uwb_rate: f64,
) -> Result<ChallengeSplit> {
    let pairs = associate(trajectory, gt, uwb_rate);
    let (labels, second): ([&'static str; 2], Vec<bool>) = match kind {
        ChallengeKind::Envelope => {
            let hull = anchor_hull(scene)?;
            (["inside", "outside"], pairs.iter().map(|(_, _, g)| !point_in_hull(&hull, [g.x, g.y])).collect())
        }
        ChallengeKind::AnchorMissing(windows) => {
            if windows.is_empty() {
                return Err(Error::Empty("mask windows"));
            }
            (["normal", "missing"], pairs.iter().map(|(t, _, _)| windows.iter().any(|w| w.contains(*t))).collect())
        }
    };
    let mut parts = [Vec::new(), Vec::new()];
    for (&(t, e, g), s) in pairs.iter().zip(&second) {
        parts[*s as usize].push(sample(t, e, g));
    }
    let overall = ApeResult::from_samples(pairs.iter().map(|&(t, e, g)| sample(t, e, g)).collect())?;
    let [a, b] = parts;
    let seg = |v: Vec<ApeSample>| if v.is_empty() { None } else { ApeResult::from_samples(v).ok() };
    Ok(ChallengeSplit { labels, segments: [seg(a), seg(b)], overall })
}
