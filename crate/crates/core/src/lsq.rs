//! Range-based nonlinear least squares.
//!
//! The pose residual keeps the squared-distance form
//! `r = |R(chi) t_tag + t(chi) - a|^2 - d^2`, so residuals are weighted by
//! roughly `2 d` relative to the plain range difference. Biases are not
//! estimated; the solver treats every range as unbiased.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, EulerAngles, Mat3, Pose, Rotation, Vec3};
use crate::linalg::{cholesky_solve, symmetric_eigen};
use crate::nominal::NominalFrame;
use crate::sensor::{AnchorId, Scene, TagId};

/// `[x, y, z, roll, pitch, yaw]` solved for by the pose least squares.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseVector6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl PoseVector6 {
    pub fn from_array(v: [f64; 6]) -> Self {
        Self { x: v[0], y: v[1], z: v[2], roll: v[3], pitch: v[4], yaw: v[5] }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }

    pub fn from_pose(p: &Pose) -> Self {
        Self::from_array(p.to_vector6())
    }

    pub fn to_pose(self) -> Pose {
        Pose::from_vector6(self.to_array())
    }

    pub fn position(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn wrapped(self) -> Self {
        Self { roll: wrap_angle(self.roll), pitch: wrap_angle(self.pitch), yaw: wrap_angle(self.yaw), ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixFrame {
    World,
    Nominal,
}

/// Planar position fix taken from a pose solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsFix2D {
    pub x: f64,
    pub y: f64,
    pub frame: FixFrame,
}

impl LsFix2D {
    /// Expresses a world-frame fix in the nominal frame by mapping `(x, y, 0)`.
    pub fn to_nominal(&self, frame: &NominalFrame) -> LsFix2D {
        match self.frame {
            FixFrame::Nominal => *self,
            FixFrame::World => {
                let p = frame.point_to_nominal(Vec3::new(self.x, self.y, 0.0));
                LsFix2D { x: p.x, y: p.y, frame: FixFrame::Nominal }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iters: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            initial_lambda: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.5,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.gradient_tol > 0.0
            && self.step_tol > 0.0
            && self.initial_lambda > 0.0
            && self.lambda_up > 0.0
            && self.lambda_down > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("LM options must all be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    /// Damping grew without finding a decrease; the current point is kept.
    LambdaOverflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Smallest over largest eigenvalue of `J^T J` at the solution.
    pub condition: f64,
    pub rank_deficient: bool,
    /// Per-parameter flag: the parameter has weight in a weakly observed
    /// direction of `J^T J`.
    pub ill_conditioned: Vec<bool>,
    /// Per-parameter standard deviation for unit noise on each residual,
    /// from `(J^T J)^-1` at the solution; infinite along null directions.
    pub dop: Vec<f64>,
}

/// A least-squares problem with `n` parameters.
pub trait Residuals {
    fn num_params(&self) -> usize;
    /// Residual vector and row-major Jacobian (`m x n`).
    fn evaluate(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>);
    fn cost(&self, x: &[f64]) -> f64 {
        0.5 * self.evaluate(x).0.iter().map(|r| r * r).sum::<f64>()
    }
}

const WEAK_EIGEN_RATIO: f64 = 1e-6;
const RANK_EIGEN_RATIO: f64 = 1e-10;

/// Levenberg-Marquardt with `J^T J + lambda I` damping and a multiplicative
/// lambda schedule.
pub fn levenberg_marquardt<P: Residuals>(problem: &P, x0: &[f64], opts: &LmOptions) -> (Vec<f64>, LmReport) {
    let n = problem.num_params();
    let mut x = x0.to_vec();
    let (mut r, mut jac) = problem.evaluate(&x);
    let mut cost = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let mut lambda = opts.initial_lambda;
    let mut history = vec![cost];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    let normal_eq = |r: &[f64], jac: &[f64]| {
        let m = r.len();
        let mut jtj = vec![0.0; n * n];
        let mut g = vec![0.0; n];
        for row in 0..m {
            let jr = &jac[row * n..(row + 1) * n];
            for i in 0..n {
                g[i] += jr[i] * r[row];
                for j in 0..n {
                    jtj[i * n + j] += jr[i] * jr[j];
                }
            }
        }
        (jtj, g)
    };

    let (mut jtj, mut g) = normal_eq(&r, &jac);
    while iterations < opts.max_iters {
        if g.iter().fold(0.0_f64, |m, v| m.max(v.abs())) < opts.gradient_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        iterations += 1;
        let mut a = jtj.clone();
        for i in 0..n {
            a[i * n + i] += lambda;
        }
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = match cholesky_solve(&a, &neg_g, n) {
            Some(s) => s,
            None => {
                lambda *= opts.lambda_up;
                if lambda > 1e16 {
                    termination = Termination::LambdaOverflow;
                    break;
                }
                continue;
            }
        };
        let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step_norm < opts.step_tol * (x_norm + opts.step_tol) {
            termination = Termination::StepTolerance;
            break;
        }
        let candidate: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let (r_new, jac_new) = problem.evaluate(&candidate);
        let cost_new = 0.5 * r_new.iter().map(|v| v * v).sum::<f64>();
        if cost_new.is_finite() && cost_new < cost {
            x = candidate;
            r = r_new;
            jac = jac_new;
            cost = cost_new;
            history.push(cost);
            let ne = normal_eq(&r, &jac);
            jtj = ne.0;
            g = ne.1;
            lambda = (lambda * opts.lambda_down).max(1e-15);
        } else {
            lambda *= opts.lambda_up;
            if lambda > 1e16 {
                termination = Termination::LambdaOverflow;
                break;
            }
        }
    }

    let eig = symmetric_eigen(&jtj, n);
    let max_eig = eig.values.first().copied().unwrap_or(0.0);
    let min_eig = eig.values.last().copied().unwrap_or(0.0);
    let condition = if max_eig > 0.0 { (min_eig / max_eig).max(0.0) } else { 0.0 };
    let mut weight = vec![0.0; n];
    let mut var = vec![0.0; n];
    for (val, vec) in eig.values.iter().zip(&eig.vectors) {
        for i in 0..n {
            var[i] += if *val > 0.0 { vec[i] * vec[i] / val } else { f64::INFINITY };
        }
        if max_eig <= 0.0 || *val <= WEAK_EIGEN_RATIO * max_eig {
            for i in 0..n {
                weight[i] += vec[i] * vec[i];
            }
        }
    }
    let converged = matches!(termination, Termination::GradientTolerance | Termination::StepTolerance);
    let report = LmReport {
        iterations,
        final_cost: cost,
        converged,
        termination,
        cost_history: history,
        condition,
        rank_deficient: condition <= RANK_EIGEN_RATIO,
        ill_conditioned: weight.iter().map(|w| *w > 0.25).collect(),
        dop: var.iter().map(|v| v.sqrt()).collect(),
    };
    (x, report)
}

fn rotation_factors(roll: f64, pitch: f64, yaw: f64) -> [(Mat3, Mat3); 3] {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    let drx = [[0.0, 0.0, 0.0], [0.0, -sr, -cr], [0.0, cr, -sr]];
    let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
    let dry = [[-sp, 0.0, cp], [0.0, 0.0, 0.0], [-cp, 0.0, -sp]];
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    let drz = [[-sy, -cy, 0.0], [cy, -sy, 0.0], [0.0, 0.0, 0.0]];
    [(rx, drx), (ry, dry), (rz, drz)]
}

fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Tag position in the world frame and its derivatives with respect to roll,
/// pitch and yaw.
fn tag_world(chi: &PoseVector6, tag_ext: Vec3) -> (Vec3, [Vec3; 3]) {
    let [(rx, drx), (ry, dry), (rz, drz)] = rotation_factors(chi.roll, chi.pitch, chi.yaw);
    let t = tag_ext.to_array();
    let chain = |a: &Mat3, b: &Mat3, c: &Mat3| Vec3::from_array(apply(a, apply(b, apply(c, t))));
    let p = chain(&rz, &ry, &rx) + chi.position();
    (p, [chain(&rz, &ry, &drx), chain(&rz, &dry, &rx), chain(&drz, &ry, &rx)])
}

/// Squared-distance range residual.
pub fn range_residual(chi: &PoseVector6, tag_ext: Vec3, anchor: Vec3, d: f64) -> f64 {
    let (p, _) = tag_world(chi, tag_ext);
    (p - anchor).norm_squared() - d * d
}

/// Analytic gradient of [`range_residual`] with respect to
/// `[x, y, z, roll, pitch, yaw]`.
pub fn range_residual_jacobian(chi: &PoseVector6, tag_ext: Vec3, anchor: Vec3, _d: f64) -> [f64; 6] {
    let (p, dp) = tag_world(chi, tag_ext);
    let q = (p - anchor) * 2.0;
    [q.x, q.y, q.z, q.dot(dp[0]), q.dot(dp[1]), q.dot(dp[2])]
}

/// One range used by the pose solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeObs {
    pub tag_id: TagId,
    pub anchor_id: AnchorId,
    pub d: f64,
}

struct PoseProblem {
    rows: Vec<(Vec3, Vec3, f64)>,
}

impl Residuals for PoseProblem {
    fn num_params(&self) -> usize {
        6
    }

    fn evaluate(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let chi = PoseVector6::from_array([x[0], x[1], x[2], x[3], x[4], x[5]]);
        let mut r = Vec::with_capacity(self.rows.len());
        let mut jac = Vec::with_capacity(6 * self.rows.len());
        for &(tag, anchor, d) in &self.rows {
            r.push(range_residual(&chi, tag, anchor, d));
            jac.extend_from_slice(&range_residual_jacobian(&chi, tag, anchor, d));
        }
        (r, jac)
    }
}

/// Solves the 6-DoF body pose from one epoch of ranges. Underdetermined
/// systems are not an error: the best local fit is returned with
/// `rank_deficient` set.
pub fn solve_pose_lm(
    measurements: &[RangeObs],
    scene: &Scene,
    chi0: PoseVector6,
    opts: &LmOptions,
) -> Result<(PoseVector6, LmReport)> {
    if measurements.is_empty() {
        return Err(Error::Empty("range measurements"));
    }
    if !chi0.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("initial pose must be finite".into()));
    }
    opts.validate()?;
    let rows = measurements
        .iter()
        .map(|m| Ok((scene.tag(m.tag_id)?, scene.anchor(m.anchor_id)?, m.d)))
        .collect::<Result<Vec<_>>>()?;
    let problem = PoseProblem { rows };
    let (x, report) = levenberg_marquardt(&problem, &chi0.to_array(), opts);
    let sol = PoseVector6::from_array([x[0], x[1], x[2], x[3], x[4], x[5]]);
    // Canonicalize the angles through a rotation round trip.
    let e = Rotation::from_euler(EulerAngles::new(sol.roll, sol.pitch, sol.yaw)).to_euler();
    Ok((PoseVector6 { roll: e.roll, pitch: e.pitch, yaw: e.yaw, ..sol }, report))
}

/// Default first-epoch guess: anchor centroid, zero rotation.
pub fn centroid_guess(scene: &Scene) -> PoseVector6 {
    let n = scene.anchors.len() as f64;
    let c = scene.anchors.values().fold(Vec3::ZERO, |acc, a| acc + *a) * (1.0 / n);
    PoseVector6 { x: c.x, y: c.y, z: c.z, ..Default::default() }
}

pub fn planar_fix(solution: &PoseVector6) -> LsFix2D {
    LsFix2D { x: solution.x, y: solution.y, frame: FixFrame::World }
}

/// One range observed from a known body pose, for anchor surveying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorObservation {
    pub pose: Pose,
    pub tag_id: TagId,
    pub anchor_id: AnchorId,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSolution {
    pub positions: BTreeMap<AnchorId, Vec3>,
    /// Anchors with fewer than the minimum observation count, and their count.
    pub excluded: Vec<(AnchorId, usize)>,
    pub ill_conditioned: Vec<AnchorId>,
    pub reports: BTreeMap<AnchorId, LmReport>,
}

pub const MIN_ANCHOR_OBSERVATIONS: usize = 4;

struct AnchorProblem {
    tag_points: Vec<(Vec3, f64)>,
}

impl Residuals for AnchorProblem {
    fn num_params(&self) -> usize {
        3
    }

    fn evaluate(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let a = Vec3::new(x[0], x[1], x[2]);
        let mut r = Vec::with_capacity(self.tag_points.len());
        let mut jac = Vec::with_capacity(3 * self.tag_points.len());
        for &(p, d) in &self.tag_points {
            let q = p - a;
            r.push(q.norm_squared() - d * d);
            jac.extend_from_slice(&[-2.0 * q.x, -2.0 * q.y, -2.0 * q.z]);
        }
        (r, jac)
    }
}

/// Surveys anchor positions from ranges taken at known body poses. Each
/// anchor is solved independently with the poses held fixed.
pub fn solve_anchor_positions(
    batch: &[AnchorObservation],
    tags: &BTreeMap<TagId, Vec3>,
    init: &BTreeMap<AnchorId, Vec3>,
    opts: &LmOptions,
) -> Result<AnchorSolution> {
    opts.validate()?;
    let mut grouped: BTreeMap<AnchorId, Vec<(Vec3, f64)>> = BTreeMap::new();
    for obs in batch {
        let tag = tags.get(&obs.tag_id).copied().ok_or(Error::UnknownTag(obs.tag_id))?;
        grouped.entry(obs.anchor_id).or_default().push((obs.pose.transform_point(tag), obs.d));
    }
    let mut out = AnchorSolution {
        positions: BTreeMap::new(),
        excluded: Vec::new(),
        ill_conditioned: Vec::new(),
        reports: BTreeMap::new(),
    };
    for (id, tag_points) in grouped {
        if tag_points.len() < MIN_ANCHOR_OBSERVATIONS {
            out.excluded.push((id, tag_points.len()));
            continue;
        }
        let start = match init.get(&id) {
            Some(p) => *p,
            None => {
                let c = tag_points.iter().fold(Vec3::ZERO, |acc, (p, _)| acc + *p)
                    * (1.0 / tag_points.len() as f64);
                c + Vec3::new(0.0, 0.0, 1.0)
            }
        };
        let problem = AnchorProblem { tag_points };
        let (x, report) = levenberg_marquardt(&problem, &start.to_array(), opts);
        if report.rank_deficient || report.ill_conditioned.iter().any(|b| *b) {
            out.ill_conditioned.push(id);
        }
        out.positions.insert(id, Vec3::new(x[0], x[1], x[2]));
        out.reports.insert(id, report);
    }
    Ok(out)
}
