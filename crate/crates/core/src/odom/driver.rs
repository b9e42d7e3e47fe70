//! Sequential odometry over a dataset for every estimator mode.

use alloc::vec::Vec;

use super::graph::build_graph;
use super::inertial::InertialVars;
use super::posetape::{compose_prior, transform_pose};
use super::{pose_from_row, row6, EstimatorMode, OdomNet, PosePrior, PriorSource};
use crate::dataset::{Dataset, Epoch};
use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation};
use crate::lsq::{planar_fix, solve_pose_lm, LmOptions, LmReport, LsFix2D, PoseVector6, RangeObs};
use crate::nn::{ParamStore, Tape, Var};
use crate::nominal::{FrameTracker, NominalFrame, DEFAULT_RADIUS};
use crate::sensor::{ImuWindow, Scene};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryConfig {
    pub radius: f64,
    pub hysteresis: f64,
    pub lm: LmOptions,
    /// Epochs per tape; only affects memory, never values.
    pub chunk: usize,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self { radius: DEFAULT_RADIUS, hysteresis: 1.0, lm: LmOptions::default(), chunk: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsLog {
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub rank_deficient: bool,
    pub solution: [f64; 6],
}

impl LsLog {
    fn new(sol: &PoseVector6, rep: &LmReport) -> Self {
        Self {
            iterations: rep.iterations,
            final_cost: rep.final_cost,
            converged: rep.converged,
            rank_deficient: rep.rank_deficient,
            solution: sol.to_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub t: f64,
    pub mode: EstimatorMode,
    pub anchor_count: usize,
    pub range_count: usize,
    pub frame_id: usize,
    pub frame_switched: bool,
    /// No ranges at this epoch: the prior was passed through.
    pub held_prior: bool,
    pub ls: Option<LsLog>,
    pub prior_n: [f64; 6],
    pub estimate_n: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryOutput {
    pub mode: EstimatorMode,
    pub trajectory: Vec<TrajectoryPoint>,
    pub log: Vec<EpochLog>,
}

/// Epochs with the seed pose and the least-squares chain, which does not
/// depend on any network.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    pub epochs: Vec<Epoch>,
    pub seed: Pose,
    /// Indexed like `epochs`; the seed epoch has no solve.
    pub ls: Vec<Option<(PoseVector6, LmReport)>>,
}

impl PreparedSequence {
    pub fn new(dataset: &Dataset, scene: &Scene, with_ls: bool, lm: &LmOptions) -> Result<Self> {
        let epochs = dataset.epochs();
        let seed = epochs.first().and_then(|e| e.gt).ok_or(Error::Empty("ground-truth pose at the first epoch"))?;
        let mut ls = Vec::with_capacity(epochs.len());
        ls.push(None);
        let mut chi = PoseVector6::from_pose(&seed);
        for e in epochs.iter().skip(1) {
            if !with_ls || e.ranges.is_empty() {
                ls.push(None);
                continue;
            }
            let obs: Vec<RangeObs> = e.ranges.iter().map(|r| RangeObs { tag_id: r.tag_id, anchor_id: r.anchor_id, d: r.d }).collect();
            let (sol, rep) = solve_pose_lm(&obs, scene, chi, lm)?;
            chi = sol;
            ls.push(Some((sol, rep)));
        }
        Ok(Self { epochs, seed, ls })
    }

    /// Planar fix for the network, withheld when the solve leaves xy poorly
    /// determined.
    pub fn ls_fix(&self, k: usize) -> Option<LsFix2D> {
        self.ls[k].as_ref().filter(|(_, r)| fix_usable(r)).map(|(s, _)| planar_fix(s))
    }
}

/// Horizontal dilution of precision (in squared-range residual units) above
/// which an LS fix is not passed to the network. Well-spread anchors give
/// 0.02 to 0.07.
pub const MAX_FIX_HDOP: f64 = 0.2;

pub fn fix_usable(report: &LmReport) -> bool {
    !report.rank_deficient && report.dop[0].hypot(report.dop[1]) <= MAX_FIX_HDOP
}

pub(crate) fn check_mode_data(mode: EstimatorMode, dataset: &Dataset) -> Result<()> {
    if mode.uses_imu() && !dataset.has_imu() {
        return Err(Error::MissingImu(mode.as_str()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
/// Inertial part of one epoch; `None` for modes without the IMU branch.
pub(crate) fn inertial_step(
    tape: &mut Tape,
    net: &OdomNet,
    store: &ParamStore,
    mode: EstimatorMode,
    scene: &Scene,
    epoch: &Epoch,
    prev_rot_w: &Rotation,
    hidden: &[Var],
) -> Result<Option<InertialVars>> {
    if !mode.uses_imu() {
        return Ok(None);
    }
    if epoch.imu.is_empty() {
        return Err(Error::MissingImu(mode.as_str()));
    }
    let window = ImuWindow::from_body_samples(&epoch.imu, prev_rot_w, scene.gravity)?;
    let w = net.inertial.window_var(tape, &window)?;
    Ok(Some(net.inertial.forward(tape, store, w, hidden)?))
}

pub(crate) struct RangingStep {
    pub pred: Var,
    pub prior: Var,
    pub held: bool,
}

/// Prior update and ranging pass for one epoch in the active frame.
#[allow(clippy::too_many_arguments)]
pub(crate) fn ranging_step(
    tape: &mut Tape,
    net: &OdomNet,
    store: &ParamStore,
    mode: EstimatorMode,
    scene: &Scene,
    epoch: &Epoch,
    frame: &NominalFrame,
    prev_n: Var,
    ir: Option<&InertialVars>,
    ls_fix: Option<LsFix2D>,
) -> Result<RangingStep> {
    let prior = match ir {
        Some(ir) => compose_prior(tape, prev_n, ir.delta, &frame.rot.to_matrix())?,
        None => prev_n,
    };
    if epoch.ranges.is_empty() {
        return Ok(RangingStep { pred: prior, prior, held: true });
    }
    let source = if ir.is_some() { PriorSource::ImuPropagated } else { PriorSource::PreviousEstimate };
    let prior_pose = PosePrior { pose_n: pose_from_row(tape.value(prior)), source };
    let feat: Option<Vec<f64>> = ir.map(|ir| tape.value(ir.feat).to_vec());
    let ls = if mode.uses_ls() { ls_fix } else { None };
    let graph = build_graph(&epoch.ranges, scene, frame, &prior_pose, ls, feat.as_deref())?;
    let pred = net.ranging.forward(tape, store, &graph, prior, ir.map(|i| i.feat))?;
    Ok(RangingStep { pred, prior, held: false })
}

/// Re-expresses a pose row from one nominal frame in another.
pub(crate) fn rebase_var(tape: &mut Tape, pose: Var, old: &NominalFrame, new: &NominalFrame) -> Result<Var> {
    let inv = new.rot.inverse();
    let rel = inv * old.rot;
    let c = inv.rotate(old.origin - new.origin);
    transform_pose(tape, pose, &rel.to_matrix(), [c.x, c.y, c.z])
}

/// Runs one estimator over the dataset. The ground-truth pose of the first
/// epoch seeds the chain; output starts at the second epoch.
pub fn run_odometry(
    dataset: &Dataset,
    scene: &Scene,
    mode: EstimatorMode,
    net: Option<&OdomNet>,
    config: &OdometryConfig,
) -> Result<OdometryOutput> {
    check_mode_data(mode, dataset)?;
    let prep = PreparedSequence::new(dataset, scene, mode.uses_ls(), &config.lm)?;
    if mode == EstimatorMode::Uls {
        return Ok(run_ls(&prep, mode));
    }
    let net = net.ok_or_else(|| Error::MissingParam(alloc::format!("network parameters for mode {mode}")))?;
    let anchors = scene.anchor_list();
    let mut tracker = FrameTracker::new(config.radius, config.hysteresis);
    tracker.update(&anchors, prep.seed.trans, prep.epochs[0].t);
    let mut frame = tracker.active().expect("frame").clone();
    let mut prev_w = prep.seed;
    let mut prev_n = frame.to_nominal(&prep.seed).to_vector6();
    let mut hidden: Vec<Vec<f64>> = net.inertial.gru.layers.iter().map(|_| alloc::vec![0.0; net.inertial.hidden_dim()]).collect();
    let mut out = OdometryOutput { mode, trajectory: Vec::new(), log: Vec::new() };

    let indices: Vec<usize> = (1..prep.epochs.len()).collect();
    for chunk in indices.chunks(config.chunk.max(1)) {
        let mut tape = Tape::new();
        for &k in chunk {
            let epoch = &prep.epochs[k];
            let h: Vec<Var> = hidden.iter().map(|v| tape.constant_row(v)).collect();
            let ir = inertial_step(&mut tape, net, &net.store, mode, scene, epoch, &prev_w.rot, &h)?;
            let mut reference = prev_w.trans;
            if let Some(ir) = &ir {
                let d = tape.value(ir.delta);
                reference = reference + crate::geom::Vec3::new(d[0], d[1], d[2]);
            }
            let update = tracker.update(&anchors, reference, epoch.t);
            let mut prev_var = tape.constant_row(&prev_n);
            let switched = update.previous.is_some();
            if switched {
                let new = tracker.active().expect("frame").clone();
                prev_var = rebase_var(&mut tape, prev_var, &frame, &new)?;
                frame = new;
            }
            let step = ranging_step(&mut tape, net, &net.store, mode, scene, epoch, &frame, prev_var, ir.as_ref(), prep.ls_fix(k))?;
            let est_n = row6(tape.value(step.pred));
            let pose_n = Pose::from_vector6(est_n);
            let pose_w = frame.from_nominal(&pose_n);
            if !pose_w.is_finite() {
                return Err(Error::Degenerate("non-finite pose estimate"));
            }
            out.trajectory.push(TrajectoryPoint { t: epoch.t, pose: pose_w });
            out.log.push(EpochLog {
                t: epoch.t,
                mode,
                anchor_count: epoch.anchor_ids().len(),
                range_count: epoch.ranges.len(),
                frame_id: update.frame_id,
                frame_switched: switched,
                held_prior: step.held,
                ls: prep.ls[k].as_ref().map(|(s, r)| LsLog::new(s, r)),
                prior_n: row6(tape.value(step.prior)),
                estimate_n: est_n,
            });
            if let Some(ir) = &ir {
                hidden = ir.hidden.iter().map(|v| tape.value(*v).to_vec()).collect();
            }
            prev_n = est_n;
            prev_w = pose_w;
        }
    }
    Ok(out)
}

fn run_ls(prep: &PreparedSequence, mode: EstimatorMode) -> OdometryOutput {
    let mut out = OdometryOutput { mode, trajectory: Vec::new(), log: Vec::new() };
    let mut prev = PoseVector6::from_pose(&prep.seed);
    for (k, epoch) in prep.epochs.iter().enumerate().skip(1) {
        let (sol, ls) = match &prep.ls[k] {
            Some((s, r)) => (*s, Some(LsLog::new(s, r))),
            None => (prev, None),
        };
        out.trajectory.push(TrajectoryPoint { t: epoch.t, pose: sol.to_pose() });
        out.log.push(EpochLog {
            t: epoch.t,
            mode,
            anchor_count: epoch.anchor_ids().len(),
            range_count: epoch.ranges.len(),
            frame_id: 0,
            frame_switched: false,
            held_prior: ls.is_none(),
            ls,
            prior_n: prev.to_array(),
            estimate_n: sol.to_array(),
        });
        prev = sol;
    }
    out
}
