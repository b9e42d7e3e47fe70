//! Two-stage training: inertial pretraining on the relative loss, then joint
//! training of both networks on the total loss with scheduled sampling and
//! truncated backpropagation through time.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use super::loss::{pose_mse_var, LossConfig};
use crate::dataset::{Dataset, Epoch};
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::lsq::{planar_fix, solve_pose_lm, LsFix2D, PoseVector6, RangeObs};
use crate::nn::{Adam, ParamStore, Tape, Var};
use crate::nominal::{FrameTracker, NominalFrame};
use crate::odom::driver::{check_mode_data, fix_usable, inertial_step, ranging_step, rebase_var, PreparedSequence};
use crate::odom::{gt_delta, pose_from_row, row6, EstimatorMode, ModelConfig, OdomNet, OdometryConfig};
use crate::sensor::Scene;
use crate::simulate::{stream_rng, STREAM_DROPOUT, STREAM_SCHEDULE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: Adam,
    /// Joint-stage learning rate follows a cosine from `adam.lr` down to
    /// this fraction of it.
    pub lr_final_frac: f64,
    /// Joint-stage epochs.
    pub epochs: usize,
    /// Inertial pretraining epochs, used by IR modes only.
    pub pretrain_epochs: usize,
    /// Probability that an anchor is dropped from a training epoch.
    pub anchor_dropout: f64,
    pub clip_norm: f64,
    pub odometry: OdometryConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            adam: Adam::default(),
            lr_final_frac: 0.1,
            epochs: 200,
            pretrain_epochs: 20,
            anchor_dropout: 0.0,
            clip_norm: 1.0,
            odometry: OdometryConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rate for a stage epoch; pretraining uses the base rate.
    pub fn learning_rate(&self, stage: Stage, epoch: usize) -> f64 {
        if stage == Stage::Pretrain || self.epochs <= 1 {
            return self.adam.lr;
        }
        let c = 0.5 * (1.0 + (core::f64::consts::PI * epoch as f64 / (self.epochs - 1) as f64).cos());
        self.adam.lr * (self.lr_final_frac + (1.0 - self.lr_final_frac) * c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !(0.0..1.0).contains(&self.anchor_dropout) {
            return Err(Error::InvalidArgument(format!("anchor_dropout must be in [0, 1), got {}", self.anchor_dropout)));
        }
        if !(0.0..=1.0).contains(&self.lr_final_frac) {
            return Err(Error::InvalidArgument(format!("lr_final_frac must be in [0, 1], got {}", self.lr_final_frac)));
        }
        if !(self.adam.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("lr and clip_norm must be positive".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Joint,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub stage: Stage,
    pub l_rel: f64,
    pub l_abs: f64,
    pub l_total: f64,
    pub lr: f64,
    pub tf_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub net: OdomNet,
    pub log: Vec<TrainLogRow>,
}

impl TrainOutput {
    /// Final joint-stage loss below half of the first.
    pub fn gate_passed(&self) -> bool {
        let mut joint = self.log.iter().filter(|r| r.stage == Stage::Joint);
        match (joint.next(), joint.last()) {
            (Some(first), Some(last)) => last.l_total < 0.5 * first.l_total,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainSequence<'a> {
    pub dataset: &'a Dataset,
    pub scene: &'a Scene,
}

/// Per-sequence data that stays fixed during training. Nominal frames follow
/// the ground-truth position.
struct SeqData<'a> {
    scene: &'a Scene,
    prep: PreparedSequence,
    gt_w: Vec<Pose>,
    frames: Vec<NominalFrame>,
    frame_of: Vec<usize>,
    gt_n: Vec<[f64; 6]>,
    gt_delta: Vec<[f64; 6]>,
}

impl<'a> SeqData<'a> {
    fn new(seq: &TrainSequence<'a>, mode: EstimatorMode, cfg: &OdometryConfig) -> Result<Self> {
        check_mode_data(mode, seq.dataset)?;
        let prep = PreparedSequence::new(seq.dataset, seq.scene, mode.uses_ls(), &cfg.lm)?;
        let gt_w: Vec<Pose> = prep
            .epochs
            .iter()
            .enumerate()
            .map(|(k, e)| e.gt.ok_or_else(|| Error::InvalidArgument(format!("training epoch {k} has no ground truth"))))
            .collect::<Result<_>>()?;
        if gt_w.len() < 2 {
            return Err(Error::Empty("training sequence needs two epochs"));
        }
        let anchors = seq.scene.anchor_list();
        let mut tracker = FrameTracker::new(cfg.radius, cfg.hysteresis);
        let mut frames = Vec::new();
        let mut frame_of = Vec::with_capacity(gt_w.len());
        for (e, g) in prep.epochs.iter().zip(&gt_w) {
            let u = tracker.update(&anchors, g.trans, e.t);
            if frames.is_empty() || u.previous.is_some() {
                frames.push(tracker.active().expect("frame").clone());
            }
            frame_of.push(frames.len() - 1);
        }
        let gt_n = gt_w.iter().zip(&frame_of).map(|(g, &f)| frames[f].to_nominal(g).to_vector6()).collect();
        let mut deltas = vec![[0.0; 6]];
        deltas.extend(gt_w.windows(2).map(|w| gt_delta(&w[0], &w[1])));
        Ok(Self { scene: seq.scene, prep, gt_w, frames, frame_of, gt_n, gt_delta: deltas })
    }

    fn len(&self) -> usize {
        self.gt_w.len()
    }

    fn clean_ls(&self) -> Vec<Option<LsFix2D>> {
        (0..self.len()).map(|k| self.prep.ls_fix(k)).collect()
    }

    /// Epochs with anchors dropped independently with probability `p`. The
    /// dropped set is held for `hold` consecutive epochs so that outages
    /// persist as they do at test time. LS fixes of altered epochs are
    /// re-solved on the remaining ranges, warm-started from the previous
    /// epoch's solution as at inference.
    fn with_dropout<R: Rng>(&self, p: f64, hold: usize, rng: &mut R, mode: EstimatorMode, cfg: &OdometryConfig) -> Result<(Vec<Epoch>, Vec<Option<LsFix2D>>)> {
        let mut epochs = self.prep.epochs.clone();
        let mut ls = self.clean_ls();
        if p <= 0.0 {
            return Ok((epochs, ls));
        }
        let mut dropped: Vec<u32> = Vec::new();
        for block in (1..epochs.len()).collect::<Vec<_>>().chunks(hold.max(1)) {
            let mut ids: Vec<u32> = block.iter().flat_map(|&k| epochs[k].anchor_ids()).collect();
            ids.sort_unstable();
            ids.dedup();
            dropped.clear();
            dropped.extend(ids.into_iter().filter(|_| rng.random::<f64>() < p));
            for &k in block {
                epochs[k].ranges.retain(|r| !dropped.contains(&r.anchor_id));
            }
        }
        let mut chi = PoseVector6::from_pose(&self.prep.seed);
        for k in 1..epochs.len() {
            if epochs[k].ranges.len() != self.prep.epochs[k].ranges.len() {
                ls[k] = None;
                if mode.uses_ls() && !epochs[k].ranges.is_empty() {
                    let obs: Vec<RangeObs> =
                        epochs[k].ranges.iter().map(|r| RangeObs { tag_id: r.tag_id, anchor_id: r.anchor_id, d: r.d }).collect();
                    let (sol, rep) = solve_pose_lm(&obs, self.scene, chi, &cfg.lm)?;
                    ls[k] = fix_usable(&rep).then(|| planar_fix(&sol));
                    chi = sol;
                }
            } else if let Some((s, _)) = &self.prep.ls[k] {
                chi = *s;
            }
        }
        Ok((epochs, ls))
    }
}

/// State handed from one truncated chunk to the next as plain values.
#[derive(Debug, Clone)]
struct Carry {
    prev_n: [f64; 6],
    prev_frame: usize,
    hidden: Vec<Vec<f64>>,
}

impl Carry {
    fn start(seq: &SeqData, net: &OdomNet) -> Self {
        Self {
            prev_n: seq.gt_n[0],
            prev_frame: seq.frame_of[0],
            hidden: net.inertial.gru.layers.iter().map(|_| vec![0.0; net.inertial.hidden_dim()]).collect(),
        }
    }
}

/// Attitude used to remove gravity from the IMU window on free-running steps.
/// Inference only has its own estimate, so training feeds the same value as
/// a constant; `Truth` keeps the loss a smooth function of the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Attitude {
    Truth,
    Estimate,
}

struct Unrolled {
    total: Var,
    rel: f64,
    abs: f64,
    carry: Carry,
}

#[allow(clippy::too_many_arguments)]
fn unroll(
    tape: &mut Tape,
    net: &OdomNet,
    store: &ParamStore,
    mode: EstimatorMode,
    stage: Stage,
    seq: &SeqData,
    epochs: &[Epoch],
    ls: &[Option<LsFix2D>],
    range: Range<usize>,
    teacher: &[bool],
    carry: &Carry,
    loss: &LossConfig,
    attitude: Attitude,
) -> Result<Unrolled> {
    let mut hidden: Vec<Var> = carry.hidden.iter().map(|h| tape.constant_row(h)).collect();
    let mut own = tape.constant_row(&carry.prev_n);
    let mut own_frame = carry.prev_frame;
    let (mut deltas, mut delta_gt, mut preds, mut pred_gt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());

    for (k, &forced) in range.clone().zip(teacher) {
        let fi = seq.frame_of[k];
        let frame = &seq.frames[fi];
        let prev_var = if stage == Stage::Pretrain || forced {
            let v = frame.to_nominal(&seq.gt_w[k - 1]).to_vector6();
            tape.constant_row(&v)
        } else if own_frame != fi {
            rebase_var(tape, own, &seq.frames[own_frame], frame)?
        } else {
            own
        };
        let att = if stage == Stage::Pretrain || forced || attitude == Attitude::Truth {
            seq.gt_w[k - 1].rot
        } else {
            frame.from_nominal(&pose_from_row(tape.value(prev_var))).rot
        };
        let ir = inertial_step(tape, net, store, mode, seq.scene, &epochs[k], &att, &hidden)?;
        if let Some(ir) = &ir {
            deltas.push(ir.delta);
            delta_gt.push(seq.gt_delta[k]);
            hidden = ir.hidden.clone();
        }
        if stage == Stage::Pretrain {
            continue;
        }
        let step = ranging_step(tape, net, store, mode, seq.scene, &epochs[k], frame, prev_var, ir.as_ref(), ls[k])?;
        preds.push(step.pred);
        pred_gt.push(seq.gt_n[k]);
        own = step.pred;
        own_frame = fi;
    }

    let rel = if deltas.is_empty() { None } else { Some(pose_mse_var(tape, &deltas, &delta_gt, loss.rotation_weight)?) };
    let abs = if preds.is_empty() { None } else { Some(pose_mse_var(tape, &preds, &pred_gt, loss.rotation_weight)?) };
    let total = match (rel, abs) {
        (Some(r), Some(a)) => {
            let r = tape.scale(r, loss.lambda_rel);
            tape.add(r, a)?
        }
        (Some(r), None) => r,
        (None, Some(a)) => a,
        (None, None) => return Err(Error::Empty("training chunk")),
    };
    let next = Carry {
        prev_n: if stage == Stage::Pretrain { carry.prev_n } else { row6(tape.value(own)) },
        prev_frame: own_frame,
        hidden: hidden.iter().map(|h| tape.value(*h).to_vec()).collect(),
    };
    Ok(Unrolled {
        total,
        rel: rel.map_or(0.0, |v| tape.scalar(v)),
        abs: abs.map_or(0.0, |v| tape.scalar(v)),
        carry: next,
    })
}

/// Loss of one whole sequence on a single tape, for gradient checks on short
/// sequences. Gravity is removed with the true attitude throughout.
pub fn sequence_loss(
    tape: &mut Tape,
    net: &OdomNet,
    store: &ParamStore,
    mode: EstimatorMode,
    seq: &TrainSequence,
    config: &TrainConfig,
    teacher_forced: bool,
) -> Result<Var> {
    let data = SeqData::new(seq, mode, &config.odometry)?;
    let range = 1..data.len();
    let teacher = vec![teacher_forced; range.len()];
    let ls = data.clean_ls();
    let carry = Carry::start(&data, net);
    Ok(unroll(tape, net, store, mode, Stage::Joint, &data, &data.prep.epochs, &ls, range, &teacher, &carry, &config.loss, Attitude::Truth)?.total)
}

/// Trains a fresh network for `mode` on the given sequences.
pub fn train(sequences: &[TrainSequence], mode: EstimatorMode, config: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    config.validate()?;
    if !mode.uses_net() {
        return Err(Error::InvalidArgument(format!("mode {mode} has no trainable parameters")));
    }
    if sequences.is_empty() {
        return Err(Error::Empty("training sequences"));
    }
    let data: Vec<SeqData> = sequences.iter().map(|s| SeqData::new(s, mode, &config.odometry)).collect::<Result<_>>()?;
    let mut net = OdomNet::new(config.model, seed)?;
    let mut sched = stream_rng(seed, STREAM_SCHEDULE);
    let mut drop_rng = stream_rng(seed, STREAM_DROPOUT);
    let mut log = Vec::new();

    let mut stages = Vec::new();
    if mode.uses_imu() {
        stages.extend((0..config.pretrain_epochs).map(|e| (Stage::Pretrain, e)));
    }
    stages.extend((0..config.epochs).map(|e| (Stage::Joint, e)));

    for (epoch, (stage, stage_epoch)) in stages.into_iter().enumerate() {
        let tf_prob = if stage == Stage::Joint { config.loss.teacher_forcing_prob(stage_epoch) } else { 1.0 };
        let adam = Adam { lr: config.learning_rate(stage, stage_epoch), ..config.adam };
        let (mut rel_sum, mut abs_sum, mut count) = (0.0, 0.0, 0usize);
        for seq in &data {
            let (epochs, ls) = if stage == Stage::Joint {
                seq.with_dropout(config.anchor_dropout, config.loss.bptt_len, &mut drop_rng, mode, &config.odometry)?
            } else {
                (seq.prep.epochs.clone(), seq.clean_ls())
            };
            let mut carry = Carry::start(seq, &net);
            let indices: Vec<usize> = (1..seq.len()).collect();
            for chunk in indices.chunks(config.loss.bptt_len) {
                let range = chunk[0]..chunk[chunk.len() - 1] + 1;
                let teacher: Vec<bool> = chunk.iter().map(|_| sched.random::<f64>() < tf_prob).collect();
                let mut tape = Tape::new();
                let out = unroll(&mut tape, &net, &net.store, mode, stage, seq, &epochs, &ls, range, &teacher, &carry, &config.loss, Attitude::Estimate)?;
                let value = tape.scalar(out.total);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        detail: format!("{} stage, chunk starting at t = {:.3} s: loss {value}", stage.as_str(), seq.prep.epochs[chunk[0]].t),
                    });
                }
                tape.backward(out.total)?;
                tape.accumulate_param_grads(&mut net.store)?;
                net.store.clip_grad_norm(config.clip_norm);
                net.store.adam_step(&adam);
                rel_sum += out.rel * chunk.len() as f64;
                abs_sum += out.abs * chunk.len() as f64;
                count += chunk.len();
                carry = out.carry;
            }
        }
        let l_rel = rel_sum / count as f64;
        let l_abs = abs_sum / count as f64;
        let l_total = if stage == Stage::Pretrain { l_rel } else { l_rel * config.loss.lambda_rel + l_abs };
        log.push(TrainLogRow { epoch, stage, l_rel, l_abs, l_total, lr: adam.lr, tf_prob });
    }
    Ok(TrainOutput { net, log })
}
