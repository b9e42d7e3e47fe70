//! Pose losses: mean squared error over 6-vectors with wrapped angle
//! differences and a weight on the rotation components.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::wrap_angle;
use crate::nn::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_rel: f64,
    /// Weight of squared radians relative to squared meters.
    pub rotation_weight: f64,
    pub bptt_len: usize,
    /// Training epoch at which the teacher-forcing probability reaches zero.
    pub teacher_forcing_end_epoch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_rel: 1.0, rotation_weight: 1.0, bptt_len: 50, teacher_forcing_end_epoch: 20 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rel >= 0.0 && self.lambda_rel.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda_rel must be finite and >= 0, got {}", self.lambda_rel)));
        }
        if !(self.rotation_weight >= 0.0 && self.rotation_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("rotation_weight must be finite and >= 0, got {}", self.rotation_weight)));
        }
        if self.bptt_len == 0 {
            return Err(Error::InvalidArgument("bptt_len must be positive".into()));
        }
        Ok(())
    }

    /// Probability of feeding the ground-truth prior at a training epoch;
    /// falls linearly from 1 and is exactly 0 from the end epoch on.
    pub fn teacher_forcing_prob(&self, epoch: usize) -> f64 {
        if epoch >= self.teacher_forcing_end_epoch {
            0.0
        } else {
            1.0 - epoch as f64 / self.teacher_forcing_end_epoch as f64
        }
    }
}

fn pose_mse(pred: &[[f64; 6]], gt: &[[f64; 6]], rotation_weight: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch { op: "pose loss", lhs: alloc::vec![pred.len(), 6], rhs: alloc::vec![gt.len(), 6] });
    }
    if pred.is_empty() {
        return Err(Error::Empty("pose loss"));
    }
    let (mut trans, mut rot) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        for c in 0..3 {
            trans += (p[c] - g[c]) * (p[c] - g[c]);
            let d = wrap_angle(p[c + 3] - g[c + 3]);
            rot += d * d;
        }
    }
    Ok((trans + rotation_weight * rot) / (6 * pred.len()) as f64)
}

/// Loss on per-epoch deltas: world translation change and body-frame Euler
/// change.
pub fn relative_loss(pred_deltas_w: &[[f64; 6]], gt_deltas_w: &[[f64; 6]], cfg: &LossConfig) -> Result<f64> {
    pose_mse(pred_deltas_w, gt_deltas_w, cfg.rotation_weight)
}

/// Loss on absolute nominal-frame poses.
pub fn absolute_loss(pred_poses_n: &[[f64; 6]], gt_poses_n: &[[f64; 6]], cfg: &LossConfig) -> Result<f64> {
    pose_mse(pred_poses_n, gt_poses_n, cfg.rotation_weight)
}

pub fn total_loss(rel: f64, abs: f64, cfg: &LossConfig) -> f64 {
    rel * cfg.lambda_rel + abs
}

/// Tape version of the pose loss over `1 x 6` rows.
pub fn pose_mse_var(tape: &mut Tape, pred: &[Var], gt: &[[f64; 6]], rotation_weight: f64) -> Result<Var> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch { op: "pose loss", lhs: alloc::vec![pred.len(), 6], rhs: alloc::vec![gt.len(), 6] });
    }
    if pred.is_empty() {
        return Err(Error::Empty("pose loss"));
    }
    let p = tape.concat_rows(pred)?;
    let g: Vec<f64> = gt.iter().flatten().copied().collect();
    let g = tape.constant_matrix(gt.len(), 6, g)?;
    let d = tape.sub(p, g)?;
    let dt = tape.slice_cols(d, 0, 3)?;
    let dr = tape.slice_cols(d, 3, 3)?;
    let dr = tape.wrap_angle(dr);
    let st = tape.square(dt);
    let st = tape.sum(st);
    let sr = tape.square(dr);
    let sr = tape.sum(sr);
    let sr = tape.scale(sr, rotation_weight);
    let s = tape.add(st, sr)?;
    Ok(tape.scale(s, 1.0 / (6 * pred.len()) as f64))
}
