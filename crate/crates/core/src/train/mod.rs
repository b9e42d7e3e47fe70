//! Losses, the training loop, and trajectory evaluation.

pub mod eval;
pub mod loss;
pub mod trainer;

pub use eval::{anchor_hull, ape, associate, challenge_eval, convex_hull, point_in_hull, ApeResult, ApeSample, ChallengeKind, ChallengeSplit};
pub use loss::{absolute_loss, pose_mse_var, relative_loss, total_loss, LossConfig};
pub use trainer::{sequence_loss, train, Stage, TrainConfig, TrainLogRow, TrainOutput, TrainSequence};
