use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{row6, ModelConfig, OdomNet};
use crate::error::{Error, Result};
use crate::nn::{Activation, Conv1d, Mlp, ParamStore, StackedGru, Tape, Var};
use crate::sensor::ImuWindow;

/// Two valid convolutions, time-mean pooling, a stacked GRU, and two heads:
/// the world-frame pose delta and the inertial feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct InertialNet {
    pub conv: Vec<Conv1d>,
    pub gru: StackedGru,
    pub delta_head: Mlp,
    pub feat_head: Mlp,
    pub window: usize,
}

#[derive(Debug, Clone)]
pub struct InertialVars {
    pub delta: Var,
    pub feat: Var,
    pub hidden: Vec<Var>,
}

/// Tape-free result of one inertial step.
#[derive(Debug, Clone, PartialEq)]
pub struct InertialOutput {
    /// World translation delta followed by the body-frame Euler delta.
    pub delta_pose_w: [f64; 6],
    pub feat_i: Vec<f64>,
    pub hidden: Vec<Vec<f64>>,
}

impl InertialNet {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let [c1, c2] = cfg.conv_channels;
        let conv = vec![
            Conv1d::init(store, rng, "ir.conv0", 6, c1, cfg.kernel)?,
            Conv1d::init(store, rng, "ir.conv1", c1, c2, cfg.kernel)?,
        ];
        let gru = StackedGru::init(store, rng, "ir.gru", c2, cfg.gru_hidden, cfg.gru_layers)?;
        let delta_head = Mlp::init(store, rng, "ir.delta", &[cfg.gru_hidden, cfg.hidden, 6], Activation::Elu)?;
        let feat_head = Mlp::init(store, rng, "ir.feat", &[cfg.gru_hidden, cfg.hidden, cfg.feat_dim], Activation::Elu)?;
        Ok(Self { conv, gru, delta_head, feat_head, window: cfg.imu_window })
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.layers[0].hidden
    }

    pub fn zero_hidden(&self, tape: &mut Tape) -> Vec<Var> {
        let h = vec![0.0; self.hidden_dim()];
        self.gru.layers.iter().map(|_| tape.constant_row(&h)).collect()
    }

    /// `window` is the `6 x n` channel-major matrix.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, window: Var, hidden: &[Var]) -> Result<InertialVars> {
        let mut x = window;
        for c in &self.conv {
            x = c.forward(tape, store, x)?;
            x = tape.elu(x);
        }
        let pooled = tape.mean_cols(x);
        let pooled = tape.transpose(pooled);
        let hidden = self.gru.step(tape, store, pooled, hidden)?;
        let top = *hidden.last().ok_or(Error::Empty("gru layers"))?;
        let delta = self.delta_head.forward(tape, store, top)?;
        let feat = self.feat_head.forward(tape, store, top)?;
        Ok(InertialVars { delta, feat, hidden })
    }

    pub fn window_var(&self, tape: &mut Tape, window: &ImuWindow) -> Result<Var> {
        let data = window.to_channels(self.window)?;
        tape.constant_matrix(6, self.window, data)
    }
}

/// One inertial step outside training. An empty `hidden_prev` starts a new
/// sequence from a zero state.
pub fn inertial_forward(net: &OdomNet, window: &ImuWindow, hidden_prev: &[Vec<f64>]) -> Result<InertialOutput> {
    let ir = &net.inertial;
    let mut tape = Tape::new();
    let hidden = if hidden_prev.is_empty() {
        ir.zero_hidden(&mut tape)
    } else {
        if hidden_prev.len() != ir.gru.layers.len() || hidden_prev.iter().any(|h| h.len() != ir.hidden_dim()) {
            return Err(Error::InvalidArgument(format!("hidden state must be {} rows of {}", ir.gru.layers.len(), ir.hidden_dim())));
        }
        hidden_prev.iter().map(|h| tape.constant_row(h)).collect()
    };
    let w = ir.window_var(&mut tape, window)?;
    let out = ir.forward(&mut tape, &net.store, w, &hidden)?;
    Ok(InertialOutput {
        delta_pose_w: row6(tape.value(out.delta)),
        feat_i: tape.value(out.feat).to_vec(),
        hidden: out.hidden.iter().map(|h| tape.value(*h).to_vec()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Rotation, Vec3};
    use crate::sensor::{ImuSample, GRAVITY};

    fn small() -> ModelConfig {
        ModelConfig { hidden: 8, gat_heads: 2, gat_head_dim: 4, gru_hidden: 6, conv_channels: [4, 5], feat_dim: 3, ..Default::default() }
    }

    fn stationary_window(n: usize) -> ImuWindow {
        let samples: Vec<ImuSample> = (0..n)
            .map(|i| ImuSample { t: i as f64 * 0.005, accel: GRAVITY, gyro: Vec3::ZERO })
            .collect();
        ImuWindow::from_body_samples(&samples, &Rotation::IDENTITY, GRAVITY).unwrap()
    }

    #[test]
    fn zero_weights_give_head_biases() {
        let mut net = OdomNet::new(small(), 3).unwrap();
        for name in net.store.names() {
            let v = net.store.value_mut(&name).unwrap();
            let bias = name == "ir.delta.1.b" || name == "ir.feat.1.b";
            for (k, x) in v.data_mut().iter_mut().enumerate() {
                *x = if bias { 0.1 * (k + 1) as f64 } else { 0.0 };
            }
        }
        let out = inertial_forward(&net, &stationary_window(20), &[]).unwrap();
        assert_eq!(out.delta_pose_w, [0.1, 0.2, 0.30000000000000004, 0.4, 0.5, 0.6000000000000001]);
        assert_eq!(out.feat_i, vec![0.1, 0.2, 0.30000000000000004]);
    }

    #[test]
    fn stationary_input_is_deterministic() {
        let net = OdomNet::new(small(), 4).unwrap();
        let w = stationary_window(17);
        let h = vec![vec![0.05; 6], vec![-0.05; 6]];
        let a = inertial_forward(&net, &w, &h).unwrap();
        let b = inertial_forward(&net, &w, &h).unwrap();
        assert_eq!(a, b);
        assert!(w.to_channels(20).unwrap().iter().all(|v| *v == 0.0));
        assert!(inertial_forward(&net, &w, &[vec![0.0; 6]]).is_err());
    }
}
