//! The estimators: inertial network, ranging graph network, prior update and
//! the sequential odometry driver for every ablation mode.

pub mod driver;
pub mod graph;
pub mod inertial;
pub mod posetape;
pub mod ranging;

use alloc::string::ToString;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::{EulerAngles, Pose, Rotation, Vec3};
use crate::nn::ParamStore;
use crate::nominal::NominalFrame;
use crate::simulate::{stream_rng, STREAM_INIT};

pub use driver::{run_odometry, EpochLog, LsLog, OdometryConfig, OdometryOutput, TrajectoryPoint};
pub use graph::{build_graph, AnchorNode, BodyFeature, GraphSnapshot, ModeMask, TagNode};
pub use inertial::{inertial_forward, InertialNet, InertialOutput};
pub use ranging::{ranging_forward, RangingNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EstimatorMode {
    Uls,
    Ug,
    Ulsg,
    IrUg,
    IrUlsg,
}

impl EstimatorMode {
    pub const ALL: [EstimatorMode; 5] = [Self::Uls, Self::Ug, Self::Ulsg, Self::IrUg, Self::IrUlsg];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uls => "ULS",
            Self::Ug => "UG",
            Self::Ulsg => "ULSG",
            Self::IrUg => "IR_UG",
            Self::IrUlsg => "IR_ULSG",
        }
    }

    pub fn uses_net(self) -> bool {
        self != Self::Uls
    }

    pub fn uses_ls(self) -> bool {
        matches!(self, Self::Uls | Self::Ulsg | Self::IrUlsg)
    }

    pub fn uses_imu(self) -> bool {
        matches!(self, Self::IrUg | Self::IrUlsg)
    }
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm: alloc::string::String = s.chars().map(|c| if c == '-' { '_' } else { c.to_ascii_uppercase() }).collect();
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown mode `{s}`")))
    }
}

/// Network dimensions. `coord_scale` divides metric inputs and multiplies the
/// translation outputs so values stay near unit size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub gat_heads: usize,
    pub gat_head_dim: usize,
    pub gat_layers: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub conv_channels: [usize; 2],
    pub kernel: usize,
    pub feat_dim: usize,
    pub imu_window: usize,
    pub coord_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            gat_heads: 4,
            gat_head_dim: 16,
            gat_layers: 4,
            gru_hidden: 128,
            gru_layers: 2,
            conv_channels: [32, 64],
            kernel: 3,
            feat_dim: 64,
            imu_window: 20,
            coord_scale: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.hidden,
            self.gat_heads,
            self.gat_head_dim,
            self.gat_layers,
            self.gru_hidden,
            self.gru_layers,
            self.conv_channels[0],
            self.conv_channels[1],
            self.kernel,
            self.feat_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("model dimensions must be positive".to_string()));
        }
        if self.imu_window < 2 * self.kernel - 1 {
            return Err(Error::InvalidArgument("imu window shorter than the convolution stack".to_string()));
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(Error::InvalidArgument("coord_scale must be positive".to_string()));
        }
        Ok(())
    }

    /// Body feature width: prior (6) + planar fix (2) + inertial features.
    pub fn body_dim(&self) -> usize {
        8 + self.feat_dim
    }
}

/// Both networks and their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OdomNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub inertial: InertialNet,
    pub ranging: RangingNet,
}

impl OdomNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, STREAM_INIT);
        let mut store = ParamStore::new();
        let inertial = InertialNet::init(&mut store, &mut rng, &config)?;
        let ranging = RangingNet::init(&mut store, &mut rng, &config)?;
        Ok(Self { config, store, inertial, ranging })
    }

    /// Rebuilds the network around loaded parameters, checking that names and
    /// shapes match the architecture implied by `config`.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if net.store.names() != store.names() {
            return Err(Error::InvalidArgument("checkpoint parameters do not match the model config".to_string()));
        }
        net.store.load_values(&store)?;
        net.store.step = store.step;
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSource {
    PreviousEstimate,
    ImuPropagated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePrior {
    pub pose_n: Pose,
    pub source: PriorSource,
}

/// Prior for the next epoch: the previous estimate itself, or the previous
/// estimate advanced by the inertial delta. The translation delta is rotated
/// from W into N; the body-frame rotation delta is right-multiplied.
pub fn propagate_prior(prev_est_n: &Pose, delta_w: Option<[f64; 6]>, nominal: &NominalFrame) -> PosePrior {
    match delta_w {
        None => PosePrior { pose_n: *prev_est_n, source: PriorSource::PreviousEstimate },
        Some(d) => {
            let dt = nominal.vector_to_nominal(Vec3::new(d[0], d[1], d[2]));
            let dr = Rotation::from_euler(EulerAngles::new(d[3], d[4], d[5]));
            PosePrior {
                pose_n: Pose::new(prev_est_n.rot * dr, prev_est_n.trans + dt),
                source: PriorSource::ImuPropagated,
            }
        }
    }
}

/// Ground-truth per-epoch delta: world translation difference and the
/// body-frame rotation change as wrapped Euler angles.
pub fn gt_delta(prev: &Pose, next: &Pose) -> [f64; 6] {
    let dt = next.trans - prev.trans;
    let e = (prev.rot.inverse() * next.rot).to_euler();
    [dt.x, dt.y, dt.z, e.roll, e.pitch, e.yaw]
}

pub(crate) fn row6(v: &[f64]) -> [f64; 6] {
    let mut o = [0.0; 6];
    o.copy_from_slice(&v[..6]);
    o
}

pub(crate) fn pose_from_row(v: &[f64]) -> Pose {
    Pose::from_vector6(row6(v))
}
