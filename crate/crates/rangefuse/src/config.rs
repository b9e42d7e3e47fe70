//! Run configuration: TOML or JSON file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use rangefuse_core::lsq::LmOptions;
use rangefuse_core::nn::Adam;
use rangefuse_core::odom::{EstimatorMode, ModelConfig, OdometryConfig};
use rangefuse_core::simulate::{preset_max_range, preset_noise, MaskWindow, NoiseModel, Preset, SensorRates};
use rangefuse_core::train::{LossConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise settings; unset fields take the preset's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_range: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlos_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlos_extra: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gyro_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accel_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gyro_bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Trajectory variant; 0 is the preset's canonical path.
    pub variant: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub imu_rate: f64,
    pub uwb_rate: f64,
    /// Range gating distance; unset means the preset's value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_range: Option<f64>,
    /// Anchor-loss windows as `START:END:KEEP`.
    pub masks: Vec<String>,
    pub noise: NoiseOverrides,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let r = SensorRates::default();
        Self { variant: 0, duration: None, imu_rate: r.imu_rate, uwb_rate: r.uwb_rate, max_range: None, masks: Vec::new(), noise: NoiseOverrides::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdometrySection {
    pub radius: f64,
    pub hysteresis: f64,
    pub chunk: usize,
    pub lm_max_iters: usize,
}

impl Default for OdometrySection {
    fn default() -> Self {
        let o = OdometryConfig::default();
        Self { radius: o.radius, hysteresis: o.hysteresis, chunk: o.chunk, lm_max_iters: o.lm.max_iters }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
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

impl Default for ModelSection {
    fn default() -> Self {
        ModelConfig::default().into()
    }
}

impl From<ModelConfig> for ModelSection {
    fn from(m: ModelConfig) -> Self {
        Self {
            hidden: m.hidden,
            gat_heads: m.gat_heads,
            gat_head_dim: m.gat_head_dim,
            gat_layers: m.gat_layers,
            gru_hidden: m.gru_hidden,
            gru_layers: m.gru_layers,
            conv_channels: m.conv_channels,
            kernel: m.kernel,
            feat_dim: m.feat_dim,
            imu_window: m.imu_window,
            coord_scale: m.coord_scale,
        }
    }
}

impl From<ModelSection> for ModelConfig {
    fn from(m: ModelSection) -> Self {
        Self {
            hidden: m.hidden,
            gat_heads: m.gat_heads,
            gat_head_dim: m.gat_head_dim,
            gat_layers: m.gat_layers,
            gru_hidden: m.gru_hidden,
            gru_layers: m.gru_layers,
            conv_channels: m.conv_channels,
            kernel: m.kernel,
            feat_dim: m.feat_dim,
            imu_window: m.imu_window,
            coord_scale: m.coord_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub lr: f64,
    pub lr_final_frac: f64,
    pub anchor_dropout: f64,
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            pretrain_epochs: t.pretrain_epochs,
            lr: t.adam.lr,
            lr_final_frac: t.lr_final_frac,
            anchor_dropout: t.anchor_dropout,
            clip_norm: t.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda_rel: f64,
    pub rotation_weight: f64,
    pub bptt_len: usize,
    pub teacher_forcing_end_epoch: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        Self { lambda_rel: l.lambda_rel, rotation_weight: l.rotation_weight, bptt_len: l.bptt_len, teacher_forcing_end_epoch: l.teacher_forcing_end_epoch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; biases, noise, initialisation, schedule and dropout each
    /// draw from their own stream of it.
    pub seed: u64,
    pub preset: String,
    /// Scene file used instead of the preset's anchors, tags and biases.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    pub out: PathBuf,
    pub modes: Vec<String>,
    pub simulation: SimulationConfig,
    pub odometry: OdometrySection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: Preset::Indoor.as_str().to_string(),
            scene: None,
            out: PathBuf::from("out"),
            modes: vec![EstimatorMode::Ulsg.as_str().to_string()],
            simulation: SimulationConfig::default(),
            odometry: OdometrySection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub modes: Vec<String>,
    pub preset: Option<String>,
    pub max_range: Option<f64>,
    pub masks: Vec<String>,
}

impl RunConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e))?
        } else {
            toml::from_str(text).map_err(|e| {
                let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
                Error::parse(path, line, e.message())
            })?
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Defaults, then the optional file, then flags; validated.
    pub fn resolve(file: Option<&Path>, flags: &FlagOverrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, flags: &FlagOverrides) {
        if let Some(s) = flags.seed {
            self.seed = s;
        }
        if let Some(o) = &flags.out {
            self.out = o.clone();
        }
        if !flags.modes.is_empty() {
            self.modes = flags.modes.clone();
        }
        if let Some(p) = &flags.preset {
            self.preset = p.clone();
        }
        if let Some(r) = flags.max_range {
            self.simulation.max_range = Some(r);
        }
        if !flags.masks.is_empty() {
            self.simulation.masks = flags.masks.clone();
        }
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config toml")
    }

    pub fn validate(&self) -> Result<()> {
        self.preset_kind()?;
        self.estimator_modes()?;
        self.mask_windows()?;
        self.noise().validate().map_err(|e| Error::config("simulation.noise", e))?;
        let s = &self.simulation;
        if !(s.imu_rate > 0.0 && s.uwb_rate > 0.0 && s.imu_rate.is_finite() && s.uwb_rate.is_finite()) {
            return Err(Error::config("simulation", "imu_rate and uwb_rate must be positive"));
        }
        if s.max_range.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::config("simulation.max_range", "must be positive"));
        }
        if s.duration.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::config("simulation.duration", "must be positive"));
        }
        let o = &self.odometry;
        if !(o.radius > 0.0 && o.hysteresis >= 0.0 && o.chunk > 0 && o.lm_max_iters > 0) {
            return Err(Error::config("odometry", "radius, chunk and lm_max_iters must be positive, hysteresis >= 0"));
        }
        self.train_config().validate().map_err(|e| Error::config("train", e))?;
        Ok(())
    }

    pub fn preset_kind(&self) -> Result<Preset> {
        self.preset.parse().map_err(|e| Error::config("preset", e))
    }

    pub fn estimator_modes(&self) -> Result<Vec<EstimatorMode>> {
        if self.modes.is_empty() {
            return Err(Error::config("modes", "at least one mode is required"));
        }
        self.modes
            .iter()
            .flat_map(|m| m.split(','))
            .map(|m| m.trim().parse().map_err(|e| Error::config("modes", e)))
            .collect()
    }

    pub fn single_mode(&self) -> Result<EstimatorMode> {
        match self.estimator_modes()?.as_slice() {
            [m] => Ok(*m),
            _ => Err(Error::config("modes", "this command takes exactly one mode")),
        }
    }

    pub fn mask_windows(&self) -> Result<Vec<MaskWindow>> {
        self.simulation.masks.iter().map(|m| m.parse().map_err(|e| Error::config("simulation.masks", e))).collect()
    }

    /// Seed of the measurement-noise streams; differs per trajectory variant
    /// while the scene biases stay tied to the root seed.
    pub fn noise_seed(&self) -> u64 {
        self.seed.wrapping_add(self.simulation.variant.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn noise(&self) -> NoiseModel {
        let preset = self.preset.parse().unwrap_or(Preset::Indoor);
        let mut n = preset_noise(preset, self.noise_seed());
        let o = &self.simulation.noise;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut n.gaussian_sigma, o.gaussian_sigma);
        set(&mut n.bias_range, o.bias_range);
        set(&mut n.nlos_prob, o.nlos_prob);
        set(&mut n.nlos_extra, o.nlos_extra);
        set(&mut n.dropout_prob, o.dropout_prob);
        set(&mut n.accel_sigma, o.accel_sigma);
        set(&mut n.gyro_sigma, o.gyro_sigma);
        set(&mut n.accel_bias, o.accel_bias);
        set(&mut n.gyro_bias, o.gyro_bias);
        n
    }

    pub fn rates(&self) -> Result<SensorRates> {
        let max_range = self.simulation.max_range.unwrap_or(preset_max_range(self.preset_kind()?));
        Ok(SensorRates { imu_rate: self.simulation.imu_rate, uwb_rate: self.simulation.uwb_rate, max_range })
    }

    pub fn odometry_config(&self) -> OdometryConfig {
        let o = &self.odometry;
        OdometryConfig {
            radius: o.radius,
            hysteresis: o.hysteresis,
            chunk: o.chunk,
            lm: LmOptions { max_iters: o.lm_max_iters, ..LmOptions::default() },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let l = &self.loss;
        TrainConfig {
            model: self.model.into(),
            loss: LossConfig {
                lambda_rel: l.lambda_rel,
                rotation_weight: l.rotation_weight,
                bptt_len: l.bptt_len,
                teacher_forcing_end_epoch: l.teacher_forcing_end_epoch,
            },
            adam: Adam { lr: t.lr, ..Adam::default() },
            lr_final_frac: t.lr_final_frac,
            epochs: t.epochs,
            pretrain_epochs: t.pretrain_epochs,
            anchor_dropout: t.anchor_dropout,
            clip_norm: t.clip_norm,
            odometry: self.odometry_config(),
        }
    }
}
