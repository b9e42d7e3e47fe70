//! Subcommands. Each `cmd_*` writes its files under the configured output
//! directory and returns the text printed on stdout.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rangefuse_core::dataset::Dataset;
use rangefuse_core::odom::{run_odometry, EstimatorMode, OdomNet, OdometryOutput};
use rangefuse_core::sensor::Scene;
use rangefuse_core::simulate::{build_trajectory, draw_biases, mask_anchors, preset_scene, simulate_sensors};
use rangefuse_core::train::{ape, challenge_eval, train, ChallengeKind, TrainSequence};

use crate::checkpoint::Checkpoint;
use crate::config::{FlagOverrides, RunConfig};
use crate::error::{Error, Result};
use crate::plot::{self, Series};
use crate::records::{read_dataset, read_scene, write_dataset, write_file, write_scene};
use crate::tables::{epoch_log_to_jsonl, read_trajectory, train_log_to_csv, write_trajectory, Metrics, ModeMetrics};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SCENE_FILE: &str = "scene.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";

pub fn trajectory_file(mode: EstimatorMode) -> String {
    format!("trajectory_{}.csv", mode.as_str())
}

pub fn epoch_log_file(mode: EstimatorMode) -> String {
    format!("epochs_{}.jsonl", mode.as_str())
}

#[derive(Debug, Parser)]
#[command(name = "rangefuse", version, about = "Ranging-inertial odometry: simulate, solve, train, evaluate, plot")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Estimator mode; repeat or comma-separate for several.
    #[arg(long)]
    pub mode: Vec<String>,
    /// indoor, outdoor or tunnel.
    #[arg(long)]
    pub preset: Option<String>,
    /// Drop ranges longer than this many metres.
    #[arg(long)]
    pub max_range: Option<f64>,
    /// Anchor-loss window START:END:KEEP; repeatable.
    #[arg(long)]
    pub mask: Vec<String>,
}

impl CommonArgs {
    pub fn flags(&self) -> FlagOverrides {
        FlagOverrides {
            seed: self.seed,
            out: self.out.clone(),
            modes: self.mode.clone(),
            preset: self.preset.clone(),
            max_range: self.max_range,
            masks: self.mask.clone(),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.flags())
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults to scene.json next to the dataset.
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scene and write its dataset.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Trajectory variant; 0 is the preset's canonical path.
        #[arg(long)]
        variant: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run the least-squares baseline.
    SolveLs {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a network for one mode.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Training dataset; repeatable.
        #[arg(long, required = true)]
        dataset: Vec<PathBuf>,
        /// Scene shared by all datasets; defaults to scene.json next to each.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Evaluate one or more modes on a dataset.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Trained network; repeatable, matched to modes by their stored mode.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Split the error: envelope (inside/outside the anchor hull) or
        /// anchor_missing (inside/outside the --mask windows).
        #[arg(long)]
        challenge: Option<String>,
    },
    /// Render SVG figures from trajectory CSVs.
    Plot {
        /// Trajectory CSV, optionally LABEL=PATH; repeatable.
        #[arg(long, required = true)]
        trajectory: Vec<String>,
        /// Dataset providing ground truth.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Scene providing anchor positions.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = rangefuse_core::simulate::DEFAULT_UWB_RATE)]
        uwb_rate: f64,
    },
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate { common, variant, duration } => {
            let mut cfg = common.resolve()?;
            if let Some(v) = variant {
                cfg.simulation.variant = v;
            }
            if duration.is_some() {
                cfg.simulation.duration = duration;
            }
            cfg.validate()?;
            cmd_simulate(&cfg)
        }
        Command::SolveLs { common, data } => {
            let cfg = common.resolve()?;
            cmd_solve_ls(&cfg, &data.dataset, data.scene.as_deref())
        }
        Command::Train { common, dataset, scene } => {
            let cfg = common.resolve()?;
            cmd_train(&cfg, &dataset, scene.as_deref())
        }
        Command::Eval { common, data, checkpoint, challenge } => {
            let cfg = common.resolve()?;
            cmd_eval(&cfg, &data.dataset, data.scene.as_deref(), &checkpoint, challenge.as_deref())
        }
        Command::Plot { trajectory, dataset, scene, out, uwb_rate } => cmd_plot(&trajectory, dataset.as_deref(), scene.as_deref(), &out, uwb_rate),
    }
}

/// Scene of a run: the configured scene file, or the preset with biases
/// drawn from the root seed.
pub fn build_scene(cfg: &RunConfig) -> Result<Scene> {
    if let Some(p) = &cfg.scene {
        return read_scene(p);
    }
    let (mut scene, _) = preset_scene(cfg.preset_kind()?);
    draw_biases(&mut scene, cfg.noise().bias_range, cfg.seed);
    Ok(scene)
}

pub fn simulate_dataset(cfg: &RunConfig, scene: &Scene) -> Result<Dataset> {
    let (_, mut profile) = preset_scene(cfg.preset_kind()?);
    profile = profile.with_variant(cfg.simulation.variant);
    if let Some(d) = cfg.simulation.duration {
        profile = profile.with_duration(d);
    }
    let traj = build_trajectory(&profile)?;
    let ds = simulate_sensors(&traj, scene, &cfg.noise(), &cfg.rates()?)?;
    let windows = cfg.mask_windows()?;
    if windows.is_empty() {
        Ok(ds)
    } else {
        Ok(mask_anchors(&ds, &windows, cfg.noise_seed())?)
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<String> {
    let scene = build_scene(cfg)?;
    let ds = simulate_dataset(cfg, &scene)?;
    write_dataset(&cfg.out.join(DATASET_FILE), &ds)?;
    write_scene(&cfg.out.join(SCENE_FILE), &scene)?;
    write_file(&cfg.out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let epochs = ds.epochs();
    let ranges = ds.ranges().count();
    info!("simulated {} records into {}", ds.records.len(), cfg.out.display());
    Ok(format!(
        "epochs {}  anchors {}  tags {}  ranges {}  imu {}\n",
        epochs.len(),
        scene.anchors.len(),
        scene.tags.len(),
        ranges,
        ds.has_imu()
    ))
}

fn scene_for(dataset: &Path, scene: Option<&Path>) -> PathBuf {
    scene.map(Path::to_path_buf).unwrap_or_else(|| dataset.with_file_name(SCENE_FILE))
}

fn load(dataset: &Path, scene: Option<&Path>) -> Result<(Dataset, Scene)> {
    Ok((read_dataset(dataset)?, read_scene(&scene_for(dataset, scene))?))
}

fn write_run(cfg: &RunConfig, out: &OdometryOutput) -> Result<()> {
    write_trajectory(&cfg.out.join(trajectory_file(out.mode)), &out.trajectory)?;
    write_file(&cfg.out.join(epoch_log_file(out.mode)), epoch_log_to_jsonl(&out.log).as_bytes())
}

pub fn cmd_solve_ls(cfg: &RunConfig, dataset: &Path, scene: Option<&Path>) -> Result<String> {
    let (ds, scene) = load(dataset, scene)?;
    let out = run_odometry(&ds, &scene, EstimatorMode::Uls, None, &cfg.odometry_config())?;
    write_run(cfg, &out)?;
    let gt = ds.ground_truth();
    let mut text = format!("ULS: {} poses\n", out.trajectory.len());
    if !gt.is_empty() {
        let a = ape(&out.trajectory, &gt, cfg.simulation.uwb_rate)?;
        text.push_str(&format!("APE rmse xy {:.4} m  xyz {:.4} m\n", a.rmse_xy, a.rmse_xyz));
    }
    Ok(text)
}

pub fn cmd_train(cfg: &RunConfig, datasets: &[PathBuf], scene: Option<&Path>) -> Result<String> {
    let mode = cfg.single_mode()?;
    let loaded: Vec<(Dataset, Scene)> = datasets.iter().map(|d| load(d, scene)).collect::<Result<_>>()?;
    let seqs: Vec<TrainSequence> = loaded.iter().map(|(d, s)| TrainSequence { dataset: d, scene: s }).collect();
    let tc = cfg.train_config();
    info!("training {mode} on {} sequences for {} epochs", seqs.len(), tc.epochs);
    let out = train(&seqs, mode, &tc, cfg.seed)?;
    let gate = out.gate_passed();
    let ck = Checkpoint { mode, seed: cfg.seed, net: out.net };
    ck.write(&cfg.out.join(CHECKPOINT_FILE))?;
    write_file(&cfg.out.join(TRAIN_LOG_FILE), train_log_to_csv(&out.log).as_bytes())?;
    write_file(&cfg.out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let last = out.log.last().map_or(f64::NAN, |r| r.l_total);
    if !gate {
        warn!("training loss did not halve over the joint stage");
    }
    Ok(format!("{mode}: {} epochs, final loss {last:.6}\n", out.log.len()))
}

fn challenge_kind(name: &str, cfg: &RunConfig) -> Result<ChallengeKind> {
    match name {
        "envelope" => Ok(ChallengeKind::Envelope),
        "anchor_missing" | "anchor-missing" => {
            let w = cfg.mask_windows()?;
            if w.is_empty() {
                return Err(Error::config("simulation.masks", "anchor_missing needs at least one --mask window"));
            }
            Ok(ChallengeKind::AnchorMissing(w))
        }
        other => Err(Error::config("challenge", format!("unknown challenge `{other}` (envelope, anchor_missing)"))),
    }
}

pub fn cmd_eval(cfg: &RunConfig, dataset: &Path, scene: Option<&Path>, checkpoints: &[PathBuf], challenge: Option<&str>) -> Result<String> {
    let (ds, scene) = load(dataset, scene)?;
    let kind = challenge.map(|c| challenge_kind(c, cfg)).transpose()?;
    let nets: Vec<Checkpoint> = checkpoints.iter().map(|p| Checkpoint::read(p)).collect::<Result<_>>()?;
    let gt = ds.ground_truth();
    let mut modes = Vec::new();
    for mode in cfg.estimator_modes()? {
        let net: Option<&OdomNet> = if mode.uses_net() {
            let ck = nets
                .iter()
                .find(|c| c.mode == mode)
                .ok_or_else(|| Error::config("checkpoint", format!("no checkpoint for mode {mode}")))?;
            Some(&ck.net)
        } else {
            None
        };
        let out = run_odometry(&ds, &scene, mode, net, &cfg.odometry_config())?;
        write_run(cfg, &out)?;
        if gt.is_empty() {
            continue;
        }
        modes.push(match &kind {
            Some(k) => ModeMetrics::from_split(mode.as_str(), &challenge_eval(k, &out.trajectory, &gt, &scene, cfg.simulation.uwb_rate)?),
            None => ModeMetrics::from_ape(mode.as_str(), &ape(&out.trajectory, &gt, cfg.simulation.uwb_rate)?),
        });
    }
    if gt.is_empty() {
        return Ok("dataset has no ground truth; trajectories written without metrics\n".into());
    }
    let metrics = Metrics {
        dataset: dataset.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        challenge: challenge.map(str::to_string),
        modes,
    };
    write_file(&cfg.out.join(METRICS_FILE), metrics.to_json().as_bytes())?;
    Ok(metrics.table())
}

pub fn cmd_plot(trajectories: &[String], dataset: Option<&Path>, scene: Option<&Path>, out: &Path, uwb_rate: f64) -> Result<String> {
    let mut loaded = Vec::new();
    for spec in trajectories {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                (stem.strip_prefix("trajectory_").unwrap_or(&stem).to_string(), p)
            }
        };
        loaded.push((label, read_trajectory(&path)?));
    }
    let gt = match dataset {
        Some(d) => read_dataset(d)?.ground_truth(),
        None => Vec::new(),
    };
    let anchors = match scene {
        Some(s) => read_scene(s)?.anchors.values().copied().collect(),
        None => Vec::new(),
    };
    let series: Vec<Series> = loaded.iter().map(|(l, p)| Series { label: l, points: p }).collect();
    let figs = plot::render(&series, &gt, &anchors, uwb_rate)?;
    let mut text = String::new();
    for (name, svg) in figs {
        let p = out.join(name);
        write_file(&p, svg.as_bytes())?;
        text.push_str(&format!("{}\n", p.display()));
    }
    Ok(text)
}
