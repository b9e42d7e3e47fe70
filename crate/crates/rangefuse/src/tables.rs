//! Trajectory and training-log CSV, epoch-log JSON lines, metrics JSON.

use std::fs;
use std::path::Path;

use rangefuse_core::geom::Pose;
use rangefuse_core::odom::{EpochLog, TrajectoryPoint};
use rangefuse_core::train::{ApeResult, ChallengeSplit, TrainLogRow};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::write_file;

pub const TRAJECTORY_HEADER: [&str; 7] = ["t", "x", "y", "z", "roll", "pitch", "yaw"];
pub const TRAIN_LOG_HEADER: [&str; 7] = ["epoch", "stage", "L_rel", "L_abs", "L_total", "lr", "tf_prob"];

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("csv header");
    for r in rows {
        w.write_record(&r).expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8 csv")
}

pub fn trajectory_to_csv(traj: &[TrajectoryPoint]) -> String {
    csv_text(
        &TRAJECTORY_HEADER,
        traj.iter().map(|p| {
            let mut row = vec![p.t.to_string()];
            row.extend(p.pose.to_vector6().iter().map(f64::to_string));
            row
        }),
    )
}

pub fn parse_trajectory_csv(text: &str, path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::parse(path, 1, e))?;
    if header.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::parse(path, 1, format!("expected header {}", TRAJECTORY_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::parse(path, line, format!("`{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if v.len() != 7 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(path, line, "expected 7 finite values"));
        }
        out.push(TrajectoryPoint { t: v[0], pose: Pose::from_vector6([v[1], v[2], v[3], v[4], v[5], v[6]]) });
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory_csv(&text, path)
}

pub fn write_trajectory(path: &Path, traj: &[TrajectoryPoint]) -> Result<()> {
    write_file(path, trajectory_to_csv(traj).as_bytes())
}

pub fn train_log_to_csv(log: &[TrainLogRow]) -> String {
    csv_text(
        &TRAIN_LOG_HEADER,
        log.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.stage.as_str().to_string(),
                r.l_rel.to_string(),
                r.l_abs.to_string(),
                r.l_total.to_string(),
                r.lr.to_string(),
                r.tf_prob.to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsLogJson {
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub rank_deficient: bool,
    pub solution: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLogJson {
    pub t: f64,
    pub mode: String,
    pub anchor_count: usize,
    pub range_count: usize,
    pub frame_id: usize,
    pub frame_switched: bool,
    pub held_prior: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ls: Option<LsLogJson>,
    pub prior_n: [f64; 6],
    pub estimate_n: [f64; 6],
}

impl From<&EpochLog> for EpochLogJson {
    fn from(e: &EpochLog) -> Self {
        Self {
            t: e.t,
            mode: e.mode.as_str().into(),
            anchor_count: e.anchor_count,
            range_count: e.range_count,
            frame_id: e.frame_id,
            frame_switched: e.frame_switched,
            held_prior: e.held_prior,
            ls: e.ls.as_ref().map(|l| LsLogJson {
                iterations: l.iterations,
                final_cost: l.final_cost,
                converged: l.converged,
                rank_deficient: l.rank_deficient,
                solution: l.solution,
            }),
            prior_n: e.prior_n,
            estimate_n: e.estimate_n,
        }
    }
}

pub fn epoch_log_to_jsonl(log: &[EpochLog]) -> String {
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(&EpochLogJson::from(e)).expect("epoch log json"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub label: String,
    pub rmse_xy: f64,
    pub rmse_xyz: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mode: String,
    pub rmse_xy: f64,
    pub rmse_xyz: f64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<SegmentMetrics>,
    /// Challenge segment over normal segment, xyz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_xyz: Option<f64>,
}

impl ModeMetrics {
    pub fn from_ape(mode: &str, ape: &ApeResult) -> Self {
        Self { mode: mode.into(), rmse_xy: ape.rmse_xy, rmse_xyz: ape.rmse_xyz, samples: ape.len(), segments: Vec::new(), ratio_xyz: None }
    }

    pub fn from_split(mode: &str, split: &ChallengeSplit) -> Self {
        let mut m = Self::from_ape(mode, &split.overall);
        m.segments = split
            .labels
            .iter()
            .zip(&split.segments)
            .filter_map(|(l, s)| {
                s.as_ref().map(|a| SegmentMetrics { label: (*l).into(), rmse_xy: a.rmse_xy, rmse_xyz: a.rmse_xyz, samples: a.len() })
            })
            .collect();
        m.ratio_xyz = split.ratio_xyz();
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenge: Option<String>,
    pub modes: Vec<ModeMetrics>,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics json");
        s.push('\n');
        s
    }

    /// Fixed-width comparison table, one row per mode.
    pub fn table(&self) -> String {
        let seg_labels: Vec<&str> = self.modes.first().map(|m| m.segments.iter().map(|s| s.label.as_str()).collect()).unwrap_or_default();
        let mut out = format!("{:<8} {:>9} {:>9}", "mode", "xy[m]", "xyz[m]");
        for l in &seg_labels {
            out.push_str(&format!(" {:>14}", format!("{l} xyz")));
        }
        if !seg_labels.is_empty() {
            out.push_str(&format!(" {:>7}", "ratio"));
        }
        out.push('\n');
        for m in &self.modes {
            out.push_str(&format!("{:<8} {:>9.4} {:>9.4}", m.mode, m.rmse_xy, m.rmse_xyz));
            for l in &seg_labels {
                match m.segments.iter().find(|s| s.label == *l) {
                    Some(s) => out.push_str(&format!(" {:>14.4}", s.rmse_xyz)),
                    None => out.push_str(&format!(" {:>14}", "-")),
                }
            }
            if !seg_labels.is_empty() {
                match m.ratio_xyz {
                    Some(r) => out.push_str(&format!(" {r:>7.3}")),
                    None => out.push_str(&format!(" {:>7}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}
