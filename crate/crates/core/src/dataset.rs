//! Grouping of a record stream into UWB epochs.

use alloc::vec::Vec;

use crate::geom::Pose;
use crate::sensor::{sort_records, AnchorId, GroundTruthPose, ImuSample, RangeMeasurement, Record};

/// Everything observed at one UWB epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub t: f64,
    pub ranges: Vec<RangeMeasurement>,
    /// Raw body-frame IMU samples with `t` in `(t_prev, t]`.
    pub imu: Vec<ImuSample>,
    pub gt: Option<Pose>,
}

impl Epoch {
    pub fn anchor_ids(&self) -> Vec<AnchorId> {
        let mut ids: Vec<AnchorId> = self.ranges.iter().map(|r| r.anchor_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(mut records: Vec<Record>) -> Self {
        sort_records(&mut records);
        Self { records }
    }

    pub fn has_imu(&self) -> bool {
        self.records.iter().any(|r| matches!(r, Record::Imu(_)))
    }

    pub fn ranges(&self) -> impl Iterator<Item = &RangeMeasurement> {
        self.records.iter().filter_map(|r| match r {
            Record::Range(m) => Some(m),
            _ => None,
        })
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthPose> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Gt(g) => Some(*g),
                _ => None,
            })
            .collect()
    }

    /// Splits the stream into epochs. Epoch times are the distinct range and
    /// ground-truth timestamps, so an epoch whose ranges were all dropped still
    /// appears (with no ranges) when ground truth marks it.
    pub fn epochs(&self) -> Vec<Epoch> {
        let mut times: Vec<f64> = self
            .records
            .iter()
            .filter(|r| !matches!(r, Record::Imu(_)))
            .map(Record::t)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();

        let mut epochs: Vec<Epoch> = times
            .iter()
            .map(|&t| Epoch { t, ranges: Vec::new(), imu: Vec::new(), gt: None })
            .collect();
        let index_of = |t: f64| times.binary_search_by(|x| x.total_cmp(&t));
        for rec in &self.records {
            match rec {
                Record::Range(m) => {
                    if let Ok(i) = index_of(m.t) {
                        epochs[i].ranges.push(*m);
                    }
                }
                Record::Gt(g) => {
                    if let Ok(i) = index_of(g.t) {
                        epochs[i].gt = Some(g.pose);
                    }
                }
                Record::Imu(s) => {
                    // First epoch with t >= sample time owns the sample.
                    let i = times.partition_point(|&x| x < s.t);
                    if i < epochs.len() {
                        epochs[i].imu.push(*s);
                    }
                }
            }
        }
        epochs
    }
}
