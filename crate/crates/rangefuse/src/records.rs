//! Dataset JSON-lines records and the scene JSON file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rangefuse_core::dataset::Dataset;
use rangefuse_core::geom::{Pose, Rotation, Vec3};
use rangefuse_core::sensor::{GroundTruthPose, ImuSample, RangeMeasurement, Record, Scene};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum RecordJson {
    Imu { t: f64, a: [f64; 3], w: [f64; 3] },
    Range { t: f64, tag: u32, anchor: u32, d: f64 },
    Gt { t: f64, p: [f64; 3], q: [f64; 4] },
}

/// Parses one dataset line. `line_no` is only used in error messages.
pub fn parse_record(line: &str, line_no: usize) -> Result<Record> {
    let path = Path::new("<record>");
    let rec: RecordJson = serde_json::from_str(line).map_err(|e| Error::parse(path, line_no, e))?;
    Ok(match rec {
        RecordJson::Imu { t, a, w } => Record::Imu(ImuSample { t, accel: Vec3::from_array(a), gyro: Vec3::from_array(w) }),
        RecordJson::Range { t, tag, anchor, d } => Record::Range(RangeMeasurement { t, tag_id: tag, anchor_id: anchor, d }),
        RecordJson::Gt { t, p, q } => Record::Gt(GroundTruthPose {
            t,
            pose: Pose::new(Rotation::from_quaternion(q[0], q[1], q[2], q[3]), Vec3::from_array(p)),
        }),
    })
}

pub fn serialize_record(rec: &Record) -> String {
    let json = match rec {
        Record::Imu(s) => RecordJson::Imu { t: s.t, a: s.accel.to_array(), w: s.gyro.to_array() },
        Record::Range(r) => RecordJson::Range { t: r.t, tag: r.tag_id, anchor: r.anchor_id, d: r.d },
        Record::Gt(g) => RecordJson::Gt { t: g.t, p: g.pose.trans.to_array(), q: g.pose.rot.quaternion() },
    };
    serde_json::to_string(&json).expect("record json")
}

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    for r in &ds.records {
        out.push_str(&serialize_record(r));
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(line, i + 1).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::parse(path, line, msg),
            other => other,
        })?);
    }
    Ok(Dataset::new(records))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_file(path, dataset_to_string(ds).as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
struct PointJson {
    id: u32,
    p: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct BiasJson {
    tag: u32,
    anchor: u32,
    b: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneJson {
    anchors: Vec<PointJson>,
    tags: Vec<PointJson>,
    #[serde(default)]
    bias: Vec<BiasJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gravity: Option<[f64; 3]>,
}

pub fn scene_to_string(scene: &Scene) -> String {
    let json = SceneJson {
        anchors: scene.anchors.iter().map(|(&id, p)| PointJson { id, p: p.to_array() }).collect(),
        tags: scene.tags.iter().map(|(&id, p)| PointJson { id, p: p.to_array() }).collect(),
        bias: scene.bias.iter().map(|(&(tag, anchor), &b)| BiasJson { tag, anchor, b }).collect(),
        gravity: (scene.gravity != rangefuse_core::sensor::GRAVITY).then(|| scene.gravity.to_array()),
    };
    let mut s = serde_json::to_string_pretty(&json).expect("scene json");
    s.push('\n');
    s
}

pub fn parse_scene(text: &str, path: &Path) -> Result<Scene> {
    let json: SceneJson = serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e))?;
    let collect = |pts: &[PointJson], what: &str| -> Result<BTreeMap<u32, Vec3>> {
        let mut m = BTreeMap::new();
        for p in pts {
            if m.insert(p.id, Vec3::from_array(p.p)).is_some() {
                return Err(Error::parse(path, 0, format!("duplicate {what} id {}", p.id)));
            }
        }
        Ok(m)
    };
    let mut scene = Scene::new(collect(&json.anchors, "anchor")?, collect(&json.tags, "tag")?)?;
    for b in &json.bias {
        scene.anchor(b.anchor)?;
        scene.tag(b.tag)?;
        scene.bias.insert((b.tag, b.anchor), b.b);
    }
    if let Some(g) = json.gravity {
        scene.gravity = Vec3::from_array(g);
    }
    Ok(scene)
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    write_file(path, scene_to_string(scene).as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
