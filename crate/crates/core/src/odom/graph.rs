//! One UWB epoch as a typed graph: anchor nodes (one per ranging pair), tag
//! nodes, and a single body node.

use alloc::vec;
use alloc::vec::Vec;

use super::PosePrior;
use crate::error::{Error, Result};
use crate::lsq::LsFix2D;
use crate::nn::{Edge, GraphTopology};
use crate::nominal::NominalFrame;
use crate::sensor::{AnchorId, RangeMeasurement, Scene, TagId};

pub const NODE_ANCHOR: usize = 0;
pub const NODE_TAG: usize = 1;
pub const NODE_BODY: usize = 2;
pub const NODE_TYPES: usize = 3;

pub const EDGE_ANCHOR_TAG: usize = 0;
pub const EDGE_TAG_ANCHOR: usize = 1;
pub const EDGE_TAG_BODY: usize = 2;
pub const EDGE_BODY_TAG: usize = 3;
pub const EDGE_SELF_ANCHOR: usize = 4;
pub const EDGE_SELF_TAG: usize = 5;
pub const EDGE_SELF_BODY: usize = 6;
pub const EDGE_TYPES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorNode {
    pub anchor_id: AnchorId,
    pub tag_id: TagId,
    /// Anchor position in N followed by the measured range.
    pub feat: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagNode {
    pub tag_id: TagId,
    /// Tag lever arm in the body frame.
    pub feat: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyFeature {
    pub prior: [f64; 6],
    pub ls_fix: Option<[f64; 2]>,
    pub feat_i: Option<Vec<f64>>,
}

/// Which optional body-feature blocks carry data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeMask {
    pub ls_fix: bool,
    pub feat_i: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub anchor_nodes: Vec<AnchorNode>,
    pub tag_nodes: Vec<TagNode>,
    pub body: BodyFeature,
    pub mask: ModeMask,
    pub topology: GraphTopology,
}

impl GraphSnapshot {
    pub fn num_nodes(&self) -> usize {
        self.anchor_nodes.len() + self.tag_nodes.len() + 1
    }

    pub fn body_index(&self) -> usize {
        self.num_nodes() - 1
    }

    /// Fixed-width body feature: prior, planar fix, inertial features, with
    /// absent blocks zero-filled.
    pub fn body_layout(&self, feat_dim: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(8 + feat_dim);
        v.extend_from_slice(&self.body.prior);
        v.extend_from_slice(&self.body.ls_fix.unwrap_or([0.0; 2]));
        match &self.body.feat_i {
            Some(f) => v.extend(f.iter().copied().chain(core::iter::repeat(0.0)).take(feat_dim)),
            None => v.extend(core::iter::repeat_n(0.0, feat_dim)),
        }
        v
    }

    pub fn distinct_anchors(&self) -> usize {
        let mut ids: Vec<AnchorId> = self.anchor_nodes.iter().map(|a| a.anchor_id).collect();
        ids.dedup();
        ids.len()
    }
}

/// Builds the epoch graph. Anchor nodes are sorted by `(anchor, tag)` and tag
/// nodes by id, so the result does not depend on measurement order. A
/// repeated measurement of the same pair keeps the first value in that order.
pub fn build_graph(
    ranges: &[RangeMeasurement],
    scene: &Scene,
    nominal: &NominalFrame,
    prior: &PosePrior,
    ls_fix: Option<LsFix2D>,
    feat_i: Option<&[f64]>,
) -> Result<GraphSnapshot> {
    if ranges.is_empty() {
        return Err(Error::Empty("epoch ranges"));
    }
    let mut pairs: Vec<(AnchorId, TagId, f64)> = ranges.iter().map(|r| (r.anchor_id, r.tag_id, r.d)).collect();
    pairs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    pairs.dedup_by_key(|p| (p.0, p.1));

    let mut anchor_nodes = Vec::with_capacity(pairs.len());
    for &(aid, tid, d) in &pairs {
        scene.tag(tid)?;
        let p = nominal.point_to_nominal(scene.anchor(aid)?);
        anchor_nodes.push(AnchorNode { anchor_id: aid, tag_id: tid, feat: [p.x, p.y, p.z, d] });
    }
    let mut tag_ids: Vec<TagId> = pairs.iter().map(|p| p.1).collect();
    tag_ids.sort_unstable();
    tag_ids.dedup();
    let tag_nodes: Vec<TagNode> = tag_ids
        .iter()
        .map(|&id| {
            let e = scene.tag(id)?;
            Ok(TagNode { tag_id: id, feat: [e.x, e.y, e.z] })
        })
        .collect::<Result<_>>()?;

    let na = anchor_nodes.len();
    let body = na + tag_nodes.len();
    let mut node_types = vec![NODE_ANCHOR; na];
    node_types.extend(core::iter::repeat_n(NODE_TAG, tag_nodes.len()));
    node_types.push(NODE_BODY);
    let mut edges = Vec::with_capacity(3 * na + 3 * tag_nodes.len() + 1);
    for (i, a) in anchor_nodes.iter().enumerate() {
        let t = na + tag_ids.binary_search(&a.tag_id).expect("tag listed");
        edges.push(Edge { src: i, dst: t, kind: EDGE_ANCHOR_TAG });
        edges.push(Edge { src: t, dst: i, kind: EDGE_TAG_ANCHOR });
        edges.push(Edge { src: i, dst: i, kind: EDGE_SELF_ANCHOR });
    }
    for t in na..body {
        edges.push(Edge { src: t, dst: body, kind: EDGE_TAG_BODY });
        edges.push(Edge { src: body, dst: t, kind: EDGE_BODY_TAG });
        edges.push(Edge { src: t, dst: t, kind: EDGE_SELF_TAG });
    }
    edges.push(Edge { src: body, dst: body, kind: EDGE_SELF_BODY });
    let topology = GraphTopology::new(node_types, edges)?;

    let ls = ls_fix.map(|f| {
        let n = f.to_nominal(nominal);
        [n.x, n.y]
    });
    Ok(GraphSnapshot {
        anchor_nodes,
        tag_nodes,
        body: BodyFeature { prior: prior.pose_n.to_vector6(), ls_fix: ls, feat_i: feat_i.map(|f| f.to_vec()) },
        mask: ModeMask { ls_fix: ls.is_some(), feat_i: feat_i.is_some() },
        topology,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, Vec3};
    use crate::lsq::FixFrame;
    use crate::odom::PriorSource;
    use crate::simulate::{preset_scene, Preset};

    fn prior() -> PosePrior {
        PosePrior { pose_n: Pose::from_vector6([0.1, 0.2, 0.3, 0.0, 0.0, 0.1]), source: PriorSource::PreviousEstimate }
    }

    fn frame() -> NominalFrame {
        NominalFrame::from_pose(Pose::IDENTITY, vec![])
    }

    fn rm(tag: TagId, anchor: AnchorId, d: f64) -> RangeMeasurement {
        RangeMeasurement { t: 0.0, tag_id: tag, anchor_id: anchor, d }
    }

    #[test]
    fn one_anchor_two_tags_duplicates_position() {
        let (scene, _) = preset_scene(Preset::Indoor);
        let g = build_graph(&[rm(0, 3, 2.0), rm(1, 3, 2.1)], &scene, &frame(), &prior(), None, None).unwrap();
        assert_eq!(g.anchor_nodes.len(), 2);
        assert_eq!(g.anchor_nodes[0].feat[..3], g.anchor_nodes[1].feat[..3]);
        assert_eq!(g.tag_nodes.len(), 2);
        assert_eq!(g.distinct_anchors(), 1);
    }

    #[test]
    fn full_indoor_epoch_counts() {
        let (scene, _) = preset_scene(Preset::Indoor);
        let mut ranges = Vec::new();
        for a in 0..8 {
            for t in 0..3 {
                ranges.push(rm(t, a, 3.0));
            }
        }
        let g = build_graph(&ranges, &scene, &frame(), &prior(), None, None).unwrap();
        assert_eq!((g.anchor_nodes.len(), g.tag_nodes.len(), g.num_nodes()), (24, 3, 28));
        // anchor<->tag both ways, tag<->body both ways, one self edge per node
        assert_eq!(g.topology.edges.len(), 2 * 24 + 2 * 3 + 28);
    }

    #[test]
    fn body_blocks_follow_mode() {
        let (scene, _) = preset_scene(Preset::Indoor);
        let r = [rm(0, 0, 1.0)];
        let ug = build_graph(&r, &scene, &frame(), &prior(), None, None).unwrap();
        assert_eq!(ug.body.ls_fix, None);
        assert_eq!(ug.body.feat_i, None);
        assert_eq!(ug.mask, ModeMask { ls_fix: false, feat_i: false });
        let fix = LsFix2D { x: 1.0, y: 2.0, frame: FixFrame::World };
        let full = build_graph(&r, &scene, &frame(), &prior(), Some(fix), Some(&[0.5, 0.5])).unwrap();
        // Zero-filling the optional blocks reduces the layout to the UG one.
        let mut reduced = full.clone();
        reduced.body.ls_fix = None;
        reduced.body.feat_i = None;
        assert_eq!(reduced.body_layout(2), ug.body_layout(2));
        assert_eq!(reduced.topology, ug.topology);
        let mut expect = prior().pose_n.to_vector6().to_vec();
        expect.extend([1.0, 2.0, 0.5, 0.5]);
        assert_eq!(full.body_layout(2), expect);
    }

    #[test]
    fn errors() {
        let (scene, _) = preset_scene(Preset::Indoor);
        assert!(build_graph(&[], &scene, &frame(), &prior(), None, None).is_err());
        assert!(build_graph(&[rm(0, 99, 1.0)], &scene, &frame(), &prior(), None, None).is_err());
        assert!(build_graph(&[rm(9, 0, 1.0)], &scene, &frame(), &prior(), None, None).is_err());
        let _ = Vec3::ZERO;
    }
}
