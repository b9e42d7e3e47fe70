use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::graph::{GraphSnapshot, EDGE_TYPES, NODE_TYPES};
use super::{pose_from_row, ModelConfig, OdomNet};
use crate::error::Result;
use crate::geom::Pose;
use crate::nn::{Activation, GatLayer, Linear, Mlp, ParamStore, Tape, Var};

/// Per-type encoders, a stack of graph-attention layers, and an MLP head on
/// the body node. The output is a correction added to the prior, plus a
/// linear skip from the raw body features.
#[derive(Debug, Clone, PartialEq)]
pub struct RangingNet {
    pub enc_anchor: Mlp,
    pub enc_tag: Mlp,
    pub enc_body: Mlp,
    pub gat: Vec<GatLayer>,
    pub head: Mlp,
    pub skip: Linear,
    pub scale: f64,
    pub feat_dim: usize,
}

impl RangingNet {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let h = cfg.hidden;
        let enc_anchor = Mlp::init(store, rng, "ug.enc_anchor", &[4, h, h], Activation::Elu)?;
        let enc_tag = Mlp::init(store, rng, "ug.enc_tag", &[3, h, h], Activation::Elu)?;
        let enc_body = Mlp::init(store, rng, "ug.enc_body", &[cfg.body_dim(), h, h], Activation::Elu)?;
        let mut gat = Vec::with_capacity(cfg.gat_layers);
        let mut width = h;
        for l in 0..cfg.gat_layers {
            let last = l + 1 == cfg.gat_layers;
            let layer = GatLayer::init(
                store,
                rng,
                &format!("ug.gat{l}"),
                width,
                cfg.gat_heads,
                cfg.gat_head_dim,
                NODE_TYPES,
                EDGE_TYPES,
                !last,
            )?;
            width = layer.out_dim();
            gat.push(layer);
        }
        let head = Mlp::init(store, rng, "ug.head", &[width, h, 6], Activation::Elu)?;
        store.insert_zeros("ug.skip.w", cfg.body_dim(), 6)?;
        store.insert_zeros("ug.skip.b", 1, 6)?;
        let skip = Linear { name: "ug.skip".into(), in_dim: cfg.body_dim(), out_dim: 6 };
        Ok(Self { enc_anchor, enc_tag, enc_body, gat, head, skip, scale: cfg.coord_scale, feat_dim: cfg.feat_dim })
    }

    fn metric_row(&self, inverse: bool) -> [f64; 6] {
        let s = if inverse { 1.0 / self.scale } else { self.scale };
        [s, s, s, 1.0, 1.0, 1.0]
    }

    /// Pose row `[1 x 6]` in N. `prior` is the metric prior row; `feat_i`
    /// the inertial features when the mode has them.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, graph: &GraphSnapshot, prior: Var, feat_i: Option<Var>) -> Result<Var> {
        let inv = 1.0 / self.scale;
        let anchors: Vec<f64> = graph.anchor_nodes.iter().flat_map(|a| a.feat.iter().map(move |v| v * inv)).collect();
        let anchors = tape.constant_matrix(graph.anchor_nodes.len(), 4, anchors)?;
        let tags: Vec<f64> = graph.tag_nodes.iter().flat_map(|t| t.feat).collect();
        let tags = tape.constant_matrix(graph.tag_nodes.len(), 3, tags)?;

        let unscale = tape.constant_row(&self.metric_row(true));
        let prior_in = tape.mul(prior, unscale)?;
        // The fix enters as its offset from the prior, so a missing fix reads as no correction.
        let ls = match graph.body.ls_fix {
            Some(f) => {
                let fix = tape.constant_row(&[f[0] * inv, f[1] * inv]);
                let xy = tape.slice_cols(prior_in, 0, 2)?;
                tape.sub(fix, xy)?
            }
            None => tape.constant_row(&[0.0; 2]),
        };
        let feat = match feat_i {
            Some(f) => f,
            None => tape.constant_row(&vec![0.0; self.feat_dim]),
        };
        let body_in = tape.concat_cols(&[prior_in, ls, feat])?;

        let ea = self.enc_anchor.forward(tape, store, anchors)?;
        let et = self.enc_tag.forward(tape, store, tags)?;
        let eb = self.enc_body.forward(tape, store, body_in)?;
        let mut x = tape.concat_rows(&[ea, et, eb])?;
        for layer in &self.gat {
            x = layer.forward(tape, store, x, &graph.topology)?;
        }
        let body = tape.slice_rows(x, graph.body_index(), 1)?;
        let out = self.head.forward(tape, store, body)?;
        let skip = self.skip.forward(tape, store, body_in)?;
        let out = tape.add(out, skip)?;
        let out = tape.add(out, prior_in)?;
        let rescale = tape.constant_row(&self.metric_row(false));
        tape.mul(out, rescale)
    }
}

/// Tape-free ranging pass using the graph's own body features.
pub fn ranging_forward(graph: &GraphSnapshot, net: &OdomNet) -> Result<Pose> {
    let mut tape = Tape::new();
    let prior = tape.constant_row(&graph.body.prior);
    let feat = graph.body.feat_i.as_ref().map(|f| tape.constant_row(f));
    let out = net.ranging.forward(&mut tape, &net.store, graph, prior, feat)?;
    Ok(pose_from_row(tape.value(out)))
}
