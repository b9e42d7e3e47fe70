use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// `x[n x in] * W[in x out] + b[1 x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        store.insert_glorot(rng, &format!("{name}.w"), in_dim, out_dim, in_dim, out_dim)?;
        store.insert_zeros(&format!("{name}.b"), 1, out_dim)?;
        Ok(Self { name: name.into(), in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &format!("{}.w", self.name))?;
        let b = tape.param(store, &format!("{}.b", self.name))?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`; the activation sits between layers.
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(format!("mlp `{name}` needs at least two dims")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::init(store, rng, &format!("{name}.{i}"), d[0], d[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, store, x)?;
            if i + 1 < self.layers.len() {
                x = self.activation.apply(tape, x);
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

/// Valid 1-D convolution over `x[C_in x T]`, giving `[C_out x T-K+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        let fan_in = c_in * kernel;
        store.insert_glorot(rng, &format!("{name}.w"), c_out, fan_in, fan_in, c_out * kernel)?;
        store.insert_zeros(&format!("{name}.b"), c_out, 1)?;
        Ok(Self { name: name.into(), c_in, c_out, kernel })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (c, t) = tape.shape(x);
        if c != self.c_in {
            return Err(Error::ShapeMismatch { op: "conv1d", lhs: alloc::vec![c, t], rhs: alloc::vec![self.c_in, self.kernel] });
        }
        if t < self.kernel {
            return Err(Error::InvalidArgument(format!("conv1d needs T >= {} samples, got {t}", self.kernel)));
        }
        let cols = tape.im2col(x, self.kernel)?;
        let w = tape.param(store, &format!("{}.w", self.name))?;
        let b = tape.param(store, &format!("{}.b", self.name))?;
        let y = tape.matmul(w, cols)?;
        tape.add_col(y, b)
    }
}

/// GRU cell with gates ordered `r, z, n` in the packed weights:
/// `r = s(x Wr + h Ur + b)`, `z = s(x Wz + h Uz + b)`,
/// `n = tanh(x Wn + bn + r * (h Un + cn))`, `h' = (1 - z) * n + z * h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, input: usize, hidden: usize) -> Result<Self> {
        store.insert_glorot(rng, &format!("{name}.w_ih"), input, 3 * hidden, input, hidden)?;
        store.insert_glorot(rng, &format!("{name}.w_hh"), hidden, 3 * hidden, hidden, hidden)?;
        store.insert_zeros(&format!("{name}.b_ih"), 1, 3 * hidden)?;
        store.insert_zeros(&format!("{name}.b_hh"), 1, 3 * hidden)?;
        Ok(Self { name: name.into(), input, hidden })
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        if tape.shape(x) != (1, self.input) || tape.shape(h) != (1, self.hidden) {
            let (xs, hs) = (tape.shape(x), tape.shape(h));
            return Err(Error::ShapeMismatch { op: "gru_step", lhs: alloc::vec![xs.0, xs.1, hs.0, hs.1], rhs: alloc::vec![self.input, self.hidden] });
        }
        let n = self.hidden;
        let w_ih = tape.param(store, &format!("{}.w_ih", self.name))?;
        let w_hh = tape.param(store, &format!("{}.w_hh", self.name))?;
        let b_ih = tape.param(store, &format!("{}.b_ih", self.name))?;
        let b_hh = tape.param(store, &format!("{}.b_hh", self.name))?;
        let gx = tape.matmul(x, w_ih)?;
        let gx = tape.add_row(gx, b_ih)?;
        let gh = tape.matmul(h, w_hh)?;
        let gh = tape.add_row(gh, b_hh)?;
        let (xr, xz, xn) = (tape.slice_cols(gx, 0, n)?, tape.slice_cols(gx, n, n)?, tape.slice_cols(gx, 2 * n, n)?);
        let (hr, hz, hn) = (tape.slice_cols(gh, 0, n)?, tape.slice_cols(gh, n, n)?, tape.slice_cols(gh, 2 * n, n)?);
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hn)?;
        let cand = tape.add(xn, rn)?;
        let cand = tape.tanh(cand);
        // h' = n + z * (h - n)
        let diff = tape.sub(h, cand)?;
        let zd = tape.mul(z, diff)?;
        tape.add(cand, zd)
    }
}

/// Stacked GRU; the state is one row vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedGru {
    pub layers: Vec<Gru>,
}

impl StackedGru {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, input: usize, hidden: usize, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| Gru::init(store, rng, &format!("{name}.{i}"), if i == 0 { input } else { hidden }, hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, mut x: Var, state: &[Var]) -> Result<Vec<Var>> {
        if state.len() != self.layers.len() {
            return Err(Error::ShapeMismatch { op: "stacked_gru", lhs: alloc::vec![state.len()], rhs: alloc::vec![self.layers.len()] });
        }
        let mut out = Vec::with_capacity(state.len());
        for (l, h) in self.layers.iter().zip(state) {
            x = l.step(tape, store, x, *h)?;
            out.push(x);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub dst: usize,
    pub src: usize,
    pub kind: usize,
}

/// Typed nodes plus typed directed edges, kept sorted by `(dst, src, kind)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    pub node_types: Vec<usize>,
    pub edges: Vec<Edge>,
}

impl GraphTopology {
    pub fn new(node_types: Vec<usize>, mut edges: Vec<Edge>) -> Result<Self> {
        let n = node_types.len();
        if let Some(e) = edges.iter().find(|e| e.src >= n || e.dst >= n) {
            return Err(Error::InvalidArgument(format!("dangling edge {} -> {} with {n} nodes", e.src, e.dst)));
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self { node_types, edges })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }
}

/// Multi-head attention layer over a heterogeneous graph: one input
/// projection per node type and one attention vector pair per edge type.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub name: String,
    pub in_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub node_types: usize,
    pub edge_types: usize,
    /// Concatenate heads and apply ELU; otherwise average heads.
    pub concat: bool,
}

impl GatLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        heads: usize,
        head_dim: usize,
        node_types: usize,
        edge_types: usize,
        concat: bool,
    ) -> Result<Self> {
        let width = heads * head_dim;
        for t in 0..node_types {
            store.insert_glorot(rng, &format!("{name}.w{t}"), in_dim, width, in_dim, width)?;
        }
        store.insert_glorot(rng, &format!("{name}.a_src"), edge_types, width, head_dim, 1)?;
        store.insert_glorot(rng, &format!("{name}.a_dst"), edge_types, width, head_dim, 1)?;
        Ok(Self { name: name.into(), in_dim, heads, head_dim, node_types, edge_types, concat })
    }

    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.heads * self.head_dim
        } else {
            self.head_dim
        }
    }

    /// Returns the layer output and the attention weights `[E x H]` in edge
    /// order.
    pub fn forward_with_attention(&self, tape: &mut Tape, store: &ParamStore, x: Var, topo: &GraphTopology) -> Result<(Var, Var)> {
        let n = topo.num_nodes();
        if tape.shape(x) != (n, self.in_dim) {
            let s = tape.shape(x);
            return Err(Error::ShapeMismatch { op: "gat_layer", lhs: alloc::vec![s.0, s.1], rhs: alloc::vec![n, self.in_dim] });
        }
        if topo.edges.is_empty() {
            return Err(Error::Empty("graph edges"));
        }
        if let Some(e) = topo.edges.iter().find(|e| e.kind >= self.edge_types) {
            return Err(Error::InvalidArgument(format!("edge kind {} out of range", e.kind)));
        }
        let mut projected: Option<Var> = None;
        for t in 0..self.node_types {
            let idx: Vec<usize> = (0..n).filter(|i| topo.node_types[*i] == t).collect();
            if idx.is_empty() {
                continue;
            }
            let w = tape.param(store, &format!("{}.w{t}", self.name))?;
            let rows = tape.gather_rows(x, &idx)?;
            let p = tape.matmul(rows, w)?;
            let p = tape.scatter_add_rows(p, &idx, n)?;
            projected = Some(match projected {
                None => p,
                Some(acc) => tape.add(acc, p)?,
            });
        }
        let wh = projected.ok_or(Error::Empty("graph nodes"))?;
        let src: Vec<usize> = topo.edges.iter().map(|e| e.src).collect();
        let dst: Vec<usize> = topo.edges.iter().map(|e| e.dst).collect();
        let kinds: Vec<usize> = topo.edges.iter().map(|e| e.kind).collect();
        let a_src = tape.param(store, &format!("{}.a_src", self.name))?;
        let a_dst = tape.param(store, &format!("{}.a_dst", self.name))?;
        let wh_src = tape.gather_rows(wh, &src)?;
        let wh_dst = tape.gather_rows(wh, &dst)?;
        let ae_src = tape.gather_rows(a_src, &kinds)?;
        let ae_dst = tape.gather_rows(a_dst, &kinds)?;
        let s1 = tape.mul(wh_src, ae_src)?;
        let s2 = tape.mul(wh_dst, ae_dst)?;
        let s = tape.add(s1, s2)?;
        let scores = tape.head_sum(s, self.heads)?;
        let scores = tape.leaky_relu(scores, LEAKY_SLOPE);
        let alpha = tape.segment_softmax(scores, &dst)?;
        let weights = tape.head_expand(alpha, self.head_dim);
        let msg = tape.mul(wh_src, weights)?;
        let agg = tape.scatter_add_rows(msg, &dst, n)?;
        let out = if self.concat { tape.elu(agg) } else { tape.head_mean(agg, self.heads)? };
        Ok((out, alpha))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, topo: &GraphTopology) -> Result<Var> {
        Ok(self.forward_with_attention(tape, store, x, topo)?.0)
    }
}
