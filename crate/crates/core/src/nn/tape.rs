//! Reverse-mode tape over rank-2 arrays.
//!
//! Every operation appends a node holding its value; `backward` walks the
//! nodes in reverse and accumulates exact gradients. Summation orders are
//! fixed by operand order, so results are reproducible bit for bit.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geom::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Transpose(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    Square(Var),
    Atan2(Var, Var),
    WrapAngle(Var),
    Sum(Var),
    Mean(Var),
    MeanCols(Var),
    SegmentSoftmax(Var, Vec<usize>),
    HeadSum(Var, usize),
    HeadExpand(Var, usize),
    HeadMean(Var, usize),
    Im2Col(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Var>,
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch { op, lhs: vec![a.0, a.1], rhs: vec![b.0, b.1] }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node shape")
    }

    pub fn constant(&mut self, t: &Tensor) -> Result<Var> {
        let (r, c) = t.dims2()?;
        Ok(self.push(r, c, t.data().to_vec(), Op::Leaf))
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(mismatch("constant", (rows, cols), (1, data.len())));
        }
        Ok(self.push(rows, cols, data, Op::Leaf))
    }

    pub fn constant_row(&mut self, data: &[f64]) -> Var {
        self.push(1, data.len(), data.to_vec(), Op::Leaf)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.push(1, 1, vec![v], Op::Leaf)
    }

    /// Leaf for a stored parameter; registered once per tape.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = store.value(name)?;
        let v = self.constant(t)?;
        self.params.insert(name.into(), v);
        Ok(v)
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(mismatch("matmul", (ar, ac), (br, bc)));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; ar * bc];
        for i in 0..ar {
            let orow = &mut out[i * bc..(i + 1) * bc];
            for k in 0..ac {
                let x = av[i * ac + k];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[k * bc..(k + 1) * bc];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push(ar, bc, out, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let out = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(sa.0, sa.1, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[r x c] + b[1 x c]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (1, c) {
            return Err(mismatch("add_row", (r, c), self.shape(b)));
        }
        let bv = &self.nodes[b.0].value;
        let out = self.nodes[a.0].value.iter().enumerate().map(|(i, x)| x + bv[i % c]).collect();
        Ok(self.push(r, c, out, Op::AddRow(a, b)))
    }

    /// `a[r x c] + b[r x 1]` broadcast over columns.
    pub fn add_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (r, 1) {
            return Err(mismatch("add_col", (r, c), self.shape(b)));
        }
        let bv = &self.nodes[b.0].value;
        let out = self.nodes[a.0].value.iter().enumerate().map(|(i, x)| x + bv[i / c]).collect();
        Ok(self.push(r, c, out, Op::AddCol(a, b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(r, c, out, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { x.exp() - 1.0 }, Op::Elu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.cos(), Op::Cos(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Shifts into `(-pi, pi]`; the shift is piecewise constant, so the
    /// gradient passes through unchanged.
    pub fn wrap_angle(&mut self, a: Var) -> Var {
        self.unary(a, wrap_angle, Op::WrapAngle(a))
    }

    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        self.zip_same(y, x, "atan2", |a, b| a.atan2(b), Op::Atan2(y, x))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(1, 1, vec![s], Op::Mean(a))
    }

    /// Mean over columns: `[r x c] -> [r x 1]`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = &self.nodes[a.0].value;
        let out = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64).collect();
        self.push(r, 1, out, Op::MeanCols(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push(c, r, out, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let r = self.shape(first).0;
        let mut c = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.0 != r {
                return Err(mismatch("concat_cols", self.shape(first), s));
            }
            c += s.1;
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                let n = &self.nodes[p.0];
                out.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
            }
        }
        Ok(self.push(r, c, out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows"))?;
        let c = self.shape(first).1;
        let mut r = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.1 != c {
                return Err(mismatch("concat_rows", self.shape(first), s));
            }
            r += s.0;
        }
        let mut out = Vec::with_capacity(r * c);
        for p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        Ok(self.push(r, c, out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + width > c {
            return Err(mismatch("slice_cols", (r, c), (start, width)));
        }
        let v = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + width]);
        }
        Ok(self.push(r, width, out, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, height: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + height > r {
            return Err(mismatch("slice_rows", (r, c), (start, height)));
        }
        let out = self.nodes[a.0].value[start * c..(start + height) * c].to_vec();
        Ok(self.push(height, c, out, Op::SliceRows(a, start)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(bad) = idx.iter().find(|i| **i >= r) {
            return Err(mismatch("gather_rows", (r, c), (*bad, 0)));
        }
        let v = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        Ok(self.push(idx.len(), c, out, Op::GatherRows(a, idx.to_vec())))
    }

    /// `out[idx[e]] += a[e]` into `n` rows, in row order of `a`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if idx.len() != r || idx.iter().any(|i| *i >= n) {
            return Err(mismatch("scatter_add_rows", (r, c), (idx.len(), n)));
        }
        let v = &self.nodes[a.0].value;
        let mut out = vec![0.0; n * c];
        for (e, &i) in idx.iter().enumerate() {
            for j in 0..c {
                out[i * c + j] += v[e * c + j];
            }
        }
        Ok(self.push(n, c, out, Op::ScatterAddRows(a, idx.to_vec())))
    }

    /// Softmax over rows sharing a segment id, independently per column.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if segments.len() != r {
            return Err(mismatch("segment_softmax", (r, c), (segments.len(), 1)));
        }
        let nseg = segments.iter().max().map_or(0, |m| m + 1);
        let v = &self.nodes[a.0].value;
        let mut max = vec![f64::NEG_INFINITY; nseg * c];
        for (e, &s) in segments.iter().enumerate() {
            for j in 0..c {
                max[s * c + j] = max[s * c + j].max(v[e * c + j]);
            }
        }
        let mut out = vec![0.0; r * c];
        let mut denom = vec![0.0; nseg * c];
        for (e, &s) in segments.iter().enumerate() {
            for j in 0..c {
                let x = (v[e * c + j] - max[s * c + j]).exp();
                out[e * c + j] = x;
                denom[s * c + j] += x;
            }
        }
        for (e, &s) in segments.iter().enumerate() {
            for j in 0..c {
                out[e * c + j] /= denom[s * c + j];
            }
        }
        Ok(self.push(r, c, out, Op::SegmentSoftmax(a, segments.to_vec())))
    }

    /// `[r x H*D] -> [r x H]`, summing each head's block.
    pub fn head_sum(&mut self, a: Var, heads: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if heads == 0 || c % heads != 0 {
            return Err(mismatch("head_sum", (r, c), (heads, 0)));
        }
        let d = c / heads;
        let v = &self.nodes[a.0].value;
        let out = (0..r * heads).map(|k| v[k * d..(k + 1) * d].iter().sum()).collect();
        Ok(self.push(r, heads, out, Op::HeadSum(a, heads)))
    }

    /// `[r x H] -> [r x H*D]`, repeating each head value `D` times.
    pub fn head_expand(&mut self, a: Var, dim: usize) -> Var {
        let (r, h) = self.shape(a);
        let v = &self.nodes[a.0].value;
        let out = (0..r * h * dim).map(|k| v[k / dim]).collect();
        self.push(r, h * dim, out, Op::HeadExpand(a, dim))
    }

    /// `[r x H*D] -> [r x D]`, averaging over heads.
    pub fn head_mean(&mut self, a: Var, heads: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if heads == 0 || c % heads != 0 {
            return Err(mismatch("head_mean", (r, c), (heads, 0)));
        }
        let d = c / heads;
        let v = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            for h in 0..heads {
                for j in 0..d {
                    out[i * d + j] += v[i * c + h * d + j];
                }
            }
        }
        for o in &mut out {
            *o /= heads as f64;
        }
        Ok(self.push(r, d, out, Op::HeadMean(a, heads)))
    }

    /// Unfolds `x[C x T]` into `[C*K x T-K+1]` so a valid 1-D convolution
    /// becomes one matmul. Row `c*K + k` holds `x[c, t + k]`.
    pub fn im2col(&mut self, a: Var, kernel: usize) -> Result<Var> {
        let (ch, t) = self.shape(a);
        if kernel == 0 || t < kernel {
            return Err(mismatch("im2col", (ch, t), (kernel, kernel)));
        }
        let to = t - kernel + 1;
        let v = &self.nodes[a.0].value;
        let mut out = vec![0.0; ch * kernel * to];
        for c in 0..ch {
            for k in 0..kernel {
                let row = c * kernel + k;
                out[row * to..(row + 1) * to].copy_from_slice(&v[c * t + k..c * t + k + to]);
            }
        }
        Ok(self.push(ch * kernel, to, out, Op::Im2Col(a, kernel)))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(mismatch("backward", self.shape(loss), (1, 1)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            backprop(&self.nodes, node, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds parameter gradients from the last `backward` into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (name, v) in &self.params {
            if let Some(g) = self.grad(*v) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| -> &[f64] { &nodes[v.0].value };
    let elementwise = |grads: &mut [Option<Vec<f64>>], a: Var, f: &dyn Fn(usize) -> f64| {
        let s = slot(grads, nodes, a);
        for (k, gk) in g.iter().enumerate() {
            s[k] += gk * f(k);
        }
    };
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ar, ac) = (nodes[a.0].rows, nodes[a.0].cols);
            let bc = nodes[b.0].cols;
            let (av, bv) = (val(*a), val(*b));
            {
                let ga = slot(grads, nodes, *a);
                for i in 0..ar {
                    let grow = &g[i * bc..(i + 1) * bc];
                    for k in 0..ac {
                        let brow = &bv[k * bc..(k + 1) * bc];
                        ga[i * ac + k] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            let gb = slot(grads, nodes, *b);
            for i in 0..ar {
                let grow = &g[i * bc..(i + 1) * bc];
                for k in 0..ac {
                    let x = av[i * ac + k];
                    if x == 0.0 {
                        continue;
                    }
                    for (o, y) in gb[k * bc..(k + 1) * bc].iter_mut().zip(grow) {
                        *o += x * y;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            elementwise(grads, *a, &|_| 1.0);
            elementwise(grads, *b, &|_| 1.0);
        }
        Op::Sub(a, b) => {
            elementwise(grads, *a, &|_| 1.0);
            elementwise(grads, *b, &|_| -1.0);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            elementwise(grads, *a, &|k| bv[k]);
            elementwise(grads, *b, &|k| av[k]);
        }
        Op::AddRow(a, b) => {
            elementwise(grads, *a, &|_| 1.0);
            let c = node.cols;
            let gb = slot(grads, nodes, *b);
            for (k, gk) in g.iter().enumerate() {
                gb[k % c] += gk;
            }
        }
        Op::AddCol(a, b) => {
            elementwise(grads, *a, &|_| 1.0);
            let c = node.cols;
            let gb = slot(grads, nodes, *b);
            for (k, gk) in g.iter().enumerate() {
                gb[k / c] += gk;
            }
        }
        Op::Scale(a, s) => elementwise(grads, *a, &|_| *s),
        Op::AddScalar(a) | Op::WrapAngle(a) => elementwise(grads, *a, &|_| 1.0),
        Op::ConcatCols(parts) => {
            let c = node.cols;
            let mut off = 0;
            for p in parts {
                let pc = nodes[p.0].cols;
                let gp = slot(grads, nodes, *p);
                for i in 0..node.rows {
                    for j in 0..pc {
                        gp[i * pc + j] += g[i * c + off + j];
                    }
                }
                off += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for p in parts {
                let n = nodes[p.0].value.len();
                let gp = slot(grads, nodes, *p);
                for (o, x) in gp.iter_mut().zip(&g[off..off + n]) {
                    *o += x;
                }
                off += n;
            }
        }
        Op::SliceCols(a, start) => {
            let ac = nodes[a.0].cols;
            let w = node.cols;
            let ga = slot(grads, nodes, *a);
            for i in 0..node.rows {
                for j in 0..w {
                    ga[i * ac + start + j] += g[i * w + j];
                }
            }
        }
        Op::SliceRows(a, start) => {
            let c = node.cols;
            let ga = slot(grads, nodes, *a);
            for (k, gk) in g.iter().enumerate() {
                ga[start * c + k] += gk;
            }
        }
        Op::GatherRows(a, idx) => {
            let c = node.cols;
            let ga = slot(grads, nodes, *a);
            for (e, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    ga[i * c + j] += g[e * c + j];
                }
            }
        }
        Op::ScatterAddRows(a, idx) => {
            let c = node.cols;
            let ga = slot(grads, nodes, *a);
            for (e, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    ga[e * c + j] += g[i * c + j];
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (nodes[a.0].rows, nodes[a.0].cols);
            let ga = slot(grads, nodes, *a);
            for i in 0..r {
                for j in 0..c {
                    ga[i * c + j] += g[j * r + i];
                }
            }
        }
        Op::LeakyRelu(a, slope) => {
            let av = val(*a);
            elementwise(grads, *a, &|k| if av[k] > 0.0 { 1.0 } else { *slope });
        }
        Op::Elu(a) => {
            let av = val(*a);
            let y = &node.value;
            elementwise(grads, *a, &|k| if av[k] > 0.0 { 1.0 } else { y[k] + 1.0 });
        }
        Op::Tanh(a) => {
            let y = &node.value;
            elementwise(grads, *a, &|k| 1.0 - y[k] * y[k]);
        }
        Op::Sigmoid(a) => {
            let y = &node.value;
            elementwise(grads, *a, &|k| y[k] * (1.0 - y[k]));
        }
        Op::Sin(a) => {
            let av = val(*a);
            elementwise(grads, *a, &|k| av[k].cos());
        }
        Op::Cos(a) => {
            let av = val(*a);
            elementwise(grads, *a, &|k| -av[k].sin());
        }
        Op::Sqrt(a) => {
            let y = &node.value;
            elementwise(grads, *a, &|k| 0.5 / y[k]);
        }
        Op::Square(a) => {
            let av = val(*a);
            elementwise(grads, *a, &|k| 2.0 * av[k]);
        }
        Op::Atan2(y, x) => {
            let (yv, xv) = (val(*y), val(*x));
            let r2 = |k: usize| xv[k] * xv[k] + yv[k] * yv[k];
            elementwise(grads, *y, &|k| xv[k] / r2(k));
            elementwise(grads, *x, &|k| -yv[k] / r2(k));
        }
        Op::Sum(a) => elementwise_broadcast(grads, nodes, *a, g[0]),
        Op::Mean(a) => {
            let n = nodes[a.0].value.len() as f64;
            elementwise_broadcast(grads, nodes, *a, g[0] / n);
        }
        Op::MeanCols(a) => {
            let c = nodes[a.0].cols;
            let ga = slot(grads, nodes, *a);
            for (k, o) in ga.iter_mut().enumerate() {
                *o += g[k / c] / c as f64;
            }
        }
        Op::SegmentSoftmax(a, segments) => {
            let c = node.cols;
            let y = &node.value;
            let nseg = segments.iter().max().map_or(0, |m| m + 1);
            let mut dot = vec![0.0; nseg * c];
            for (e, &s) in segments.iter().enumerate() {
                for j in 0..c {
                    dot[s * c + j] += g[e * c + j] * y[e * c + j];
                }
            }
            let ga = slot(grads, nodes, *a);
            for (e, &s) in segments.iter().enumerate() {
                for j in 0..c {
                    ga[e * c + j] += y[e * c + j] * (g[e * c + j] - dot[s * c + j]);
                }
            }
        }
        Op::HeadSum(a, heads) => {
            let d = nodes[a.0].cols / heads;
            let ga = slot(grads, nodes, *a);
            for (k, o) in ga.iter_mut().enumerate() {
                *o += g[k / d];
            }
        }
        Op::HeadExpand(a, dim) => {
            let ga = slot(grads, nodes, *a);
            for (k, gk) in g.iter().enumerate() {
                ga[k / dim] += gk;
            }
        }
        Op::HeadMean(a, heads) => {
            let c = nodes[a.0].cols;
            let d = c / heads;
            let ga = slot(grads, nodes, *a);
            for (k, o) in ga.iter_mut().enumerate() {
                let (i, j) = (k / c, k % c % d);
                *o += g[i * d + j] / *heads as f64;
            }
        }
        Op::Im2Col(a, kernel) => {
            let t = nodes[a.0].cols;
            let to = node.cols;
            let ch = nodes[a.0].rows;
            let ga = slot(grads, nodes, *a);
            for c in 0..ch {
                for k in 0..*kernel {
                    let row = c * kernel + k;
                    for s in 0..to {
                        ga[c * t + k + s] += g[row * to + s];
                    }
                }
            }
        }
    }
}

fn elementwise_broadcast(grads: &mut [Option<Vec<f64>>], nodes: &[Node], a: Var, g: f64) {
    for o in slot(grads, nodes, a).iter_mut() {
        *o += g;
    }
}
