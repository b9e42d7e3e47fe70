use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let n = value.len();
        Self { value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named parameters with their gradient accumulators and Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidArgument(alloc::format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.to_string(), Param::new(value));
        Ok(())
    }

    /// Glorot-uniform matrix, `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot<R: Rng>(&mut self, rng: &mut R, name: &str, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Result<()> {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Tensor::zeros(vec![rows, cols]))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).map(|p| &p.value).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &[f64]) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if p.grad.len() != g.len() {
            return Err(Error::ShapeMismatch { op: "accumulate_grad", lhs: vec![p.grad.len()], rhs: vec![g.len()] });
        }
        for (o, x) in p.grad.iter_mut().zip(g) {
            *o += x;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.values().flat_map(|p| p.grad.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.grad_norm();
        if n > max_norm && n.is_finite() {
            let s = max_norm / n;
            for p in self.params.values_mut() {
                p.grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        n
    }

    /// One bias-corrected Adam update; gradients are zeroed afterwards.
    pub fn adam_step(&mut self, opt: &Adam) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - opt.beta1.powf(t);
        let c2 = 1.0 - opt.beta2.powf(t);
        for p in self.params.values_mut() {
            let data = p.value.data_mut();
            for k in 0..data.len() {
                let g = p.grad[k];
                p.m[k] = opt.beta1 * p.m[k] + (1.0 - opt.beta1) * g;
                p.v[k] = opt.beta2 * p.v[k] + (1.0 - opt.beta2) * g * g;
                let mh = p.m[k] / c1;
                let vh = p.v[k] / c2;
                data[k] -= opt.lr * mh / (vh.sqrt() + opt.eps);
                p.grad[k] = 0.0;
            }
        }
    }

    /// Copies values from `other` for every shared name with equal shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            let src = other.value(name)?;
            if src.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch { op: "load_values", lhs: p.value.shape().to_vec(), rhs: src.shape().to_vec() });
            }
            p.value = src.clone();
        }
        Ok(())
    }
}
