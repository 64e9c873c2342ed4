use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Result};
use crate::rng::{stable_hash, RngState};
use crate::tensor::{Real, Tensor};

/// Collects `(name, tensor)` pairs from a module tree.
pub trait Module<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Truncated-normal (±2σ) weights, keyed by parameter name so the draw does
/// not depend on construction order.
pub(crate) fn trunc_normal<T: Real>(seed: u64, name: &str, shape: &[usize], std: f64) -> Tensor<T> {
    let mut rng = RngState::new(seed).derive(&[stable_hash(name.as_bytes())]);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            if z.abs() <= 2.0 {
                break T::from_f64_lossy(z * std);
            }
        })
        .collect();
    Tensor::param(data, shape).expect("shape")
}

pub(crate) const INIT_STD: f64 = 0.02;

#[derive(Clone)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn init(seed: u64, name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: trunc_normal(seed, &join(name, "weight"), &[input, output], INIT_STD),
            bias: Tensor::param(vec![T::zero(); output], &[output]).expect("shape"),
        }
    }

    /// Applies to the last axis of `x`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = x.shape();
        let (input, output) = (self.weight.shape()[0], self.weight.shape()[1]);
        if shape.last() != Some(&input) {
            return Err(dim_err!("linear {}→{} applied to {:?}", input, output, shape));
        }
        let rows = x.numel() / input;
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = output;
        x.reshape(&[rows, input])?
            .matmul(&self.weight)?
            .add(&self.bias)?
            .reshape(&out_shape)
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

#[derive(Clone)]
pub struct LayerNorm<T: Real> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl<T: Real> LayerNorm<T> {
    pub fn init(dim: usize) -> Self {
        Self {
            gain: Tensor::param(vec![T::one(); dim], &[dim]).expect("shape"),
            bias: Tensor::param(vec![T::zero(); dim], &[dim]).expect("shape"),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gain, &self.bias, LN_EPS)
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "gain"), &self.gain));
        out.push((join(prefix, "bias"), &self.bias));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "gain"), &mut self.gain));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Clone)]
pub struct Attention<T: Real> {
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub heads: usize,
}

impl<T: Real> Attention<T> {
    pub fn init(seed: u64, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            qkv: Linear::init(seed, &join(name, "qkv"), dim, 3 * dim),
            proj: Linear::init(seed, &join(name, "proj"), dim, dim),
            heads,
        }
    }

    /// `x` is `[G, S, D]`: G independent sequences of S tokens. `keep`, when
    /// given, is `[G, S]` and removes tokens from the key/value set.
    pub fn forward(&self, x: &Tensor<T>, keep: Option<&[bool]>) -> Result<Tensor<T>> {
        let &[g, s, d] = x.shape() else {
            return Err(dim_err!("attention input must be [G, S, D], got {:?}", x.shape()));
        };
        let h = self.heads;
        let dh = d / h;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape(&[g, s, 3, h, dh])?
            .permute(&[2, 0, 3, 1, 4])?
            .reshape(&[3, g * h, s, dh])?;
        let part = |i: usize| qkv.narrow(0, i, 1)?.reshape(&[g * h, s, dh]);
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let scores = q.bmm_transposed(&k)?.scale(1.0 / (dh as f64).sqrt());
        let probs = match keep {
            None => scores.softmax(2)?,
            Some(keep) => {
                if keep.len() != g * s {
                    return Err(dim_err!("key mask of {} for {} sequences of {}", keep.len(), g, s));
                }
                let mut full = Vec::with_capacity(g * h * s * s);
                for gi in 0..g {
                    let row = &keep[gi * s..(gi + 1) * s];
                    for _ in 0..h * s {
                        full.extend_from_slice(row);
                    }
                }
                scores.softmax_masked(Arc::new(full))?
            }
        };
        let ctx = probs
            .bmm(&v)?
            .reshape(&[g, h, s, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[g, s, d])?;
        self.proj.forward(&ctx)
    }

    /// Attention over a single key: the softmax weight is exactly one, so
    /// each token's output is its own projected value.
    pub fn forward_single_key(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = *x.shape().last().ok_or_else(|| dim_err!("attention on a scalar"))?;
        let v_weight = self.qkv.weight.narrow(1, 2 * d, d)?;
        let v_bias = self.qkv.bias.narrow(0, 2 * d, d)?;
        let rows = x.numel() / d;
        let v = x.reshape(&[rows, d])?.matmul(&v_weight)?.add(&v_bias)?;
        self.proj.forward(&v)?.reshape(x.shape())
    }
}

impl<T: Real> Module<T> for Attention<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.qkv.visit(&join(prefix, "qkv"), out);
        self.proj.visit(&join(prefix, "proj"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.qkv.visit_mut(&join(prefix, "qkv"), out);
        self.proj.visit_mut(&join(prefix, "proj"), out);
    }
}

#[derive(Clone)]
pub struct Mlp<T: Real> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> Mlp<T> {
    pub fn init(seed: u64, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::init(seed, &join(name, "fc1"), dim, hidden),
            fc2: Linear::init(seed, &join(name, "fc2"), hidden, dim),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}

impl<T: Real> Module<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
    }
}
