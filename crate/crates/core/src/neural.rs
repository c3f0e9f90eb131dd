//! Small fully-connected networks with exact reverse-mode gradients.
//!
//! Everything works on row-major batches: an input of `batch` samples is a
//! flat slice of `batch * inputs` values. Weights are stored `outputs × inputs`
//! row-major. Matrix products go through `matrixmultiply`, which is
//! single-threaded and therefore bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given pre-activation `z` and post-activation `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameters of one MLP. Also used, with the same shapes, to hold gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamFile", into = "ParamFile")]
pub struct ParamSet {
    layers: Vec<Layer>,
}

/// On-disk layout: a header of layer sizes followed by per-layer row-major
/// weights and biases.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamFile {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

impl From<ParamSet> for ParamFile {
    fn from(p: ParamSet) -> Self {
        ParamFile {
            sizes: p.sizes(),
            layers: p.layers,
        }
    }
}

impl TryFrom<ParamFile> for ParamSet {
    type Error = Error;
    fn try_from(f: ParamFile) -> Result<Self> {
        let p = ParamSet { layers: f.layers };
        if p.sizes() != f.sizes {
            return Err(Error::ShapeMismatch(format!(
                "header sizes {:?} disagree with layers {:?}",
                f.sizes,
                p.sizes()
            )));
        }
        p.validate()?;
        Ok(p)
    }
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }

    /// Output layer values before its activation.
    pub fn output_pre_activation(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

/// `C = A·B + beta·C` for `A: m×k`, `B: k×n`, `C: m×n` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl ParamSet {
    /// Fan-in scaled uniform weights `U(-1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    activation: if l + 2 == sizes.len() { output } else { hidden },
                    weights: (0..inputs * outputs)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    bias: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let p = Self { layers };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return Err(Error::ShapeMismatch(format!("layer {l} storage size")));
            }
            if l > 0 && self.layers[l - 1].outputs != layer.inputs {
                return Err(Error::ShapeMismatch(format!("layer {l} does not chain")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!("layer {l} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        if let Some(l) = self.layers.last() {
            s.push(l.outputs);
        }
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                    ..*l
                })
                .collect(),
        }
    }

    /// Weights then bias of each layer, in order.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn congruent(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn l2_norm(&self) -> f64 {
        self.tensors().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.tensors().flatten() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, expected {batch} × {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (layer.inputs, layer.outputs);
        let mut z: Vec<f64> = Vec::with_capacity(batch * o);
        for _ in 0..batch {
            z.extend_from_slice(&layer.bias);
        }
        // Z(b×o) = X(b×i) · Wᵀ(i×o) + Z
        gemm(batch, i, o, x, (i, 1), &layer.weights, (1, i), 1.0, &mut z, (o, 1));
        z
    }

    /// Forward pass for a single sample.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_batch(x, 1)
    }

    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x, batch)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map(Vec::as_slice).unwrap_or(x);
            let z = Self::affine(layer, input, batch);
            let y = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(y);
        }
        let cache = ForwardCache {
            batch,
            input: x.to_vec(),
            pre,
            post,
        };
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(x, batch)?;
        let mut cur: Option<Vec<f64>> = None;
        for layer in &self.layers {
            let input = cur.as_deref().unwrap_or(x);
            let mut z = Self::affine(layer, input, batch);
            if layer.activation != Activation::Identity {
                z.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            }
            cur = Some(z);
        }
        Ok(cur.expect("at least one layer"))
    }

    fn check_cache(&self, cache: &ForwardCache, dy: &[f64]) -> Result<()> {
        let ok = cache.pre.len() == self.layers.len()
            && cache
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.len() == cache.batch * l.outputs)
            && cache.input.len() == cache.batch * self.input_dim();
        if !ok {
            return Err(Error::ShapeMismatch("forward cache does not match parameters".into()));
        }
        if dy.len() != cache.batch * self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient has {} values, expected {} × {}",
                dy.len(),
                cache.batch,
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Gradients of `Σ yᵀ·dy` with respect to every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache, dy: &[f64]) -> Result<(ParamSet, Vec<f64>)> {
        self.backward_impl(cache, dy, None, true)
            .map(|(g, dx)| (g.expect("requested"), dx))
    }

    /// Like `backward`, with `dz` added to the gradient at the output pre-activation.
    pub fn backward_with_output_pre(
        &self,
        cache: &ForwardCache,
        dy: &[f64],
        dz: &[f64],
    ) -> Result<(ParamSet, Vec<f64>)> {
        if dz.len() != dy.len() {
            return Err(Error::ShapeMismatch("pre-activation gradient length".into()));
        }
        self.backward_impl(cache, dy, Some(dz), true)
            .map(|(g, dx)| (g.expect("requested"), dx))
    }

    /// Input gradient only; skips the weight-gradient products.
    pub fn input_gradient(&self, cache: &ForwardCache, dy: &[f64]) -> Result<Vec<f64>> {
        self.backward_impl(cache, dy, None, false).map(|(_, dx)| dx)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        dy: &[f64],
        dz_out: Option<&[f64]>,
        want_params: bool,
    ) -> Result<(Option<ParamSet>, Vec<f64>)> {
        self.check_cache(cache, dy)?;
        let b = cache.batch;
        let mut grads = want_params.then(|| self.zeros_like());
        let mut delta = dy.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (i, o) = (layer.inputs, layer.outputs);
            if layer.activation != Activation::Identity {
                for ((d, &z), &y) in delta.iter_mut().zip(&cache.pre[l]).zip(&cache.post[l]) {
                    *d *= layer.activation.derivative(z, y);
                }
            }
            if l + 1 == self.layers.len() {
                if let Some(dz) = dz_out {
                    delta.iter_mut().zip(dz).for_each(|(d, g)| *d += g);
                }
            }
            let x = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[l];
                // dW(o×i) = Δᵀ(o×b) · X(b×i)
                gemm(o, b, i, &delta, (1, o), x, (i, 1), 0.0, &mut gl.weights, (i, 1));
                for row in delta.chunks_exact(o) {
                    for (gb, d) in gl.bias.iter_mut().zip(row) {
                        *gb += d;
                    }
                }
            }
            // dX(b×i) = Δ(b×o) · W(o×i)
            let mut dx = vec![0.0; b * i];
            gemm(b, o, i, &delta, (o, 1), &layer.weights, (i, 1), 0.0, &mut dx, (i, 1));
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Polyak averaging: `self ← tau·main + (1 − tau)·self`.
    pub fn soft_update(&mut self, main: &ParamSet, tau: f64) {
        assert!(self.congruent(main), "soft update between incongruent networks");
        for (t, m) in self.tensors_mut().zip(main.tensors()) {
            for (tv, mv) in t.iter_mut().zip(m) {
                *tv = tau * mv + (1.0 - tau) * *tv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient to this global L2 norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }

    pub fn clipped(mut self, max_norm: Option<f64>) -> Self {
        self.clip_norm = max_norm.filter(|c| *c > 0.0);
        self
    }
}

/// Adam moment accumulators, congruent to the parameters they serve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update (descent on `grads`).
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, opt: &mut OptState, cfg: &AdamConfig) -> Result<()> {
    if !params.congruent(grads)
        || opt.m.len() != params.tensors().count()
        || opt.m.iter().zip(params.tensors()).any(|(m, p)| m.len() != p.len())
    {
        return Err(Error::ShapeMismatch("adam state, grads and params disagree".into()));
    }
    let scale = match cfg.clip_norm {
        Some(c) => {
            let norm = grads.l2_norm();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(opt.m.iter_mut())
        .zip(opt.v.iter_mut())
    {
        for j in 0..p.len() {
            let gj = g[j] * scale;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

pub fn save_params(path: &std::path::Path, p: &ParamSet) -> Result<()> {
    let s = serde_json::to_string(p)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &std::path::Path) -> Result<ParamSet> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}
