//! MLP noise predictor with exact reverse-mode gradients, Adam and EMA.
//!
//! The network input for one sample is the concatenation
//! `[x, time_embedding(t), cond_table[c], extra]`, followed by hidden
//! affine layers with a smooth activation and a final affine layer whose
//! width equals the data dimension. `extra` holds additional scalar
//! features (the consistency student feeds its guidance scale there).
//!
//! Parameters are kept as a fixed, ordered list of tensors:
//! the condition table first, then `(weight, bias)` for every layer from
//! input to output. That order is the serialization order and the order
//! in which optimizers and EMA walk the parameters.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{affine_rows, Tensor};

/// `None` selects the unconditional (NULL) row of the condition table.
pub type Condition = Option<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn id(self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Checkpoint(format!("unknown activation id {other}"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Architecture of an [`MlpParams`] network.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub data_dim: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub extra_inputs: usize,
    /// Largest admissible timestep index (the schedule's `T`).
    pub max_timestep: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn input_width(&self) -> usize {
        self.data_dim + self.time_dim + self.cond_dim + self.extra_inputs
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_width());
        w.extend_from_slice(&self.hidden);
        w.push(self.data_dim);
        w
    }

    fn validate(&self) -> Result<()> {
        if self.time_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "time embedding width must be even, got {}",
                self.time_dim
            )));
        }
        if self.data_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    /// `[num_classes + 1, cond_dim]`; the last row is the NULL condition.
    cond_table: Tensor,
    layers: Vec<Dense>,
}

/// Sinusoidal features at geometric frequencies `10000^(-i/half)`.
///
/// The first half holds sines, the second half cosines.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    debug_assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    let tf = t as f64;
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (tf * freq).sin_cos();
        out[i] = s;
        out[half + i] = c;
    }
    out
}

/// A batch of network inputs. All per-sample vectors are row-major.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub x: Vec<f64>,
    pub t: Vec<usize>,
    pub cond: Vec<Condition>,
    pub extra: Vec<f64>,
}

impl Batch {
    pub fn single(x: &[f64], t: usize, cond: Condition, extra: &[f64]) -> Self {
        Self {
            x: x.to_vec(),
            t: vec![t],
            cond: vec![cond],
            extra: extra.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, x: &[f64], t: usize, cond: Condition, extra: &[f64]) {
        self.x.extend_from_slice(x);
        self.t.push(t);
        self.cond.push(cond);
        self.extra.extend_from_slice(extra);
    }
}

/// Activations retained by [`MlpParams::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    /// `acts[0]` is the assembled input, `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activation values of every hidden layer.
    pre: Vec<Vec<f64>>,
    cond_rows: Vec<usize>,
}

/// Registered scalar training losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// `weight * mean((pred - target)^2)` over every element of the batch.
    L2 { weight: f64 },
}

impl Loss {
    pub fn value_and_grad(&self, pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        match *self {
            Loss::L2 { weight } => {
                let n = pred.len() as f64;
                let mut loss = 0.0;
                let grad = pred
                    .iter()
                    .zip(target)
                    .map(|(p, y)| {
                        let d = p - y;
                        loss += d * d;
                        2.0 * weight * d / n
                    })
                    .collect();
                (weight * loss / n, grad)
            }
        }
    }
}

impl MlpParams {
    /// Random initialization: weights `N(0, 1/fan_in)`, zero biases, unit
    /// normal condition table.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let cond_table = Tensor::new(
            vec![spec.num_classes + 1, spec.cond_dim],
            (0..(spec.num_classes + 1) * spec.cond_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let scale = (1.0 / n_in as f64).sqrt();
                let data = (0..n_in * n_out)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Ok(Dense {
                    weight: Tensor::new(vec![n_out, n_in], data)?,
                    bias: Tensor::zeros(vec![n_out]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            cond_table,
            layers,
        })
    }

    /// All-zero parameters with the layout of `spec`.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        Ok(Self {
            cond_table: Tensor::zeros(vec![spec.num_classes + 1, spec.cond_dim]),
            layers: widths
                .windows(2)
                .map(|w| Dense {
                    weight: Tensor::zeros(vec![w[1], w[0]]),
                    bias: Tensor::zeros(vec![w[1]]),
                })
                .collect(),
            spec,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.spec.clone()).expect("spec already validated")
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn cond_table(&self) -> &Tensor {
        &self.cond_table
    }

    /// Zero the output layer so the network predicts exactly zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
    }

    /// Parameter tensors in serialization order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(1 + 2 * self.layers.len());
        v.push(&self.cond_table);
        for l in &self.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(1 + 2 * self.layers.len());
        v.push(&mut self.cond_table);
        for l in &mut self.layers {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                context: "MlpParams::set_flat",
                expected: vec![self.num_params()],
                got: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &MlpParams) -> bool {
        self.spec == other.spec
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.squared_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Copy of these parameters with `extra` additional scalar inputs whose
    /// first-layer columns are zero, so the widened network computes the
    /// same function as the original when `extra` are ignored.
    pub fn with_extra_inputs(&self, extra: usize) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.extra_inputs += extra;
        let mut out = Self::zeros(spec)?;
        out.cond_table = self.cond_table.clone();
        for (dst, src) in out.layers.iter_mut().zip(&self.layers).skip(1) {
            *dst = src.clone();
        }
        let (old_in, new_in) = (self.spec.input_width(), out.spec.input_width());
        let first = &self.layers[0];
        let rows = first.weight.shape()[0];
        for r in 0..rows {
            out.layers[0].weight.data_mut()[r * new_in..r * new_in + old_in]
                .copy_from_slice(first.weight.row(r));
        }
        out.layers[0].bias = first.bias.clone();
        Ok(out)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = batch.len();
        let s = &self.spec;
        if batch.x.len() != n * s.data_dim
            || batch.cond.len() != n
            || batch.extra.len() != n * s.extra_inputs
        {
            return Err(Error::Shape {
                context: "MlpParams::forward_batch",
                expected: vec![n * s.data_dim, n, n * s.extra_inputs],
                got: vec![batch.x.len(), batch.cond.len(), batch.extra.len()],
            });
        }
        for &t in &batch.t {
            if t > s.max_timestep {
                return Err(Error::TimestepOutOfRange {
                    t,
                    max: s.max_timestep,
                });
            }
        }
        for c in batch.cond.iter().flatten() {
            if *c >= s.num_classes {
                return Err(Error::UnknownClass {
                    class: *c,
                    num_classes: s.num_classes,
                });
            }
        }
        Ok(())
    }

    /// Evaluate a batch, keeping the activations needed by
    /// [`MlpParams::backward_from_output`].
    pub fn forward_batch(&self, batch: &Batch) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_batch(batch)?;
        let s = &self.spec;
        let rows = batch.len();
        let width = s.input_width();
        let mut input = Vec::with_capacity(rows * width);
        let mut cond_rows = Vec::with_capacity(rows);
        for r in 0..rows {
            input.extend_from_slice(&batch.x[r * s.data_dim..(r + 1) * s.data_dim]);
            input.extend(time_embedding(batch.t[r], s.time_dim));
            let cr = batch.cond[r].unwrap_or(s.num_classes);
            cond_rows.push(cr);
            input.extend_from_slice(self.cond_table.row(cr));
            input.extend_from_slice(&batch.extra[r * s.extra_inputs..(r + 1) * s.extra_inputs]);
        }

        let mut acts = vec![input];
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            affine_rows(&acts[l], rows, &layer.weight, &layer.bias, &mut z);
            if l == last {
                return Ok((
                    z,
                    ForwardCache {
                        rows,
                        acts,
                        pre,
                        cond_rows,
                    },
                ));
            }
            let a = z.iter().map(|&v| s.activation.apply(v)).collect();
            pre.push(z);
            acts.push(a);
        }
        unreachable!("network has an output layer")
    }

    /// Single-sample evaluation.
    pub fn forward(&self, x: &[f64], t: usize, cond: Condition, extra: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.data_dim {
            return Err(Error::Shape {
                context: "MlpParams::forward",
                expected: vec![self.spec.data_dim],
                got: vec![x.len()],
            });
        }
        Ok(self.forward_batch(&Batch::single(x, t, cond, extra))?.0)
    }

    /// Backpropagate `d_out = dL/d(output)` (row-major, same layout as the
    /// forward output) into parameter gradients.
    pub fn backward_from_output(&self, cache: &ForwardCache, d_out: &[f64]) -> Result<MlpParams> {
        let rows = cache.rows;
        if d_out.len() != rows * self.spec.data_dim {
            return Err(Error::Shape {
                context: "MlpParams::backward_from_output",
                expected: vec![rows * self.spec.data_dim],
                got: vec![d_out.len()],
            });
        }
        let mut grads = self.zeros_like();
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let w = &self.layers[l].weight;
            let (n_out, n_in) = (w.shape()[0], w.shape()[1]);
            let a_in = &cache.acts[l];
            {
                let g = &mut grads.layers[l];
                let gw = g.weight.data_mut();
                for r in 0..rows {
                    let d = &delta[r * n_out..(r + 1) * n_out];
                    let x = &a_in[r * n_in..(r + 1) * n_in];
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for (gi, xi) in row.iter_mut().zip(x) {
                            *gi += dv * xi;
                        }
                    }
                }
                let gb = g.bias.data_mut();
                for r in 0..rows {
                    for (o, gbo) in gb.iter_mut().enumerate() {
                        *gbo += delta[r * n_out + o];
                    }
                }
            }
            // Gradient with respect to this layer's input.
            let wd = w.data();
            let mut d_in = vec![0.0; rows * n_in];
            for r in 0..rows {
                let d = &delta[r * n_out..(r + 1) * n_out];
                let di = &mut d_in[r * n_in..(r + 1) * n_in];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    for (dii, wi) in di.iter_mut().zip(&wd[o * n_in..(o + 1) * n_in]) {
                        *dii += dv * wi;
                    }
                }
            }
            if l == 0 {
                let s = &self.spec;
                let off = s.data_dim + s.time_dim;
                let gt = grads.cond_table.data_mut();
                for r in 0..rows {
                    let cr = cache.cond_rows[r];
                    for k in 0..s.cond_dim {
                        gt[cr * s.cond_dim + k] += d_in[r * n_in + off + k];
                    }
                }
            } else {
                let z = &cache.pre[l - 1];
                for (dv, &zv) in d_in.iter_mut().zip(z) {
                    *dv *= self.spec.activation.derivative(zv);
                }
                delta = d_in;
            }
        }
        Ok(grads)
    }

    /// Loss value and gradient for a batch regressed onto `targets`.
    pub fn backward(&self, batch: &Batch, targets: &[f64], loss: Loss) -> Result<(f64, MlpParams)> {
        let (pred, cache) = self.forward_batch(batch)?;
        if targets.len() != pred.len() {
            return Err(Error::Shape {
                context: "MlpParams::backward targets",
                expected: vec![pred.len()],
                got: vec![targets.len()],
            });
        }
        let (value, d_out) = loss.value_and_grad(&pred, targets);
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        Ok((value, self.backward_from_output(&cache, &d_out)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(64 + 8 * self.num_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = [
            s.data_dim,
            s.time_dim,
            s.cond_dim,
            s.num_classes,
            s.extra_inputs,
            s.max_timestep,
            s.activation.id() as usize,
            s.hidden.len(),
        ];
        for v in header.iter().chain(&s.hidden) {
            out.extend_from_slice(&(*v as u32).to_le_bytes());
        }
        for t in self.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut next_u32 = || -> Result<u32> {
            let mut b = [0u8; 4];
            cur.read_exact(&mut b)
                .map_err(|_| Error::Checkpoint("truncated header".into()))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = next_u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut h = [0usize; 8];
        for v in h.iter_mut() {
            *v = next_u32()? as usize;
        }
        let hidden = (0..h[7]).map(|_| next_u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let spec = MlpSpec {
            data_dim: h[0],
            time_dim: h[1],
            cond_dim: h[2],
            num_classes: h[3],
            extra_inputs: h[4],
            max_timestep: h[5],
            activation: Activation::from_id(h[6] as u32)?,
            hidden,
        };
        let mut params = Self::zeros(spec)?;
        let header_len = 8 + 4 + 4 * (8 + params.spec.hidden.len());
        let body = &bytes[header_len..];
        if body.len() != 8 * params.num_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                8 * params.num_params(),
                body.len()
            )));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        params.set_flat(&flat)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCASMLP\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam optimizer state, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self::with_constants(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(params: &MlpParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros_like(t)).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !params.same_layout(grads) {
            return Err(Error::Shape {
                context: "AdamState::step",
                expected: params.spec().widths(),
                got: grads.spec().widths(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone)]
pub struct EmaParams {
    shadow: MlpParams,
    rate: f64,
}

impl EmaParams {
    pub fn new(params: &MlpParams, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("EMA rate {rate} outside [0, 1]")));
        }
        Ok(Self {
            shadow: params.clone(),
            rate,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn shadow(&self) -> &MlpParams {
        &self.shadow
    }

    pub fn into_shadow(self) -> MlpParams {
        self.shadow
    }

    /// `shadow <- rate * shadow + (1 - rate) * params`.
    pub fn update(&mut self, params: &MlpParams) -> Result<()> {
        if !self.shadow.same_layout(params) {
            return Err(Error::Shape {
                context: "EmaParams::update",
                expected: self.shadow.spec().widths(),
                got: params.spec().widths(),
            });
        }
        let r = self.rate;
        for (s, p) in self.shadow.tensors_mut().into_iter().zip(params.tensors()) {
            for (si, &pi) in s.data_mut().iter_mut().zip(p.data()) {
                *si = r * *si + (1.0 - r) * pi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(extra: usize) -> MlpSpec {
        MlpSpec {
            data_dim: 2,
            time_dim: 4,
            cond_dim: 3,
            num_classes: 2,
            extra_inputs: extra,
            max_timestep: 100,
            hidden: vec![5, 4],
            activation: Activation::Silu,
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> Batch {
        let mut b = Batch::default();
        for i in 0..n {
            let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let e: Vec<f64> = (0..extra).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cond = if i % 3 == 2 { None } else { Some(i % 2) };
            b.push(&x, rng.gen_range(0..=100), cond, &e);
        }
        b
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        p.zero_output_layer();
        let y = p.forward(&[0.3, -2.0], 17, Some(1), &[]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let a = p.forward(&[0.1, 0.2], 3, None, &[]).unwrap();
        let b = p.forward(&[0.1, 0.2], 3, None, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        assert!(matches!(p.forward(&[0.1], 3, None, &[]), Err(Error::Shape { .. })));
        assert!(matches!(
            p.forward(&[0.1, 0.0], 101, None, &[]),
            Err(Error::TimestepOutOfRange { .. })
        ));
        assert!(matches!(
            p.forward(&[0.1, 0.0], 1, Some(2), &[]),
            Err(Error::UnknownClass { .. })
        ));
    }

    #[test]
    fn output_jvp_matches_central_difference() {
        // Input Jacobian column via central differences at two step sizes;
        // the discrepancy between them must shrink like h^2.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let x = [0.4, -0.7];
        let fd = |h: f64| {
            let yp = p.forward(&[x[0] + h, x[1]], 10, Some(0), &[]).unwrap();
            let ym = p.forward(&[x[0] - h, x[1]], 10, Some(0), &[]).unwrap();
            (yp[0] - ym[0]) / (2.0 * h)
        };
        let reference = fd(1e-5);
        let e1 = (fd(1e-2) - reference).abs();
        let e2 = (fd(5e-3) - reference).abs();
        assert!(e2 < e1 / 3.0, "expected quadratic decay: {e1} -> {e2}");
        // Forward-difference perturbation matches first-order prediction to O(h^2).
        let h = 1e-4;
        let y0 = p.forward(&x, 10, Some(0), &[]).unwrap();
        let y1 = p.forward(&[x[0] + h, x[1]], 10, Some(0), &[]).unwrap();
        assert!(((y1[0] - y0[0]) - h * reference).abs() < 1e-6);
    }

    #[test]
    fn minimum_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let batch = random_batch(&mut rng, 6, 0);
        let (pred, _) = p.forward_batch(&batch).unwrap();
        let (loss, g) = p.backward(&batch, &pred, Loss::L2 { weight: 1.0 }).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    fn flat_loss(p: &MlpParams, flat: &[f64], batch: &Batch, target: &[f64]) -> f64 {
        let mut q = p.clone();
        q.set_flat(flat).unwrap();
        let (pred, _) = q.forward_batch(batch).unwrap();
        Loss::L2 { weight: 1.0 }.value_and_grad(&pred, target).0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, act) in [(6, Activation::Silu), (7, Activation::Tanh)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut spec = small_spec(1);
            spec.activation = act;
            let p = MlpParams::init(spec, &mut rng).unwrap();
            let batch = random_batch(&mut rng, 5, 1);
            let target: Vec<f64> = (0..10).map(|_| rng.sample(StandardNormal)).collect();
            let (_, g) = p.backward(&batch, &target, Loss::L2 { weight: 1.0 }).unwrap();
            let flat = p.flatten();
            let analytic = g.flatten();
            let h = 1e-5;
            for i in 0..flat.len() {
                let mut fp = flat.clone();
                fp[i] += h;
                let mut fm = flat.clone();
                fm[i] -= h;
                let numeric =
                    (flat_loss(&p, &fp, &batch, &target) - flat_loss(&p, &fm, &batch, &target)) / (2.0 * h);
                let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
                let rel = (analytic[i] - numeric).abs() / denom;
                assert!(
                    rel < 1e-4 || (analytic[i] - numeric).abs() < 1e-10,
                    "param {i}: analytic {} numeric {numeric}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn loss_weight_scales_gradient_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let batch = random_batch(&mut rng, 4, 0);
        let target = vec![0.5; 8];
        let (_, g1) = p.backward(&batch, &target, Loss::L2 { weight: 1.0 }).unwrap();
        let (_, g2) = p.backward(&batch, &target, Loss::L2 { weight: 2.0 }).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        adam.step(&mut p, &before.zeros_like(), 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_constant_gradient_update_tends_to_lr() {
        // m_hat / sqrt(v_hat) == g / |g| exactly for constant g, so each
        // step moves by lr * |g| / (|g| + eps) -> lr.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let mut g = p.zeros_like();
        let flat: Vec<f64> = (0..g.num_params()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
        g.set_flat(&flat).unwrap();
        let mut adam = AdamState::new(&p);
        let lr = 1e-3;
        for _ in 0..200 {
            let prev = p.flatten();
            adam.step(&mut p, &g, lr).unwrap();
            for ((a, b), gi) in prev.iter().zip(p.flatten()).zip(&flat) {
                let delta = b - a;
                assert!((delta.abs() - lr).abs() < 1e-9, "delta {delta}");
                assert!(delta.signum() == -gi.signum());
            }
        }
    }

    #[test]
    fn adam_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let mut adam = AdamState::new(&p);
        let g = p.zeros_like();
        assert!(adam.step(&mut p, &g, 0.0).is_err());
        let mut bad = g.clone();
        let mut flat = bad.flatten();
        flat[0] = f64::INFINITY;
        // set_flat bypasses Tensor::new validation, as gradients may be produced raw
        bad.set_flat(&flat).unwrap();
        assert!(matches!(adam.step(&mut p, &bad, 1e-3), Err(Error::NonFinite(_))));
    }

    #[test]
    fn small_learning_rate_first_step_is_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let mut g = p.zeros_like();
        g.set_flat(&vec![1.0; p.num_params()]).unwrap();
        let before = p.flatten();
        AdamState::new(&p).step(&mut p, &g, 1e-5).unwrap();
        for (a, b) in before.iter().zip(p.flatten()) {
            assert!((a - b - 1e-5).abs() < 1e-12);
        }
    }

    #[test]
    fn ema_extremes_and_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let b = MlpParams::init(small_spec(0), &mut rng).unwrap();

        let mut keep = EmaParams::new(&a, 1.0).unwrap();
        keep.update(&b).unwrap();
        assert_eq!(keep.shadow(), &a);

        let mut copy = EmaParams::new(&a, 0.0).unwrap();
        copy.update(&b).unwrap();
        assert_eq!(copy.shadow(), &b);

        let mut ema = EmaParams::new(&a, 0.95).unwrap();
        let dist = |s: &MlpParams| -> f64 {
            s.flatten().iter().zip(b.flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let mut prev = dist(ema.shadow());
        for _ in 0..50 {
            ema.update(&b).unwrap();
            let d = dist(ema.shadow());
            assert!((d / prev - 0.95).abs() < 1e-6);
            prev = d;
        }
        assert!(EmaParams::new(&a, 1.5).is_err());
    }

    #[test]
    fn time_embedding_boundaries_and_norm() {
        let e = time_embedding(0, 16);
        assert!(e[..8].iter().all(|&v| v == 0.0));
        assert!(e[8..].iter().all(|&v| v == 1.0));
        for t in [1, 37, 500, 1000] {
            let n: f64 = time_embedding(t, 16).iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 8f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn time_embedding_is_injective_on_grid() {
        let embs: Vec<Vec<f64>> = (0..=1000).map(|t| time_embedding(t, 32)).collect();
        let mut min_d = f64::INFINITY;
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                let d: f64 = embs[i].iter().zip(&embs[j]).map(|(a, b)| (a - b).powi(2)).sum();
                min_d = min_d.min(d);
            }
        }
        assert!(min_d > 1e-6, "closest pair distance^2 {min_d}");
    }

    #[test]
    fn widening_preserves_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let wide = p.with_extra_inputs(1).unwrap();
        let a = p.forward(&[0.2, 0.9], 40, Some(1), &[]).unwrap();
        let b = wide.forward(&[0.2, 0.9], 40, Some(1), &[3.7]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(MlpParams::from_bytes(b"nope").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = MlpParams::init(small_spec(0), &mut rng).unwrap();
        let mut bytes = p.to_bytes();
        bytes.pop();
        assert!(MlpParams::from_bytes(&bytes).is_err());
        let mut bytes = p.to_bytes();
        bytes[8] = 9;
        assert!(MlpParams::from_bytes(&bytes).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn checkpoint_round_trip_is_bit_identical(seed in any::<u64>(), extra in 0usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = MlpParams::init(small_spec(extra), &mut rng).unwrap();
                let bytes = p.to_bytes();
                let q = MlpParams::from_bytes(&bytes).unwrap();
                prop_assert_eq!(q.to_bytes(), bytes);
                prop_assert_eq!(q, p);
            }
        }
    }
}
