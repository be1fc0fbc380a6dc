//! Feed-forward modality learners with hand-written reverse mode.
//!
//! An [`Mlp`] with dims `[d_in, h_1, …, h_L, Y]` applies `ReLU(x·W + b)` on
//! every hidden layer and a plain affine map on the last one. The last layer
//! is the learner's *head*; everything before it is the *encoder*, whose
//! output is what linear probes and the concatenation baseline consume.
//!
//! Weights are stored `fan_in × fan_out` so a batch (one sample per row)
//! multiplies on the left.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RandomStream};

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn apply(&self, input: &Matrix) -> Result<Matrix> {
        let mut out = input.matmul(&self.weights)?;
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }
}

#[derive(Debug)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Dense>,
    init_seed: Option<u64>,
    // Identity of this parameter state; changes on every mutation so caches
    // from an earlier state are rejected.
    state_id: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            layers: self.layers.clone(),
            init_seed: self.init_seed,
            state_id: fresh_id(),
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.layers == other.layers
    }
}

/// Activations retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    state_id: u64,
    // inputs[l] is the input of layer l (inputs[0] is the batch itself).
    inputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }

    /// Output of the encoder, i.e. the input of the head layer.
    pub fn features(&self) -> &Matrix {
        self.inputs.last().expect("cache has at least one layer input")
    }
}

/// One gradient buffer per parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Matrix::zeros(l.fan_in(), l.fan_out()),
                    bias: vec![0.0; l.fan_out()],
                })
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.scale(c);
            l.bias.iter_mut().for_each(|b| *b *= c);
        }
    }

    /// Norm of the head (last-layer) gradient only.
    pub fn head_norm(&self) -> f64 {
        let head = self.layers.last().expect("at least one layer");
        head.weights
            .as_slice()
            .iter()
            .chain(&head.bias)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Norm of the encoder gradient (all layers but the head).
    pub fn encoder_norm(&self) -> f64 {
        let n = self.layers.len();
        self.layers[..n - 1]
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn congruent(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.shape() == l.weights.shape() && g.bias.len() == l.bias.len())
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid(format!(
            "layer_dims needs at least input and output sizes, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::invalid(format!(
            "layer_dims must all be positive, got {dims:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// He-initialized network: weights `N(0, 2/fan_in)`, zero biases.
    pub fn init(dims: &[usize], stream: &mut RandomStream) -> Result<Self> {
        validate_dims(dims)?;
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let weights = Matrix::from_vec(fan_in, fan_out, stream.gaussian(fan_in * fan_out, 0.0, std)?)?;
            layers.push(Dense {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            init_seed: Some(stream.seed()),
            state_id: fresh_id(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an mlp needs at least one layer"));
        }
        let mut dims = vec![layers[0].fan_in()];
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in() != *dims.last().unwrap() || l.bias.len() != l.fan_out() {
                return Err(Error::invalid(format!("layer {i} is not congruent with its neighbours")));
            }
            dims.push(l.fan_out());
        }
        validate_dims(&dims)?;
        Ok(Self {
            dims,
            layers,
            init_seed: None,
            state_id: fresh_id(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Width of the encoder output (the head's fan-in).
    pub fn feature_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    pub fn init_seed(&self) -> Option<u64> {
        self.init_seed
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&params[off..off + w.len()]);
            off += w.len();
            let bl = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + bl]);
            off += bl;
        }
        self.state_id = fresh_id();
        Ok(())
    }

    /// SHA-256 over the bit patterns of every parameter, in layer order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.dims {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.flat_params() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for every row of `batch`, plus the activations needed by
    /// [`Mlp::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.apply(&current)?;
            if i < last {
                relu_in_place(&mut out);
            }
            inputs.push(current);
            current = out;
        }
        Ok((
            current,
            ForwardCache {
                state_id: self.state_id,
                inputs,
            },
        ))
    }

    /// Logits only.
    pub fn predict_logits(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let features = self.encode_unchecked(batch)?;
        self.head(&features)
    }

    /// Encoder output: the activations feeding the head layer.
    pub fn encode(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        self.encode_unchecked(batch)
    }

    fn encode_unchecked(&self, batch: &Matrix) -> Result<Matrix> {
        let mut current = batch.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            let mut out = layer.apply(&current)?;
            relu_in_place(&mut out);
            current = out;
        }
        Ok(current)
    }

    /// Applies the head (final affine layer) to encoder features.
    pub fn head(&self, features: &Matrix) -> Result<Matrix> {
        let head = self.layers.last().unwrap();
        if features.cols() != head.fan_in() {
            return Err(Error::invalid(format!(
                "features have {} columns, head expects {}",
                features.cols(),
                head.fan_in()
            )));
        }
        head.apply(features)
    }

    /// Pulls per-logit gradients back to every parameter, averaging over the
    /// batch: the result is the gradient of `(1/N)·Σᵢ ⟨dlogitsᵢ, φ(xᵢ)⟩`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Gradients> {
        if cache.state_id != self.state_id || cache.inputs.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "forward cache does not belong to this parameter state".into(),
            ));
        }
        let n = cache.batch_size();
        if dlogits.shape() != (n, self.output_dim()) {
            return Err(Error::InvalidState(format!(
                "dlogits shape {:?} does not match cached batch ({n}, {})",
                dlogits.shape(),
                self.output_dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.clone();
        delta.scale(1.0 / n as f64);
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            let weights = input.t_matmul(&delta)?;
            let mut bias = vec![0.0; delta.cols()];
            for r in delta.row_iter() {
                for (b, d) in bias.iter_mut().zip(r) {
                    *b += d;
                }
            }
            if l > 0 {
                let mut back = delta.matmul_t(&self.layers[l].weights)?;
                // input of layer l is ReLU output of layer l-1: positive iff active.
                for (g, a) in back.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = back;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// `θ ← θ − lr·g`, with `g` rescaled to `clip_norm` when its global norm
    /// exceeds it.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, clip_norm: Option<f64>) -> Result<()> {
        if !grads.congruent(self) {
            return Err(Error::invalid("gradient shapes do not match the network"));
        }
        if !(lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        let mut step = lr;
        if let Some(max) = clip_norm {
            if !(max > 0.0) {
                return Err(Error::invalid(format!("clip_norm must be > 0, got {max}")));
            }
            let norm = grads.norm();
            if norm > max {
                step = lr * (max / norm);
            }
        }
        if step == 0.0 {
            return Ok(());
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                *w -= step * d;
            }
            for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= step * d;
            }
        }
        self.state_id = fresh_id();
        Ok(())
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            let wn = l.weights.as_slice().len();
            if idx < wn {
                return &mut l.weights.as_mut_slice()[idx];
            }
            idx -= wn;
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Writes the parameter snapshot: one JSON header line
    /// `{"layer_dims": [...], "seed": s}` followed by the parameters as
    /// little-endian f64 in layer order (weights row-major, then bias).
    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let header = SnapshotHeader {
            layer_dims: self.dims.clone(),
            seed: self.init_seed,
        };
        let mut bytes = serde_json::to_vec(&header)?;
        bytes.push(b'\n');
        for v in self.flat_params() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(f);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let header: SnapshotHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("bad snapshot header: {e}"),
        })?;
        validate_dims(&header.layer_dims)?;
        let mut rest = Vec::new();
        reader.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        let count: usize = header.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if rest.len() != count * 8 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected {} parameter bytes, found {}", count * 8, rest.len()),
            });
        }
        let params: Vec<f64> = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut layers = Vec::new();
        for w in header.layer_dims.windows(2) {
            layers.push(Dense {
                weights: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            });
        }
        let mut net = Mlp::from_layers(layers)?;
        net.set_flat_params(&params)?;
        net.init_seed = header.seed;
        Ok(net)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    layer_dims: Vec<usize>,
    seed: Option<u64>,
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Central-difference gradient of `loss` with respect to every parameter of
/// `net`: `(f(θ+ε·e) − f(θ−ε·e)) / 2ε`.
pub fn fd_gradient<F>(mut loss: F, net: &Mlp, eps: f64) -> Result<Gradients>
where
    F: FnMut(&Mlp) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    let mut probe = net.clone();
    let mut flat = Vec::with_capacity(net.param_count());
    for i in 0..net.param_count() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + eps;
        probe.state_id = fresh_id();
        let plus = loss(&probe);
        *probe.param_mut(i) = orig - eps;
        probe.state_id = fresh_id();
        let minus = loss(&probe);
        *probe.param_mut(i) = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "loss is not finite around parameter {i} ({plus}, {minus})"
            )));
        }
        flat.push((plus - minus) / (2.0 * eps));
    }
    let mut grads = Gradients::zeros_like(net);
    let mut off = 0;
    for l in &mut grads.layers {
        let w = l.weights.as_mut_slice();
        w.copy_from_slice(&flat[off..off + w.len()]);
        off += w.len();
        let bl = l.bias.len();
        l.bias.copy_from_slice(&flat[off..off + bl]);
        off += bl;
    }
    Ok(grads)
}

/// Largest `|a − b| / max(1, |a|)` over paired entries.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}
