//! Minimal neural-network engine: tensors, the layers used by the shallow
//! CNN and LSTM classifiers, forward/backward passes, model builders and
//! checkpoint persistence.
//!
//! Everything is computed in f64; checkpoints store parameters as f32 in
//! the same envelope as the data containers.

mod layers;
mod lstm;
mod tensor;

pub use layers::{BatchNorm2d, Conv2d, Dense, Dropout, Flatten, MaxPool2d, Mode, Relu, Softmax};
pub use lstm::Lstm;
pub use tensor::Tensor;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds;
use crate::{Error, Result};

const MAGIC_CHECKPOINT: &[u8; 8] = b"EEGNETv1";

/// One network layer. Parameter and gradient tensors live inside the
/// kind-specific structs; gradients always mirror parameter shapes.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    Relu(Relu),
    MaxPool2d(MaxPool2d),
    Flatten(Flatten),
    Dense(Dense),
    Softmax(Softmax),
    Dropout(Dropout),
    Lstm(Lstm),
}

/// Architecture description used in checkpoints and config validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, pad: usize },
    BatchNorm2d { channels: usize, eps: f64, momentum: f64, initialized: bool },
    Relu,
    MaxPool2d,
    Flatten,
    Dense { in_dim: usize, out_dim: usize },
    Softmax,
    Dropout { rate: f64 },
    Lstm { input_dim: usize, hidden: usize, return_sequences: bool },
}

/// Ordered layer list plus execution mode.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub mode: Mode,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers, mode: Mode::Train }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Forward through all layers; caches activations for `backward`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mode = self.mode;
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = match layer {
                Layer::Conv2d(l) => l.forward(&cur)?,
                Layer::BatchNorm2d(l) => l.forward(&cur, mode)?,
                Layer::Relu(l) => l.forward(&cur),
                Layer::MaxPool2d(l) => l.forward(&cur)?,
                Layer::Flatten(l) => l.forward(&cur),
                Layer::Dense(l) => l.forward(&cur)?,
                Layer::Softmax(l) => l.forward(&cur)?,
                Layer::Dropout(l) => l.forward(&cur, mode),
                Layer::Lstm(l) => l.forward(&cur)?,
            };
        }
        Ok(cur)
    }

    /// Backward through all layers, overwriting parameter gradients.
    /// `output_grad` for a softmax head is the fused cross-entropy gradient
    /// `(p − y)/N` with respect to the pre-softmax logits.
    pub fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let mut cur = output_grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = match layer {
                Layer::Conv2d(l) => l.backward(&cur)?,
                Layer::BatchNorm2d(l) => l.backward(&cur)?,
                Layer::Relu(l) => l.backward(&cur)?,
                Layer::MaxPool2d(l) => l.backward(&cur)?,
                Layer::Flatten(l) => l.backward(&cur)?,
                Layer::Dense(l) => l.backward(&cur)?,
                Layer::Softmax(l) => l.backward(&cur)?,
                Layer::Dropout(l) => l.backward(&cur)?,
                Layer::Lstm(l) => l.backward(&cur)?,
            };
        }
        Ok(cur)
    }

    /// (parameter, gradient) slices in a fixed layer order; BatchNorm
    /// running statistics are excluded (not trained).
    pub fn params_and_grads(&mut self) -> Vec<(&mut Vec<f64>, &Vec<f64>)> {
        let mut out: Vec<(&mut Vec<f64>, &Vec<f64>)> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(Conv2d { weight, bias, grad_weight, grad_bias, .. }) => {
                    out.push((&mut weight.data, &grad_weight.data));
                    out.push((&mut bias.data, &grad_bias.data));
                }
                Layer::BatchNorm2d(BatchNorm2d { gamma, beta, grad_gamma, grad_beta, .. }) => {
                    out.push((&mut gamma.data, &grad_gamma.data));
                    out.push((&mut beta.data, &grad_beta.data));
                }
                Layer::Dense(Dense { weight, bias, grad_weight, grad_bias, .. }) => {
                    out.push((&mut weight.data, &grad_weight.data));
                    out.push((&mut bias.data, &grad_bias.data));
                }
                Layer::Lstm(Lstm { w_ih, w_hh, bias, grad_w_ih, grad_w_hh, grad_bias, .. }) => {
                    out.push((&mut w_ih.data, &grad_w_ih.data));
                    out.push((&mut w_hh.data, &grad_w_hh.data));
                    out.push((&mut bias.data, &grad_bias.data));
                }
                _ => {}
            }
        }
        out
    }

    /// Snapshot of all trainable parameters (same order as
    /// [`Network::params_and_grads`]).
    pub fn snapshot_params(&mut self) -> Vec<Vec<f64>> {
        self.params_and_grads().into_iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn restore_params(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        let pairs = self.params_and_grads();
        if pairs.len() != snapshot.len() {
            return Err(Error::ShapeMismatch("parameter snapshot length".into()));
        }
        for ((p, _), s) in pairs.into_iter().zip(snapshot) {
            if p.len() != s.len() {
                return Err(Error::ShapeMismatch("parameter tensor length".into()));
            }
            p.copy_from_slice(s);
        }
        Ok(())
    }

    /// Snapshot of parameters plus BatchNorm running statistics — the full
    /// numeric state needed to reproduce inference (checkpoint tensor order).
    pub fn snapshot_full(&self) -> Vec<Vec<f64>> {
        payload_tensors(self)
    }

    pub fn restore_full(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        let mut it = snapshot.iter();
        let mut next = |dst: &mut Vec<f64>| -> Result<()> {
            let src = it
                .next()
                .ok_or_else(|| Error::ShapeMismatch("state snapshot too short".into()))?;
            if src.len() != dst.len() {
                return Err(Error::ShapeMismatch("state tensor length".into()));
            }
            dst.copy_from_slice(src);
            Ok(())
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    next(&mut c.weight.data)?;
                    next(&mut c.bias.data)?;
                }
                Layer::BatchNorm2d(b) => {
                    next(&mut b.gamma.data)?;
                    next(&mut b.beta.data)?;
                    next(&mut b.running_mean.data)?;
                    next(&mut b.running_var.data)?;
                }
                Layer::Dense(d) => {
                    next(&mut d.weight.data)?;
                    next(&mut d.bias.data)?;
                }
                Layer::Lstm(l) => {
                    next(&mut l.w_ih.data)?;
                    next(&mut l.w_hh.data)?;
                    next(&mut l.bias.data)?;
                }
                _ => {}
            }
        }
        if it.next().is_some() {
            return Err(Error::ShapeMismatch("state snapshot too long".into()));
        }
        Ok(())
    }

    /// Reseed every dropout layer from the run seed (per-layer sub-streams).
    pub fn reseed_dropout(&mut self, base_seed: u64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Dropout(d) = layer {
                d.rng = seeds::rng_indexed(base_seed, seeds::tag::DROPOUT, i as u64);
            }
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => LayerSpec::Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    pad: c.pad,
                },
                Layer::BatchNorm2d(b) => LayerSpec::BatchNorm2d {
                    channels: b.channels,
                    eps: b.eps,
                    momentum: b.momentum,
                    initialized: b.initialized,
                },
                Layer::Relu(_) => LayerSpec::Relu,
                Layer::MaxPool2d(_) => LayerSpec::MaxPool2d,
                Layer::Flatten(_) => LayerSpec::Flatten,
                Layer::Dense(d) => LayerSpec::Dense { in_dim: d.in_dim, out_dim: d.out_dim },
                Layer::Softmax(_) => LayerSpec::Softmax,
                Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
                Layer::Lstm(l) => LayerSpec::Lstm {
                    input_dim: l.input_dim,
                    hidden: l.hidden,
                    return_sequences: l.return_sequences,
                },
            })
            .collect()
    }
}

/// Total trainable parameter count (BatchNorm running stats excluded).
pub fn count_parameters(net: &Network) -> usize {
    net.layers
        .iter()
        .map(|l| match l {
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            Layer::BatchNorm2d(b) => b.gamma.len() + b.beta.len(),
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::Lstm(l) => l.w_ih.len() + l.w_hh.len() + l.bias.len(),
            _ => 0,
        })
        .sum()
}

fn he_uniform(rng: &mut impl Rng, data: &mut [f64], fan_in: usize) {
    let limit = (6.0 / fan_in as f64).sqrt();
    for v in data.iter_mut() {
        *v = rng.gen_range(-limit..limit);
    }
}

fn glorot_uniform(rng: &mut impl Rng, data: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in data.iter_mut() {
        *v = rng.gen_range(-limit..limit);
    }
}

/// Shallow CNN: Conv(1→10, 3×3, pad 1) → BN → ReLU → MaxPool 2×2 →
/// Conv(10→10) → BN → ReLU → Flatten → Dense → Softmax.
///
/// Weights: He-uniform for Conv/Dense; BatchNorm γ=1, β=0. Deterministic
/// per `seed`.
pub fn build_shallow_cnn(
    input_h: usize,
    input_w: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Network> {
    if input_h % 2 != 0 || input_w % 2 != 0 {
        return Err(Error::invalid(
            "cnn builder",
            format!("input dims must be even, got {input_h}×{input_w}"),
        ));
    }
    let mut rng = seeds::rng(seed, seeds::tag::INIT);
    let mut conv1 = Conv2d::new(1, 10, 3, 1);
    he_uniform(&mut rng, &mut conv1.weight.data, 1 * 3 * 3);
    let mut conv2 = Conv2d::new(10, 10, 3, 1);
    he_uniform(&mut rng, &mut conv2.weight.data, 10 * 3 * 3);
    let dense_in = 10 * (input_h / 2) * (input_w / 2);
    let mut dense = Dense::new(dense_in, n_classes);
    he_uniform(&mut rng, &mut dense.weight.data, dense_in);

    Ok(Network::new(vec![
        Layer::Conv2d(conv1),
        Layer::BatchNorm2d(BatchNorm2d::new(10)),
        Layer::Relu(Relu::default()),
        Layer::MaxPool2d(MaxPool2d::default()),
        Layer::Conv2d(conv2),
        Layer::BatchNorm2d(BatchNorm2d::new(10)),
        Layer::Relu(Relu::default()),
        Layer::Flatten(Flatten::default()),
        Layer::Dense(dense),
        Layer::Softmax(Softmax::default()),
    ]))
}

/// LSTM classifier: LSTM(D→256, sequence) → Dropout 0.5 →
/// LSTM(256→128, last step) → Dropout 0.5 → Dense(128→classes) → Softmax.
///
/// Weights: Glorot-uniform for LSTM input/recurrent matrices, forget-gate
/// bias 1.0; He-uniform Dense. Deterministic per `seed`.
pub fn build_lstm_classifier(
    seq_len: usize,
    input_dim: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Network> {
    if seq_len == 0 || input_dim == 0 {
        return Err(Error::invalid("lstm builder", "T and D must be ≥ 1"));
    }
    let mut rng = seeds::rng(seed, seeds::tag::INIT);
    let mut lstm1 = Lstm::new(input_dim, 256, true);
    glorot_uniform(&mut rng, &mut lstm1.w_ih.data, input_dim, 256);
    glorot_uniform(&mut rng, &mut lstm1.w_hh.data, 256, 256);
    for v in &mut lstm1.bias.data[256..512] {
        *v = 1.0; // forget gate
    }
    let mut lstm2 = Lstm::new(256, 128, false);
    glorot_uniform(&mut rng, &mut lstm2.w_ih.data, 256, 128);
    glorot_uniform(&mut rng, &mut lstm2.w_hh.data, 128, 128);
    for v in &mut lstm2.bias.data[128..256] {
        *v = 1.0;
    }
    let mut dense = Dense::new(128, n_classes);
    he_uniform(&mut rng, &mut dense.weight.data, 128);

    let d1 = Dropout::new(0.5, seeds::rng_indexed(seed, seeds::tag::DROPOUT, 1))?;
    let d2 = Dropout::new(0.5, seeds::rng_indexed(seed, seeds::tag::DROPOUT, 3))?;
    Ok(Network::new(vec![
        Layer::Lstm(lstm1),
        Layer::Dropout(d1),
        Layer::Lstm(lstm2),
        Layer::Dropout(d2),
        Layer::Dense(dense),
        Layer::Softmax(Softmax::default()),
    ]))
}

// ---------------------------------------------------------------------------
// checkpoints

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    schema: u32,
    layers: Vec<LayerSpec>,
    /// payload tensor lengths in order, for validation
    tensor_lens: Vec<usize>,
}

fn payload_tensors(net: &Network) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for layer in &net.layers {
        match layer {
            Layer::Conv2d(c) => {
                out.push(c.weight.data.clone());
                out.push(c.bias.data.clone());
            }
            Layer::BatchNorm2d(b) => {
                out.push(b.gamma.data.clone());
                out.push(b.beta.data.clone());
                out.push(b.running_mean.data.clone());
                out.push(b.running_var.data.clone());
            }
            Layer::Dense(d) => {
                out.push(d.weight.data.clone());
                out.push(d.bias.data.clone());
            }
            Layer::Lstm(l) => {
                out.push(l.w_ih.data.clone());
                out.push(l.w_hh.data.clone());
                out.push(l.bias.data.clone());
            }
            _ => {}
        }
    }
    out
}

/// Save architecture + parameters (float32 payload).
pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let tensors = payload_tensors(net);
    let header = CheckpointHeader {
        schema: 1,
        layers: net.layer_specs(),
        tensor_lens: tensors.iter().map(Vec::len).collect(),
    };
    let hbytes = serde_json::to_vec(&header).expect("header serializes");
    let file = File::create(path).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    let mut step = || -> std::io::Result<()> {
        w.write_all(MAGIC_CHECKPOINT)?;
        w.write_all(&(hbytes.len() as u32).to_le_bytes())?;
        w.write_all(&hbytes)?;
        for t in &tensors {
            for &v in t {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    step().map_err(|e| Error::io(&p, e))
}

/// Rebuild a network from a checkpoint. Dropout streams are left unseeded;
/// call [`Network::reseed_dropout`] before training.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::format(&p, "file shorter than magic"))?;
    if &magic != MAGIC_CHECKPOINT {
        return Err(Error::format(&p, "bad checkpoint magic"));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes).map_err(|_| Error::format(&p, "truncated header length"))?;
    let hlen = u32::from_le_bytes(len_bytes) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes).map_err(|_| Error::format(&p, "truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&hbytes).map_err(|e| Error::format(&p, format!("header JSON: {e}")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(&p, e))?;
    let floats: Vec<f64> = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let total: usize = header.tensor_lens.iter().sum();
    if floats.len() != total {
        return Err(Error::format(
            &p,
            format!("payload has {} floats, header implies {total}", floats.len()),
        ));
    }

    let mut layers = Vec::with_capacity(header.layers.len());
    let mut offset = 0usize;
    let mut take = |len: usize| -> Vec<f64> {
        let v = floats[offset..offset + len].to_vec();
        offset += len;
        v
    };
    for (i, spec) in header.layers.iter().enumerate() {
        let layer = match *spec {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, pad } => {
                let mut c = Conv2d::new(in_channels, out_channels, kernel, pad);
                c.weight.data = take(c.weight.len());
                c.bias.data = take(c.bias.len());
                Layer::Conv2d(c)
            }
            LayerSpec::BatchNorm2d { channels, eps, momentum, initialized } => {
                let mut b = BatchNorm2d::new(channels);
                b.eps = eps;
                b.momentum = momentum;
                b.initialized = initialized;
                b.gamma.data = take(channels);
                b.beta.data = take(channels);
                b.running_mean.data = take(channels);
                b.running_var.data = take(channels);
                Layer::BatchNorm2d(b)
            }
            LayerSpec::Relu => Layer::Relu(Relu::default()),
            LayerSpec::MaxPool2d => Layer::MaxPool2d(MaxPool2d::default()),
            LayerSpec::Flatten => Layer::Flatten(Flatten::default()),
            LayerSpec::Dense { in_dim, out_dim } => {
                let mut d = Dense::new(in_dim, out_dim);
                d.weight.data = take(d.weight.len());
                d.bias.data = take(d.bias.len());
                Layer::Dense(d)
            }
            LayerSpec::Softmax => Layer::Softmax(Softmax::default()),
            LayerSpec::Dropout { rate } => {
                Layer::Dropout(Dropout::new(rate, seeds::rng_indexed(0, seeds::tag::DROPOUT, i as u64))?)
            }
            LayerSpec::Lstm { input_dim, hidden, return_sequences } => {
                let mut l = Lstm::new(input_dim, hidden, return_sequences);
                l.w_ih.data = take(l.w_ih.len());
                l.w_hh.data = take(l.w_hh.len());
                l.bias.data = take(l.bias.len());
                Layer::Lstm(l)
            }
        };
        layers.push(layer);
    }
    Ok(Network::new(layers))
}
