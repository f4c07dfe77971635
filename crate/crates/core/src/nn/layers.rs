//! Feed-forward layer implementations with exact backward passes.
//!
//! Each layer caches whatever its backward pass needs during forward;
//! `backward` must therefore follow a `forward` on the same batch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Result};

/// Execution mode; affects BatchNorm statistics and Dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

// ---------------------------------------------------------------------------

/// 2D convolution (cross-correlation), stride 1, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pad: usize,
    /// `[F × C × k × k]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, pad: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            pad,
            weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
            grad_weight: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            grad_bias: Tensor::zeros(&[out_channels]),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = dims4(x)?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv2d input has {c} channels, kernel expects {}",
                self.in_channels
            )));
        }
        let k = self.kernel;
        let p = self.pad as i64;
        let f_out = self.out_channels;
        let (oh, ow) = (h + 2 * self.pad + 1 - k, w + 2 * self.pad + 1 - k);
        let mut out = Tensor::zeros(&[n, f_out, oh, ow]);

        for b in 0..n {
            for f in 0..f_out {
                let bias = self.bias.data[f];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias;
                        for ci in 0..c {
                            let w_base = ((f * c + ci) * k) * k;
                            let x_base = (b * c + ci) * h * w;
                            for ky in 0..k {
                                let iy = oy as i64 + ky as i64 - p;
                                if iy < 0 || iy >= h as i64 {
                                    continue;
                                }
                                let row = x_base + iy as usize * w;
                                for kx in 0..k {
                                    let ix = ox as i64 + kx as i64 - p;
                                    if ix < 0 || ix >= w as i64 {
                                        continue;
                                    }
                                    acc += self.weight.data[w_base + ky * k + kx]
                                        * x.data[row + ix as usize];
                                }
                            }
                        }
                        out.data[((b * f_out + f) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.as_ref().ok_or_else(no_cache)?;
        let [n, c, h, w] = dims4(x)?;
        let [gn, gf, oh, ow] = dims4(grad)?;
        if gn != n || gf != self.out_channels {
            return Err(Error::ShapeMismatch("conv2d upstream gradient shape".into()));
        }
        let k = self.kernel;
        let p = self.pad as i64;

        self.grad_weight.data.fill(0.0);
        self.grad_bias.data.fill(0.0);
        let mut gx = Tensor::zeros(&[n, c, h, w]);

        for b in 0..n {
            for f in 0..self.out_channels {
                let g_base = (b * self.out_channels + f) * oh * ow;
                let mut db = 0.0;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = grad.data[g_base + oy * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        db += g;
                        for ci in 0..c {
                            let w_base = ((f * c + ci) * k) * k;
                            let x_base = (b * c + ci) * h * w;
                            for ky in 0..k {
                                let iy = oy as i64 + ky as i64 - p;
                                if iy < 0 || iy >= h as i64 {
                                    continue;
                                }
                                let row = x_base + iy as usize * w;
                                for kx in 0..k {
                                    let ix = ox as i64 + kx as i64 - p;
                                    if ix < 0 || ix >= w as i64 {
                                        continue;
                                    }
                                    let xi = row + ix as usize;
                                    self.grad_weight.data[w_base + ky * k + kx] += g * x.data[xi];
                                    gx.data[xi] += g * self.weight.data[w_base + ky * k + kx];
                                }
                            }
                        }
                    }
                }
                self.grad_bias.data[f] += db;
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

/// Per-channel batch normalization over (N, H, W) with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub initialized: bool,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    dims: [usize; 4],
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.data.fill(1.0);
        BatchNorm2d {
            channels,
            eps: 1e-5,
            momentum: 0.9,
            gamma,
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::zeros(&[channels]),
            initialized: false,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = dims4(x)?;
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm over {c} channels, configured for {}",
                self.channels
            )));
        }
        let m = n * h * w;
        let mut out = Tensor::zeros(&[n, c, h, w]);
        match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::invalid("batchnorm", "need N·H·W ≥ 2 per channel in train mode"));
                }
                let mut xhat = Tensor::zeros(&[n, c, h, w]);
                let mut inv_std = vec![0.0; c];
                for ci in 0..c {
                    let mut sum = 0.0;
                    for b in 0..n {
                        let base = (b * c + ci) * h * w;
                        sum += x.data[base..base + h * w].iter().sum::<f64>();
                    }
                    let mean = sum / m as f64;
                    let mut var = 0.0;
                    for b in 0..n {
                        let base = (b * c + ci) * h * w;
                        for &v in &x.data[base..base + h * w] {
                            var += (v - mean) * (v - mean);
                        }
                    }
                    let var = var / m as f64;
                    let istd = 1.0 / (var + self.eps).sqrt();
                    inv_std[ci] = istd;
                    for b in 0..n {
                        let base = (b * c + ci) * h * w;
                        for i in base..base + h * w {
                            let xh = (x.data[i] - mean) * istd;
                            xhat.data[i] = xh;
                            out.data[i] = self.gamma.data[ci] * xh + self.beta.data[ci];
                        }
                    }
                    if self.initialized {
                        self.running_mean.data[ci] =
                            self.momentum * self.running_mean.data[ci] + (1.0 - self.momentum) * mean;
                        self.running_var.data[ci] =
                            self.momentum * self.running_var.data[ci] + (1.0 - self.momentum) * var;
                    } else {
                        self.running_mean.data[ci] = mean;
                        self.running_var.data[ci] = var;
                    }
                }
                self.initialized = true;
                self.cache = Some(BnCache { xhat, inv_std, dims: [n, c, h, w] });
            }
            Mode::Infer => {
                if !self.initialized {
                    return Err(Error::invalid(
                        "batchnorm",
                        "inference before any running statistics exist",
                    ));
                }
                for ci in 0..c {
                    let istd = 1.0 / (self.running_var.data[ci] + self.eps).sqrt();
                    let mean = self.running_mean.data[ci];
                    for b in 0..n {
                        let base = (b * c + ci) * h * w;
                        for i in base..base + h * w {
                            out.data[i] =
                                self.gamma.data[ci] * (x.data[i] - mean) * istd + self.beta.data[ci];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(no_cache)?;
        let [n, c, h, w] = cache.dims;
        let m = (n * h * w) as f64;
        let mut gx = Tensor::zeros(&[n, c, h, w]);
        for ci in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..n {
                let base = (b * c + ci) * h * w;
                for i in base..base + h * w {
                    sum_g += grad.data[i];
                    sum_gx += grad.data[i] * cache.xhat.data[i];
                }
            }
            self.grad_beta.data[ci] = sum_g;
            self.grad_gamma.data[ci] = sum_gx;
            let gamma = self.gamma.data[ci];
            let istd = cache.inv_std[ci];
            for b in 0..n {
                let base = (b * c + ci) * h * w;
                for i in base..base + h * w {
                    gx.data[i] = gamma * istd
                        * (grad.data[i] - sum_g / m - cache.xhat.data[i] * sum_gx / m);
                }
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mask: Vec<bool> = x.data.iter().map(|&v| v > 0.0).collect();
        let mut out = x.clone();
        for (v, &keep) in out.data.iter_mut().zip(&mask) {
            if !keep {
                *v = 0.0;
            }
        }
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or_else(no_cache)?;
        let mut gx = grad.clone();
        for (g, &keep) in gx.data.iter_mut().zip(mask) {
            if !keep {
                *g = 0.0;
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

/// 2×2 max pooling, stride 2; spatial dims must be even.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    argmax: Option<Vec<usize>>,
    in_dims: Option<[usize; 4]>,
}

impl MaxPool2d {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = dims4(x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("maxpool", format!("odd spatial dims {h}×{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        for b in 0..n {
            for ci in 0..c {
                let base = (b * c + ci) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = base + (2 * oy) * w + 2 * ox;
                        let mut best = x.data[best_idx];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                            if x.data[idx] > best {
                                best = x.data[idx];
                                best_idx = idx;
                            }
                        }
                        let o = ((b * c + ci) * oh + oy) * ow + ox;
                        out.data[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        self.argmax = Some(argmax);
        self.in_dims = Some([n, c, h, w]);
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let argmax = self.argmax.as_ref().ok_or_else(no_cache)?;
        let dims = self.in_dims.ok_or_else(no_cache)?;
        let mut gx = Tensor::zeros(&dims);
        for (o, &src) in argmax.iter().enumerate() {
            gx.data[src] += grad.data[o];
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    in_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = Some(x.shape.clone());
        let n = x.dim0();
        Tensor {
            shape: vec![n, x.len() / n.max(1)],
            data: x.data.clone(),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.in_shape.as_ref().ok_or_else(no_cache)?;
        Ok(Tensor { shape: shape.clone(), data: grad.data.clone() })
    }
}

// ---------------------------------------------------------------------------

/// Fully connected layer: `y = x·Wᵀ + b`, weight `[out × in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
            grad_weight: Tensor::zeros(&[out_dim, in_dim]),
            grad_bias: Tensor::zeros(&[out_dim]),
            cached_input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = dims2(x)?;
        if d != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "dense input dim {d}, weight expects {}",
                self.in_dim
            )));
        }
        let mut out = Tensor::zeros(&[n, self.out_dim]);
        for b in 0..n {
            let x_row = &x.data[b * d..(b + 1) * d];
            for o in 0..self.out_dim {
                let w_row = &self.weight.data[o * d..(o + 1) * d];
                let mut acc = self.bias.data[o];
                for (xv, wv) in x_row.iter().zip(w_row) {
                    acc += xv * wv;
                }
                out.data[b * self.out_dim + o] = acc;
            }
        }
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cached_input.as_ref().ok_or_else(no_cache)?;
        let (n, d) = dims2(x)?;
        self.grad_weight.data.fill(0.0);
        self.grad_bias.data.fill(0.0);
        let mut gx = Tensor::zeros(&[n, d]);
        for b in 0..n {
            let x_row = &x.data[b * d..(b + 1) * d];
            for o in 0..self.out_dim {
                let g = grad.data[b * self.out_dim + o];
                if g == 0.0 {
                    continue;
                }
                self.grad_bias.data[o] += g;
                let w_row = &self.weight.data[o * d..(o + 1) * d];
                let gw_row = &mut self.grad_weight.data[o * d..(o + 1) * d];
                let gx_row = &mut gx.data[b * d..(b + 1) * d];
                for i in 0..d {
                    gw_row[i] += g * x_row[i];
                    gx_row[i] += g * w_row[i];
                }
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

/// Row-wise softmax with max-subtraction stabilization.
///
/// Backward is the identity: the only loss paired with this layer is
/// cross-entropy, whose fused gradient `(p − y)/N` is already the gradient
/// with respect to the pre-softmax logits.
#[derive(Debug, Clone, Default)]
pub struct Softmax {
    forwarded: bool,
}

impl Softmax {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, k) = dims2(x)?;
        let mut out = x.clone();
        for b in 0..n {
            let row = &mut out.data[b * k..(b + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.forwarded = true;
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        if !self.forwarded {
            return Err(no_cache());
        }
        Ok(grad.clone())
    }
}

// ---------------------------------------------------------------------------

/// Inverted-scaling dropout; identity in infer mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate, rng, mask: None })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Infer || self.rate == 0.0 {
            self.mask = Some(vec![1.0; x.len()]);
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut out = x.clone();
        for (v, m) in out.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or_else(no_cache)?;
        let mut gx = grad.clone();
        for (g, m) in gx.data.iter_mut().zip(mask) {
            *g *= m;
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------

fn no_cache() -> Error {
    Error::invalid("backward", "no cached forward activations (call forward first)")
}

pub(crate) fn dims4(x: &Tensor) -> Result<[usize; 4]> {
    match x.shape.as_slice() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::ShapeMismatch(format!("expected 4-D tensor, got {other:?}"))),
    }
}

pub(crate) fn dims2(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape.as_slice() {
        [a, b] => Ok((*a, *b)),
        other => Err(Error::ShapeMismatch(format!("expected 2-D tensor, got {other:?}"))),
    }
}

pub(crate) fn dims3(x: &Tensor) -> Result<[usize; 3]> {
    match x.shape.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        other => Err(Error::ShapeMismatch(format!("expected 3-D tensor, got {other:?}"))),
    }
}
