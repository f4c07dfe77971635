//! Loss, SGDM optimizer, stratified dataset splitting, and the training
//! loop with early stopping.
//!
//! All randomness (stratum shuffles, per-epoch batch shuffles, dropout)
//! derives from `TrainConfig::seed` through the stream tags in
//! [`crate::seeds`], so a (seed, config, dataset) triple reproduces
//! bit-identical histories and parameters.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::eegio::SpectrogramSet;
use crate::nn::{self, LayerSpec, Mode, Network, Tensor};
use crate::seeds;
use crate::{Error, Result};

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub val_frequency_iters: usize,
    pub val_patience: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 50,
            val_frequency_iters: 8,
            val_patience: 20,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config {
                field: "learning_rate".into(),
                detail: format!("must be > 0, got {}", self.learning_rate),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Config { field: "batch_size".into(), detail: "must be ≥ 1".into() });
        }
        if self.val_frequency_iters == 0 {
            return Err(Error::Config {
                field: "val_frequency_iters".into(),
                detail: "must be ≥ 1".into(),
            });
        }
        Ok(())
    }
}

/// Index triple into a [`SpectrogramSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PatienceExhausted,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub iteration: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Loss trace plus validation checkpoints and the stopping verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// training-batch loss, one entry per iteration (1-based iteration i is
    /// `train_loss[i-1]`)
    pub train_loss: Vec<f64>,
    pub validations: Vec<ValRecord>,
    pub stop_reason: StopReason,
    pub best_iteration: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    /// One row per iteration; `val_loss`/`val_acc` filled only on
    /// validation iterations.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref().display().to_string();
        let mut by_iter: BTreeMap<usize, &ValRecord> =
            self.validations.iter().map(|v| (v.iteration, v)).collect();
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&p, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut step = || -> std::io::Result<()> {
            writeln!(w, "iteration,train_loss,val_loss,val_acc")?;
            for (i, loss) in self.train_loss.iter().enumerate() {
                let iter = i + 1;
                match by_iter.remove(&iter) {
                    Some(v) => writeln!(
                        w,
                        "{iter},{loss:.9},{:.9},{:.6}",
                        v.val_loss, v.val_accuracy
                    )?,
                    None => writeln!(w, "{iter},{loss:.9},,")?,
                }
            }
            w.flush()
        };
        step().map_err(|e| Error::io(&p, e))
    }
}

/// Mean negative log-likelihood of softmax `probabilities` `[N × K]` with a
/// probability floor of 1e-12, and the fused softmax+cross-entropy gradient
/// `(p − y)/N` with respect to the pre-softmax logits (the softmax layer's
/// backward is a pass-through, so this feeds `Network::backward` directly).
pub fn cross_entropy(probabilities: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if probabilities.shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "cross-entropy expects [N × K], got {:?}",
            probabilities.shape
        )));
    }
    let (n, k) = (probabilities.shape[0], probabilities.shape[1]);
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[n, k]);
    for (b, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::invalid("cross-entropy", format!("label {label} out of [0, {k})")));
        }
        let p = probabilities.data[b * k + label].max(1e-12);
        loss -= p.ln();
        for j in 0..k {
            let y = if j == label { 1.0 } else { 0.0 };
            grad.data[b * k + j] = (probabilities.data[b * k + j] - y) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// One SGDM update: `v ← momentum·v + grad; param ← param − lr·v`.
pub fn sgdm_step(
    params_and_grads: Vec<(&mut Vec<f64>, &Vec<f64>)>,
    velocities: &mut [Vec<f64>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params_and_grads.len() != velocities.len() {
        return Err(Error::ShapeMismatch("velocity tensor count".into()));
    }
    for ((param, grad), vel) in params_and_grads.into_iter().zip(velocities.iter_mut()) {
        if param.len() != grad.len() || param.len() != vel.len() {
            return Err(Error::ShapeMismatch("optimizer tensor lengths".into()));
        }
        for i in 0..param.len() {
            vel[i] = momentum * vel[i] + grad[i];
            param[i] -= lr * vel[i];
        }
    }
    Ok(())
}

/// Zeroed velocity buffers matching a network's trainable parameters.
pub fn init_velocities(net: &mut Network) -> Vec<Vec<f64>> {
    net.params_and_grads().iter().map(|(p, _)| vec![0.0; p.len()]).collect()
}

/// Stratified 70/15/15-style split: indices are grouped by
/// (subject_id, label), shuffled per stratum with a seeded PRNG, and cut
/// with largest-remainder rounding so each stratum lands within ±1 sample
/// of the requested proportions.
pub fn split_dataset(ds: &SpectrogramSet, ratios: (f64, f64, f64), seed: u64) -> Result<SplitSet> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config {
            field: "split ratios".into(),
            detail: format!("must be positive and sum to 1, got ({rt}, {rv}, {rs})"),
        });
    }
    let mut strata: BTreeMap<(String, u8), Vec<usize>> = BTreeMap::new();
    for (i, m) in ds.meta.iter().enumerate() {
        strata.entry((m.subject_id.clone(), m.label.class_index() as u8)).or_default().push(i);
    }
    let mut rng = seeds::rng(seed, seeds::tag::SPLIT);
    let mut split = SplitSet { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for ((subject, label), mut indices) in strata {
        let n = indices.len();
        if n < 3 {
            return Err(Error::StratumTooSmall {
                subject,
                label: if label == 1 { "MA".into() } else { "BL".into() },
                n,
            });
        }
        indices.shuffle(&mut rng);

        // largest-remainder apportionment of n over the three parts
        let exact = [rt * n as f64, rv * n as f64, rs * n as f64];
        let mut counts = [exact[0] as usize, exact[1] as usize, exact[2] as usize];
        let mut leftover = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &part in &order {
            if leftover == 0 {
                break;
            }
            counts[part] += 1;
            leftover -= 1;
        }

        split.train.extend_from_slice(&indices[..counts[0]]);
        split.val.extend_from_slice(&indices[counts[0]..counts[0] + counts[1]]);
        split.test.extend_from_slice(&indices[counts[0] + counts[1]..]);
    }
    Ok(split)
}

/// How the first layer wants its input batched.
enum InputKind {
    /// `[N × 1 × H × W]`
    Image,
    /// `[N × T × D]` with T = height, D = width
    Sequence,
    /// `[N × H·W]`
    Flat,
}

fn input_kind(net: &Network) -> InputKind {
    match net.layer_specs().first() {
        Some(LayerSpec::Conv2d { .. }) => InputKind::Image,
        Some(LayerSpec::Lstm { .. }) => InputKind::Sequence,
        _ => InputKind::Flat,
    }
}

fn batch_tensor(ds: &SpectrogramSet, indices: &[usize], kind: &InputKind) -> Tensor {
    let (h, w) = (ds.height, ds.width);
    let mut data = Vec::with_capacity(indices.len() * h * w);
    for &i in indices {
        data.extend(ds.image(i).iter().map(|&v| v as f64));
    }
    let shape: Vec<usize> = match kind {
        InputKind::Image => vec![indices.len(), 1, h, w],
        InputKind::Sequence => vec![indices.len(), h, w],
        InputKind::Flat => vec![indices.len(), h * w],
    };
    Tensor { shape, data }
}

fn batch_labels(ds: &SpectrogramSet, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| ds.meta[i].label.class_index()).collect()
}

/// Inference result over a fixed index set.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub loss: f64,
    pub accuracy: f64,
    /// predicted class index per sample, aligned with the input indices
    pub predictions: Vec<usize>,
}

/// Run the network in infer mode over `indices` and compute mean
/// cross-entropy, accuracy, and argmax predictions.
pub fn evaluate_set(
    net: &mut Network,
    ds: &SpectrogramSet,
    indices: &[usize],
    batch_size: usize,
) -> Result<EvalOutput> {
    if indices.is_empty() {
        return Err(Error::invalid("evaluate", "empty index set"));
    }
    let kind = input_kind(net);
    let prev_mode = net.mode;
    net.set_mode(Mode::Infer);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size) {
        let x = batch_tensor(ds, chunk, &kind);
        let labels = batch_labels(ds, chunk);
        let probs = net.forward(&x)?;
        let (loss, _) = cross_entropy(&probs, &labels)?;
        loss_sum += loss * chunk.len() as f64;
        let k = probs.shape[1];
        for (b, &label) in labels.iter().enumerate() {
            let row = &probs.data[b * k..(b + 1) * k];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            predictions.push(pred);
            if pred == label {
                correct += 1;
            }
        }
    }
    net.set_mode(prev_mode);
    Ok(EvalOutput {
        loss: loss_sum / indices.len() as f64,
        accuracy: correct as f64 / indices.len() as f64,
        predictions,
    })
}

/// Mini-batch SGDM training with early stopping.
///
/// Every `val_frequency_iters` iterations the full validation split is
/// scored in infer mode; training stops once `val_patience` consecutive
/// checks fail to strictly improve the best validation loss, or at
/// `max_epochs`. The network is left holding the parameters of the best
/// validation point.
pub fn train_model(
    net: &mut Network,
    ds: &SpectrogramSet,
    split: &SplitSet,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("training", "empty training split"));
    }
    if split.val.is_empty() {
        return Err(Error::invalid("training", "empty validation split"));
    }

    let kind = input_kind(net);
    net.set_mode(Mode::Train);
    net.reseed_dropout(cfg.seed);
    let mut velocities = init_velocities(net);
    let mut shuffle_rng = seeds::rng(cfg.seed, seeds::tag::SHUFFLE);

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        validations: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_iteration: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut best_params: Option<Vec<Vec<f64>>> = None;
    let mut bad_checks = 0usize;
    let mut iteration = 0usize;
    let mut train_indices = split.train.clone();

    'epochs: for _epoch in 0..cfg.max_epochs {
        if cfg.shuffle {
            train_indices.shuffle(&mut shuffle_rng);
        }
        for chunk in train_indices.chunks(cfg.batch_size) {
            iteration += 1;
            let x = batch_tensor(ds, chunk, &kind);
            let labels = batch_labels(ds, chunk);
            let probs = net.forward(&x)?;
            let (loss, grad) = cross_entropy(&probs, &labels)?;
            net.backward(&grad)?;
            sgdm_step(net.params_and_grads(), &mut velocities, cfg.learning_rate, cfg.momentum)?;
            history.train_loss.push(loss);

            if iteration % cfg.val_frequency_iters == 0 {
                let val = evaluate_set(net, ds, &split.val, cfg.batch_size)?;
                net.set_mode(Mode::Train);
                history.validations.push(ValRecord {
                    iteration,
                    val_loss: val.loss,
                    val_accuracy: val.accuracy,
                });
                if val.loss < history.best_val_loss {
                    history.best_val_loss = val.loss;
                    history.best_iteration = iteration;
                    best_params = Some(net.snapshot_full());
                    bad_checks = 0;
                } else {
                    bad_checks += 1;
                    if bad_checks >= cfg.val_patience {
                        history.stop_reason = StopReason::PatienceExhausted;
                        break 'epochs;
                    }
                }
            }
        }
    }

    if let Some(params) = &best_params {
        net.restore_full(params)?;
    }
    net.set_mode(Mode::Infer);
    Ok(history)
}

/// Convenience: model builders used by the CLI and evaluation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    Lstm,
}

/// Instantiate a fresh model for a dataset's grid size.
pub fn build_model(kind: ModelKind, ds: &SpectrogramSet, seed: u64) -> Result<Network> {
    match kind {
        ModelKind::Cnn => nn::build_shallow_cnn(ds.height, ds.width, 2, seed),
        ModelKind::Lstm => nn::build_lstm_classifier(ds.height, ds.width, 2, seed),
    }
}

/// True when a checkpointed network's first trainable layer matches the
/// dataset grid (used to reject mismatched checkpoints early).
pub fn compatible_with(net: &Network, ds: &SpectrogramSet) -> bool {
    match net.layer_specs().first() {
        Some(LayerSpec::Conv2d { in_channels, .. }) => *in_channels == 1,
        Some(LayerSpec::Lstm { input_dim, .. }) => *input_dim == ds.width,
        _ => false,
    }
}
