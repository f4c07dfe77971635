//! Event-related spectral power (ERSP) feature extraction.
//!
//! Per (epoch, channel) signal: Hann-windowed STFT power, normalized in dB
//! against the mean power of baseline-window frames, restricted to the
//! configured band, then bilinearly resampled onto a fixed grid (default
//! 224×224). One image per (epoch, channel) becomes one dataset sample.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::eegio::{EpochSet, SampleMeta, SpectrogramSet};
use crate::{Error, Result};

/// Time–frequency analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErspConfig {
    /// STFT window length in seconds (Hann).
    pub window_len_s: f64,
    pub fft_len: usize,
    /// Hop in samples; `None` picks the largest hop giving at least
    /// `grid.1` frames over the epoch (minimum 1).
    pub hop_samples: Option<usize>,
    pub freq_low_hz: f64,
    pub freq_high_hz: f64,
    /// Baseline window relative to task onset, seconds.
    pub baseline_window_s: (f64, f64),
    /// Output grid (H, W).
    pub grid: (usize, usize),
    /// Z-score each image after grid resampling (model-input scaling).
    pub normalize: bool,
}

impl Default for ErspConfig {
    fn default() -> Self {
        ErspConfig {
            window_len_s: 1.0,
            fft_len: 512,
            hop_samples: None,
            freq_low_hz: 0.5,
            freq_high_hz: 50.0,
            baseline_window_s: (-1.0, 0.0),
            grid: (224, 224),
            normalize: true,
        }
    }
}

impl ErspConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        let win = (self.window_len_s * fs).round() as usize;
        if win == 0 {
            return Err(Error::Config { field: "window_len_s".into(), detail: "window is empty".into() });
        }
        if win > self.fft_len {
            return Err(Error::Config {
                field: "fft_len".into(),
                detail: format!("window ({win} samples) exceeds fft_len ({})", self.fft_len),
            });
        }
        if !(self.freq_low_hz < self.freq_high_hz && self.freq_high_hz <= fs / 2.0) {
            return Err(Error::Config {
                field: "freq_low_hz/freq_high_hz".into(),
                detail: format!("need low < high ≤ {}", fs / 2.0),
            });
        }
        if self.grid.0 < 2 || self.grid.1 < 2 {
            return Err(Error::Config { field: "grid".into(), detail: "grid dims must be ≥ 2".into() });
        }
        Ok(())
    }

    fn window_samples(&self, fs: f64) -> usize {
        (self.window_len_s * fs).round() as usize
    }

    fn resolve_hop(&self, signal_len: usize, fs: f64) -> usize {
        if let Some(h) = self.hop_samples {
            return h.max(1);
        }
        let win = self.window_samples(fs);
        let want_frames = self.grid.1;
        if signal_len <= win || want_frames < 2 {
            return 1;
        }
        ((signal_len - win) / (want_frames - 1)).max(1)
    }
}

/// Time–frequency power map in dB with its axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major `[n_freqs × n_frames]`.
    pub values: Vec<f64>,
    pub freq_axis_hz: Vec<f64>,
    pub time_axis_s: Vec<f64>,
}

impl Spectrogram {
    pub fn n_freqs(&self) -> usize {
        self.freq_axis_hz.len()
    }
    pub fn n_frames(&self) -> usize {
        self.time_axis_s.len()
    }
}

/// Complex STFT: Hann-windowed frames, one-sided spectrum, frame times at
/// window centers (relative to signal start).
pub struct Stft {
    /// Row-major `[n_freqs × n_frames]`.
    pub values: Vec<Complex64>,
    pub freq_axis_hz: Vec<f64>,
    pub time_axis_s: Vec<f64>,
}

/// Compute the STFT of `signal` at sample rate `fs`.
pub fn stft(signal: &[f64], fs: f64, cfg: &ErspConfig) -> Result<Stft> {
    cfg.validate(fs)?;
    let win = cfg.window_samples(fs);
    if signal.len() < win {
        return Err(Error::SignalTooShort { len: signal.len(), min: win });
    }
    let hop = cfg.resolve_hop(signal.len(), fs);
    let nfft = cfg.fft_len;
    let n_freqs = nfft / 2 + 1;

    // periodic Hann window
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
        .collect();

    let n_frames = (signal.len() - win) / hop + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);

    let mut values = vec![Complex64::new(0.0, 0.0); n_freqs * n_frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut time_axis_s = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        let start = frame * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex64::new(signal[start + i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for f in 0..n_freqs {
            values[f * n_frames + frame] = buf[f];
        }
        time_axis_s.push((start as f64 + (win as f64 - 1.0) / 2.0) / fs);
    }
    let freq_axis_hz = (0..n_freqs).map(|f| f as f64 * fs / nfft as f64).collect();
    Ok(Stft { values, freq_axis_hz, time_axis_s })
}

/// ERSP image of one epoch-channel signal.
///
/// `epoch_start_s` is the time of the first sample relative to task onset
/// (e.g. −2.0); frame centers inherit this offset so the baseline window of
/// `cfg` can be located. Output rows are restricted to
/// `[freq_low_hz, freq_high_hz]` and values are
/// `10·log10((P + ε) / (P̄_baseline + ε))` with `ε = 1e-12 × max(P)`.
pub fn ersp_image(
    epoch_channel: &[f64],
    fs: f64,
    epoch_start_s: f64,
    cfg: &ErspConfig,
) -> Result<Spectrogram> {
    let st = stft(epoch_channel, fs, cfg)?;
    let n_frames = st.time_axis_s.len();
    let n_freqs_full = st.freq_axis_hz.len();

    let time_axis_s: Vec<f64> = st.time_axis_s.iter().map(|t| t + epoch_start_s).collect();
    let (b0, b1) = cfg.baseline_window_s;
    let baseline_frames: Vec<usize> = time_axis_s
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= b0 && t <= b1)
        .map(|(i, _)| i)
        .collect();
    if baseline_frames.is_empty() {
        return Err(Error::invalid(
            "ersp baseline",
            format!("no STFT frame centers inside baseline window [{b0}, {b1}] s"),
        ));
    }

    let keep: Vec<usize> = (0..n_freqs_full)
        .filter(|&f| st.freq_axis_hz[f] >= cfg.freq_low_hz && st.freq_axis_hz[f] <= cfg.freq_high_hz)
        .collect();
    if keep.len() < 2 {
        return Err(Error::invalid("ersp band", "fewer than 2 frequency bins in band"));
    }

    // power per kept row, 64-bit
    let mut power = vec![0.0f64; keep.len() * n_frames];
    let mut max_p = 0.0f64;
    for (row, &f) in keep.iter().enumerate() {
        for t in 0..n_frames {
            let p = st.values[f * n_frames + t].norm_sqr();
            power[row * n_frames + t] = p;
            max_p = max_p.max(p);
        }
    }
    let eps = if max_p > 0.0 { 1e-12 * max_p } else { f64::MIN_POSITIVE };

    let mut values = vec![0.0f64; keep.len() * n_frames];
    for row in 0..keep.len() {
        let base = baseline_frames
            .iter()
            .map(|&t| power[row * n_frames + t])
            .sum::<f64>()
            / baseline_frames.len() as f64;
        for t in 0..n_frames {
            values[row * n_frames + t] =
                10.0 * ((power[row * n_frames + t] + eps) / (base + eps)).log10();
        }
    }
    Ok(Spectrogram {
        values,
        freq_axis_hz: keep.iter().map(|&f| st.freq_axis_hz[f]).collect(),
        time_axis_s,
    })
}

/// Bilinear resampling of a spectrogram onto a uniform `H×W` grid spanning
/// its axis ranges. Output values never leave `[min(input), max(input)]`.
pub fn resample_grid(spec: &Spectrogram, h: usize, w: usize) -> Result<Vec<f64>> {
    let (nf, nt) = (spec.n_freqs(), spec.n_frames());
    if nf < 2 || nt < 2 {
        return Err(Error::invalid(
            "grid resampling",
            format!("need ≥ 2 rows and columns, have {nf}×{nt}"),
        ));
    }
    let interp_pos = |axis: &[f64], x: f64| -> (usize, f64) {
        // axis is strictly increasing; clamp to its range
        let n = axis.len();
        if x <= axis[0] {
            return (0, 0.0);
        }
        if x >= axis[n - 1] {
            return (n - 2, 1.0);
        }
        let mut lo = axis.partition_point(|&v| v <= x);
        lo = lo.clamp(1, n - 1);
        let i = lo - 1;
        let frac = (x - axis[i]) / (axis[i + 1] - axis[i]);
        (i, frac)
    };

    let mut out = vec![0.0f64; h * w];
    for r in 0..h {
        let fy = spec.freq_axis_hz[0]
            + (spec.freq_axis_hz[nf - 1] - spec.freq_axis_hz[0]) * r as f64 / (h - 1) as f64;
        let (i, ty) = interp_pos(&spec.freq_axis_hz, fy);
        for c in 0..w {
            let fx = spec.time_axis_s[0]
                + (spec.time_axis_s[nt - 1] - spec.time_axis_s[0]) * c as f64 / (w - 1) as f64;
            let (j, tx) = interp_pos(&spec.time_axis_s, fx);
            let v00 = spec.values[i * nt + j];
            let v01 = spec.values[i * nt + j + 1];
            let v10 = spec.values[(i + 1) * nt + j];
            let v11 = spec.values[(i + 1) * nt + j + 1];
            out[r * w + c] =
                v00 * (1.0 - ty) * (1.0 - tx) + v01 * (1.0 - ty) * tx + v10 * ty * (1.0 - tx) + v11 * ty * tx;
        }
    }
    Ok(out)
}

fn zscore(image: &mut [f64]) {
    let n = image.len() as f64;
    let mean = image.iter().sum::<f64>() / n;
    let var = image.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-6);
    for v in image.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// Build the spectrogram dataset: one image per (epoch, channel), metadata
/// attached, epoch-major then channel order. Per-image z-score is applied
/// when `cfg.normalize` is set.
pub fn build_dataset(epochs: &EpochSet, cfg: &ErspConfig) -> Result<SpectrogramSet> {
    epochs.validate()?;
    let (h, w) = cfg.grid;
    let n_channels = epochs.n_channels();
    let mut images = Vec::with_capacity(epochs.n_epochs * n_channels * h * w);
    let mut meta = Vec::with_capacity(epochs.n_epochs * n_channels);
    for e in 0..epochs.n_epochs {
        for ch in 0..n_channels {
            let signal: Vec<f64> = epochs.epoch_channel(e, ch).iter().map(|&v| v as f64).collect();
            let spec = ersp_image(&signal, epochs.sample_rate_hz, epochs.t_start_s, cfg)?;
            let mut img = resample_grid(&spec, h, w)?;
            if cfg.normalize {
                zscore(&mut img);
            }
            images.extend(img.iter().map(|&v| v as f32));
            meta.push(SampleMeta {
                subject_id: epochs.subject_id.clone(),
                channel_name: epochs.channel_names[ch].clone(),
                epoch_index: e,
                label: epochs.labels[e],
            });
        }
    }
    let ds = SpectrogramSet {
        images,
        height: h,
        width: w,
        meta,
        freq_range_hz: (cfg.freq_low_hz, cfg.freq_high_hz),
        time_range_s: (epochs.t_start_s, epochs.t_end_s),
    };
    ds.validate()?;
    Ok(ds)
}

/// Merge per-subject datasets into one sample pool (grids must agree).
pub fn concat_datasets(sets: &[SpectrogramSet]) -> Result<SpectrogramSet> {
    let first = sets.first().ok_or_else(|| Error::invalid("dataset concat", "no datasets"))?;
    let mut out = SpectrogramSet {
        images: Vec::new(),
        height: first.height,
        width: first.width,
        meta: Vec::new(),
        freq_range_hz: first.freq_range_hz,
        time_range_s: first.time_range_s,
    };
    for s in sets {
        if (s.height, s.width) != (out.height, out.width) {
            return Err(Error::ShapeMismatch(format!(
                "grid {}×{} vs {}×{}",
                s.height, s.width, out.height, out.width
            )));
        }
        out.images.extend_from_slice(&s.images);
        out.meta.extend_from_slice(&s.meta);
    }
    Ok(out)
}
