//! Preprocessing chain: IIR Butterworth filtering (zero-phase), decimation,
//! epoch segmentation and baseline removal.
//!
//! Filters are designed in the analog domain (Butterworth prototype, band
//! transform, bilinear transform with frequency prewarping) and stored as a
//! cascade of second-order sections for numerical stability.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::eegio::{EpochSet, Recording};
use crate::{Error, Result};

/// One second-order section: `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Poles of this section (roots of `z² + a1 z + a2`).
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [
            (Complex64::new(-self.a1, 0.0) + disc) * 0.5,
            (Complex64::new(-self.a1, 0.0) - disc) * 0.5,
        ]
    }

    fn response_at(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b0 + z_inv * (self.b1 + z_inv * self.b2);
        let den = Complex64::new(1.0, 0.0) + z_inv * (self.a1 + z_inv * self.a2);
        num / den
    }
}

/// Design metadata carried with a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignMeta {
    /// Analog prototype order.
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs_hz: f64,
}

/// Cascade of second-order sections plus its design metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub design_meta: DesignMeta,
}

impl BiquadCascade {
    /// Complex frequency response at `f_hz` (single forward pass).
    pub fn response_at(&self, f_hz: f64) -> Complex64 {
        let theta = 2.0 * PI * f_hz / self.design_meta.fs_hz;
        let z_inv = Complex64::from_polar(1.0, -theta);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response_at(z_inv))
    }

    /// Magnitude response at `f_hz`.
    pub fn magnitude_at(&self, f_hz: f64) -> f64 {
        self.response_at(f_hz).norm()
    }

    /// All cascade poles.
    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    /// True when every pole lies strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Single forward pass over `signal`, zero initial state (DF2-transposed).
    pub fn filter_forward(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        for s in &self.sections {
            let (mut s1, mut s2) = (0.0f64, 0.0f64);
            for v in out.iter_mut() {
                let x = *v;
                let y = s.b0 * x + s1;
                s1 = s.b1 * x - s.a1 * y + s2;
                s2 = s.b2 * x - s.a2 * y;
                *v = y;
            }
        }
        out
    }

    /// Forward pass with per-section DC steady-state initial conditions
    /// (state seeded from the first sample, as in standard filtfilt).
    /// Suppresses the step transient a zero initial state would inject.
    fn filter_forward_settled(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        for s in &self.sections {
            let x0 = out.first().copied().unwrap_or(0.0);
            let g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
            let mut s1 = (g - s.b0) * x0;
            let mut s2 = (s.b2 - s.a2 * g) * x0;
            for v in out.iter_mut() {
                let x = *v;
                let y = s.b0 * x + s1;
                s1 = s.b1 * x - s.a1 * y + s2;
                s2 = s.b2 * x - s.a2 * y;
                *v = y;
            }
        }
        out
    }

    fn n_poles(&self) -> usize {
        self.sections.len() * 2
    }
}

fn check_band(low_hz: f64, high_hz: f64, fs_hz: f64) -> Result<()> {
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs_hz / 2.0) {
        return Err(Error::invalid(
            "filter design",
            format!("need 0 < low ({low_hz}) < high ({high_hz}) < Nyquist ({})", fs_hz / 2.0),
        ));
    }
    Ok(())
}

/// Analog Butterworth prototype poles (unit cutoff), left half-plane.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (1..=order)
        .map(|k| {
            let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear_pole(q: Complex64, fs2: f64) -> Complex64 {
    (fs2 + q) / (fs2 - q)
}

/// Denominator coefficients (a1, a2) of a section holding pole pair (z1, z2).
fn section_denominator(z1: Complex64, z2: Complex64) -> (f64, f64) {
    (-(z1 + z2).re, (z1 * z2).re)
}

/// Design a digital band-pass filter: analog Butterworth prototype of order
/// `order` (2·order digital poles), low-pass→band-pass transform, bilinear
/// transform with both edges prewarped. −3 dB points land at `low_hz` and
/// `high_hz`; gain is unity at the band's geometric centre.
pub fn design_butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs_hz: f64,
) -> Result<BiquadCascade> {
    if order == 0 {
        return Err(Error::invalid("filter design", "order must be ≥ 1"));
    }
    check_band(low_hz, high_hz, fs_hz)?;

    let fs2 = 2.0 * fs_hz;
    let wl = fs2 * (PI * low_hz / fs_hz).tan();
    let wh = fs2 * (PI * high_hz / fs_hz).tan();
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;

    // band-pass poles: s² − p·bw·s + w0² = 0 for each prototype pole p
    let bp_pair = |p: Complex64| -> (Complex64, Complex64) {
        let half = p * bw * 0.5;
        let disc = (half * half - Complex64::new(w0 * w0, 0.0)).sqrt();
        (half + disc, half - disc)
    };

    let mut sections = Vec::with_capacity(order);
    for p in prototype_poles(order) {
        if p.im < -1e-12 {
            continue; // conjugate handled with its upper-half partner
        }
        let (q1, q2) = bp_pair(p);
        if p.im > 1e-12 {
            // complex prototype pole: each band-pass pole pairs with the
            // conjugate arising from conj(p)
            for q in [q1, q2] {
                let (a1, a2) = section_denominator(bilinear_pole(q, fs2), bilinear_pole(q.conj(), fs2));
                sections.push(Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 });
            }
        } else {
            // real prototype pole: its two band-pass poles form one section
            let (a1, a2) = section_denominator(bilinear_pole(q1, fs2), bilinear_pole(q2, fs2));
            sections.push(Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 });
        }
    }

    let mut cascade = BiquadCascade {
        sections,
        design_meta: DesignMeta { order, low_hz, high_hz, fs_hz },
    };
    // unit gain at the geometric centre frequency (analog w0 mapped back)
    let f0_dig = fs_hz / PI * (w0 / fs2).atan();
    let g = cascade.magnitude_at(f0_dig);
    let s0 = &mut cascade.sections[0];
    s0.b0 /= g;
    s0.b1 /= g;
    s0.b2 /= g;
    Ok(cascade)
}

/// Design a digital low-pass Butterworth filter of order `order` with −3 dB
/// point at `cutoff_hz` (used as the decimator's anti-alias stage).
pub fn design_butterworth_lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<BiquadCascade> {
    if order == 0 {
        return Err(Error::invalid("filter design", "order must be ≥ 1"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(Error::invalid(
            "filter design",
            format!("cutoff {cutoff_hz} outside (0, {})", fs_hz / 2.0),
        ));
    }
    let fs2 = 2.0 * fs_hz;
    let wc = fs2 * (PI * cutoff_hz / fs_hz).tan();

    let mut sections = Vec::new();
    for p in prototype_poles(order) {
        if p.im < -1e-12 {
            continue;
        }
        let q = p * wc;
        if p.im > 1e-12 {
            let (a1, a2) = section_denominator(bilinear_pole(q, fs2), bilinear_pole(q.conj(), fs2));
            sections.push(Biquad { b0: 1.0, b1: 2.0, b2: 1.0, a1, a2 });
        } else {
            let z1 = bilinear_pole(q, fs2);
            sections.push(Biquad { b0: 1.0, b1: 1.0, b2: 0.0, a1: -z1.re, a2: 0.0 });
        }
    }
    let mut cascade = BiquadCascade {
        sections,
        design_meta: DesignMeta { order, low_hz: 0.0, high_hz: cutoff_hz, fs_hz },
    };
    let g = cascade.magnitude_at(0.0);
    let s0 = &mut cascade.sections[0];
    s0.b0 /= g;
    s0.b1 /= g;
    s0.b2 /= g;
    Ok(cascade)
}

fn edge_pad_len(filt: &BiquadCascade) -> usize {
    // 3 × (2·order + 1) samples each side; `order` here is the digital pole
    // count so band and low-pass designs get comparable settling room
    3 * (filt.n_poles() + 1)
}

/// Zero-phase (forward–backward) filtering: filter, reverse, filter, reverse.
/// Effective magnitude response is |H|²; phase distortion cancels. Edges are
/// handled by odd-reflection padding, trimmed after filtering. Output length
/// equals input length.
pub fn filter_zero_phase(signal: &[f64], filt: &BiquadCascade) -> Result<Vec<f64>> {
    let pad = edge_pad_len(filt);
    if signal.len() <= pad {
        return Err(Error::SignalTooShort { len: signal.len(), min: pad + 1 });
    }
    let n = signal.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let first = signal[0];
    let last = signal[n - 1];
    for i in (1..=pad).rev() {
        ext.push(2.0 * first - signal[i]);
    }
    ext.extend_from_slice(signal);
    for i in 1..=pad {
        ext.push(2.0 * last - signal[n - 1 - i]);
    }

    let mut y = filt.filter_forward_settled(&ext);
    y.reverse();
    let mut y = filt.filter_forward_settled(&y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Anti-alias low-pass (zero-phase) then keep every `fs_in/fs_out`-th sample.
pub fn decimate(
    signal: &[f64],
    fs_in: f64,
    fs_out: f64,
    antialias: &BiquadCascade,
) -> Result<Vec<f64>> {
    let ratio = fs_in / fs_out;
    let r = ratio.round();
    if (ratio - r).abs() > 1e-9 || r < 1.0 {
        return Err(Error::invalid(
            "decimation",
            format!("fs_in {fs_in} is not an integer multiple of fs_out {fs_out}"),
        ));
    }
    let step = r as usize;
    if step == 1 {
        return Ok(signal.to_vec());
    }
    let filtered = filter_zero_phase(signal, antialias)?;
    Ok(filtered.iter().copied().step_by(step).collect())
}

/// Default anti-alias filter for decimation to `fs_out`: 8th-order
/// Butterworth low-pass at 0.4·fs_out, applied zero-phase.
pub fn default_antialias(fs_in: f64, fs_out: f64) -> Result<BiquadCascade> {
    design_butterworth_lowpass(8, 0.4 * fs_out, fs_in)
}

/// Cut one epoch per marker, all channels; window is `[onset + t_start,
/// onset + t_end)` with `n_times == round((t_end − t_start)·fs)` samples.
pub fn segment_epochs(rec: &Recording, t_start_s: f64, t_end_s: f64) -> Result<EpochSet> {
    if t_end_s <= t_start_s {
        return Err(Error::invalid("epoch window", "t_end must exceed t_start"));
    }
    let fs = rec.sample_rate_hz;
    let n_times = ((t_end_s - t_start_s) * fs).round() as usize;
    let n_channels = rec.n_channels();

    let mut data = Vec::with_capacity(rec.markers.len() * n_channels * n_times);
    let mut labels = Vec::with_capacity(rec.markers.len());
    for (i, m) in rec.markers.iter().enumerate() {
        let start = ((m.onset_s + t_start_s) * fs).round() as i64;
        if start < 0 || start as usize + n_times > rec.n_samples {
            return Err(Error::EpochOutOfBounds { index: i, onset_s: m.onset_s });
        }
        let start = start as usize;
        for ch in 0..n_channels {
            data.extend_from_slice(&rec.channel(ch)[start..start + n_times]);
        }
        labels.push(m.label);
    }
    let ep = EpochSet {
        sample_rate_hz: fs,
        t_start_s,
        t_end_s,
        data,
        n_epochs: rec.markers.len(),
        n_times,
        labels,
        subject_id: rec.subject_id.clone(),
        channel_names: rec.channel_names.clone(),
    };
    ep.validate()?;
    Ok(ep)
}

/// Subtract, per epoch and per channel, the mean over the baseline window
/// `[b_start_s, b_end_s]` (endpoints inclusive) from the whole epoch.
pub fn remove_baseline_mean(epochs: &EpochSet, b_start_s: f64, b_end_s: f64) -> Result<EpochSet> {
    if b_start_s < epochs.t_start_s - 1e-9 || b_end_s > epochs.t_end_s + 1e-9 || b_end_s <= b_start_s {
        return Err(Error::invalid(
            "baseline window",
            format!(
                "[{b_start_s}, {b_end_s}] not inside epoch window [{}, {}]",
                epochs.t_start_s, epochs.t_end_s
            ),
        ));
    }
    let fs = epochs.sample_rate_hz;
    let i0 = (((b_start_s - epochs.t_start_s) * fs) - 1e-6).ceil().max(0.0) as usize;
    let i1 = ((((b_end_s - epochs.t_start_s) * fs) + 1e-6).floor() as usize).min(epochs.n_times - 1);
    if i1 < i0 {
        return Err(Error::invalid("baseline window", "no samples inside window"));
    }

    let mut out = epochs.clone();
    for e in 0..out.n_epochs {
        for ch in 0..out.n_channels() {
            let seg = out.epoch_channel_mut(e, ch);
            let mean = seg[i0..=i1].iter().map(|&v| v as f64).sum::<f64>() / (i1 - i0 + 1) as f64;
            for v in seg.iter_mut() {
                *v = (*v as f64 - mean) as f32;
            }
        }
    }
    Ok(out)
}

/// Order of band-pass filtering relative to downsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainOrder {
    /// Downsample (with anti-alias) first, then band-pass.
    DownsampleFirst,
    /// Band-pass at the native rate, then downsample.
    FilterFirst,
}

/// Preprocessing parameters. Defaults encode the standard protocol:
/// 0.5–50 Hz 3rd-order band-pass, 200 Hz target rate, (−2, +10) s epochs,
/// (−1, 0) s baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub band_order: usize,
    /// Target rate; `None` keeps the native rate.
    pub downsample_to_hz: Option<f64>,
    pub chain_order: ChainOrder,
    pub epoch_start_s: f64,
    pub epoch_end_s: f64,
    pub baseline_start_s: f64,
    pub baseline_end_s: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            band_low_hz: 0.5,
            band_high_hz: 50.0,
            band_order: 3,
            downsample_to_hz: Some(200.0),
            chain_order: ChainOrder::DownsampleFirst,
            epoch_start_s: -2.0,
            epoch_end_s: 10.0,
            baseline_start_s: -1.0,
            baseline_end_s: 0.0,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz) {
            return Err(Error::Config {
                field: "band_low_hz/band_high_hz".into(),
                detail: "need 0 < low < high".into(),
            });
        }
        if self.band_order == 0 {
            return Err(Error::Config { field: "band_order".into(), detail: "must be ≥ 1".into() });
        }
        if self.epoch_end_s <= self.epoch_start_s {
            return Err(Error::Config {
                field: "epoch_start_s/epoch_end_s".into(),
                detail: "need start < end".into(),
            });
        }
        if self.baseline_start_s < self.epoch_start_s || self.baseline_end_s > self.epoch_end_s {
            return Err(Error::Config {
                field: "baseline_start_s/baseline_end_s".into(),
                detail: "baseline must lie inside the epoch window".into(),
            });
        }
        Ok(())
    }
}

/// Full continuous-signal preprocessing: (optional) downsample and band-pass
/// in the configured order. Returns a new recording at the target rate with
/// markers carried over.
pub fn preprocess_recording(rec: &Recording, cfg: &DspConfig) -> Result<Recording> {
    cfg.validate()?;
    let n_channels = rec.n_channels();

    let run_band = |data: &mut Vec<Vec<f64>>, fs: f64| -> Result<()> {
        let band = design_butterworth_bandpass(cfg.band_order, cfg.band_low_hz, cfg.band_high_hz, fs)?;
        for ch in data.iter_mut() {
            *ch = filter_zero_phase(ch, &band)?;
        }
        Ok(())
    };
    let run_decimate = |data: &mut Vec<Vec<f64>>, fs: f64, target: f64| -> Result<()> {
        let aa = default_antialias(fs, target)?;
        for ch in data.iter_mut() {
            *ch = decimate(ch, fs, target, &aa)?;
        }
        Ok(())
    };

    let mut data: Vec<Vec<f64>> = (0..n_channels)
        .map(|ch| rec.channel(ch).iter().map(|&v| v as f64).collect())
        .collect();
    let mut fs = rec.sample_rate_hz;

    match (cfg.chain_order, cfg.downsample_to_hz) {
        (_, None) => run_band(&mut data, fs)?,
        (ChainOrder::DownsampleFirst, Some(target)) => {
            if (fs - target).abs() > 1e-9 {
                run_decimate(&mut data, fs, target)?;
                fs = target;
            }
            run_band(&mut data, fs)?;
        }
        (ChainOrder::FilterFirst, Some(target)) => {
            run_band(&mut data, fs)?;
            if (fs - target).abs() > 1e-9 {
                run_decimate(&mut data, fs, target)?;
                fs = target;
            }
        }
    }

    let n_samples = data.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(n_channels * n_samples);
    for ch in &data {
        flat.extend(ch.iter().map(|&v| v as f32));
    }
    let out = Recording {
        sample_rate_hz: fs,
        channel_names: rec.channel_names.clone(),
        data: flat,
        n_samples,
        markers: rec.markers.clone(),
        subject_id: rec.subject_id.clone(),
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eegio::{ClassLabel, Marker};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Independent frequency-response oracle: evaluate H(e^{j2πf/fs}) from
    /// the raw coefficients, bypassing BiquadCascade::response_at.
    fn magnitude_oracle(filt: &BiquadCascade, f_hz: f64) -> f64 {
        let w = 2.0 * PI * f_hz / filt.design_meta.fs_hz;
        let zi = Complex64::new(w.cos(), -w.sin());
        let mut h = Complex64::new(1.0, 0.0);
        for s in &filt.sections {
            let num = Complex64::new(s.b0, 0.0) + zi * s.b1 + zi * zi * s.b2;
            let den = Complex64::new(1.0, 0.0) + zi * s.a1 + zi * zi * s.a2;
            h *= num / den;
        }
        h.norm()
    }

    #[test]
    fn bandpass_edges_at_minus_3db() {
        let f = design_butterworth_bandpass(3, 0.5, 50.0, 200.0).unwrap();
        let target = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(magnitude_oracle(&f, 0.5), target, epsilon = 1e-3);
        assert_abs_diff_eq!(magnitude_oracle(&f, 50.0), target, epsilon = 1e-3);
    }

    #[test]
    fn bandpass_zero_at_dc() {
        let f = design_butterworth_bandpass(3, 0.5, 50.0, 200.0).unwrap();
        assert!(magnitude_oracle(&f, 0.0) <= 1e-10);
    }

    #[test]
    fn bandpass_passband_near_unity() {
        let f = design_butterworth_bandpass(3, 0.5, 50.0, 200.0).unwrap();
        let f_center = (0.5f64 * 50.0).sqrt();
        assert!(magnitude_oracle(&f, f_center) >= 0.99);
    }

    #[test]
    fn bandpass_pole_count() {
        let f = design_butterworth_bandpass(3, 0.5, 50.0, 200.0).unwrap();
        assert_eq!(f.poles().len(), 6);
        assert!(f.is_stable());
    }

    #[test]
    fn lowpass_design_basics() {
        let f = design_butterworth_lowpass(8, 80.0, 1000.0).unwrap();
        assert!(f.is_stable());
        assert_abs_diff_eq!(magnitude_oracle(&f, 0.0), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(magnitude_oracle(&f, 80.0), 1.0 / 2.0_f64.sqrt(), epsilon = 1e-3);
        // odd order exercises the first-order section path
        let f5 = design_butterworth_lowpass(5, 40.0, 500.0).unwrap();
        assert!(f5.is_stable());
        assert_abs_diff_eq!(magnitude_oracle(&f5, 40.0), 1.0 / 2.0_f64.sqrt(), epsilon = 1e-3);
    }

    #[test]
    fn design_rejects_bad_edges() {
        assert!(design_butterworth_bandpass(3, 50.0, 0.5, 200.0).is_err());
        assert!(design_butterworth_bandpass(3, 0.5, 120.0, 200.0).is_err());
        assert!(design_butterworth_bandpass(0, 0.5, 50.0, 200.0).is_err());
    }

    #[test]
    fn zero_phase_of_zero_vector() {
        let f = design_butterworth_bandpass(3, 0.5, 50.0, 200.0).unwrap();
        let out = filter_zero_phase(&vec![0.0; 1000], &f).unwrap();
        assert_eq!(out.len(), 1000);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_phase_sinusoid_gain_matches_h_squared() {
        let fs = 200.0;
        let f = design_butterworth_bandpass(3, 0.5, 50.0, fs).unwrap();
        let n = 2000; // 10 s
        let signal: Vec<f64> = (0..n).map(|i| (2.0 * PI * 25.0 * i as f64 / fs).sin()).collect();
        let out = filter_zero_phase(&signal, &f).unwrap();
        // steady-state amplitude; the 0.5 Hz edge has a ~0.64 s time
        // constant, so exclude 3.5 s of transient at each end
        let interior = &out[700..1300];
        let amp = interior.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let expected = magnitude_oracle(&f, 25.0).powi(2);
        assert!((amp - expected).abs() / expected < 0.02, "amp {amp} vs {expected}");
    }

    #[test]
    fn zero_phase_kills_dc() {
        let f = design_butterworth_bandpass(3, 0.5, 50.0, 200.0).unwrap();
        let signal = vec![5.0; 4000];
        let out = filter_zero_phase(&signal, &f).unwrap();
        let interior = &out[500..3500];
        let max = interior.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max <= 1e-6 * 5.0, "residual DC {max}");
    }

    #[test]
    fn zero_phase_rejects_short_signal() {
        let f = design_butterworth_bandpass(3, 0.5, 50.0, 200.0).unwrap();
        assert!(filter_zero_phase(&[1.0; 10], &f).is_err());
    }

    #[test]
    fn zero_phase_has_zero_lag() {
        // cross-correlation peak between band-limited input and output at lag 0
        let fs = 200.0;
        let f = design_butterworth_bandpass(3, 0.5, 50.0, fs).unwrap();
        let n = 2000;
        let signal: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 8.0 * t).sin() + 0.5 * (2.0 * PI * 17.0 * t).cos()
            })
            .collect();
        let out = filter_zero_phase(&signal, &f).unwrap();
        let xcorr = |lag: i64| -> f64 {
            let mut acc = 0.0;
            for i in 300..(n as i64 - 300) {
                let j = i + lag;
                acc += signal[i as usize] * out[j as usize];
            }
            acc
        };
        let at_zero = xcorr(0);
        for lag in [-3i64, -2, -1, 1, 2, 3] {
            assert!(xcorr(lag) < at_zero, "lag {lag} beats lag 0");
        }
    }

    #[test]
    fn decimate_length_and_dc() {
        let aa = default_antialias(1000.0, 200.0).unwrap();
        let signal = vec![3.0; 12_000];
        let out = decimate(&signal, 1000.0, 200.0, &aa).unwrap();
        assert_eq!(out.len(), 2400);
        let interior = &out[200..2200];
        for &v in interior {
            assert_abs_diff_eq!(v, 3.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn decimate_attenuates_above_new_nyquist() {
        let fs_in = 1000.0;
        let aa = default_antialias(fs_in, 200.0).unwrap();
        let n = 10_000;
        let signal: Vec<f64> = (0..n).map(|i| (2.0 * PI * 90.0 * i as f64 / fs_in).sin()).collect();
        let rms_in = (signal.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let out = decimate(&signal, fs_in, 200.0, &aa).unwrap();
        let interior = &out[200..out.len() - 200];
        let rms_out =
            (interior.iter().map(|v| v * v).sum::<f64>() / interior.len() as f64).sqrt();
        // expected attenuation read from the anti-alias response oracle:
        // zero-phase application squares the magnitude response
        let expected = magnitude_oracle(&aa, 90.0).powi(2);
        assert!(
            (rms_out / rms_in - expected).abs() < 0.1 * expected,
            "rms ratio {} vs oracle {expected}",
            rms_out / rms_in
        );
        assert!(rms_out < 0.2 * rms_in);
    }

    #[test]
    fn decimate_rejects_non_integer_ratio() {
        let aa = default_antialias(1000.0, 200.0).unwrap();
        assert!(decimate(&[0.0; 100], 1000.0, 300.0, &aa).is_err());
    }

    fn recording_with_markers(n_markers: usize, fs: f64, n_channels: usize) -> Recording {
        let spacing = 30.0;
        let n_samples = ((n_markers as f64 + 1.0) * spacing * fs) as usize;
        let markers = (0..n_markers)
            .map(|i| Marker {
                onset_s: 10.0 + i as f64 * spacing,
                label: if i % 2 == 0 { ClassLabel::Ma } else { ClassLabel::Bl },
            })
            .collect();
        Recording {
            sample_rate_hz: fs,
            channel_names: (0..n_channels).map(|i| format!("ch{i}")).collect(),
            data: vec![0.0; n_channels * n_samples],
            n_samples,
            markers,
            subject_id: "s".into(),
        }
    }

    #[test]
    fn segment_full_session_layout() {
        let rec = recording_with_markers(60, 200.0, 22);
        let ep = segment_epochs(&rec, -2.0, 10.0).unwrap();
        assert_eq!((ep.n_epochs, ep.n_channels(), ep.n_times), (60, 22, 2400));
    }

    #[test]
    fn segment_rejects_out_of_bounds_marker() {
        let mut rec = recording_with_markers(1, 200.0, 1);
        rec.markers[0].onset_s = 1.0;
        let err = segment_epochs(&rec, -2.0, 10.0).unwrap_err();
        assert!(matches!(err, Error::EpochOutOfBounds { index: 0, .. }));
    }

    #[test]
    fn segment_zero_markers() {
        let mut rec = recording_with_markers(0, 200.0, 2);
        rec.markers.clear();
        let ep = segment_epochs(&rec, -2.0, 10.0).unwrap();
        assert_eq!(ep.n_epochs, 0);
    }

    fn epoch_set_from_fn(f: impl Fn(f64) -> f32) -> EpochSet {
        let fs = 200.0;
        let n_times = 2400;
        let data: Vec<f32> = (0..n_times).map(|i| f(-2.0 + i as f64 / fs)).collect();
        EpochSet {
            sample_rate_hz: fs,
            t_start_s: -2.0,
            t_end_s: 10.0,
            data,
            n_epochs: 1,
            n_times,
            labels: vec![ClassLabel::Ma],
            subject_id: "s".into(),
            channel_names: vec!["Cz".into()],
        }
    }

    #[test]
    fn baseline_removes_constant() {
        let ep = epoch_set_from_fn(|_| 4.5);
        let out = remove_baseline_mean(&ep, -1.0, 0.0).unwrap();
        for &v in out.epoch_channel(0, 0) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn baseline_zero_leaves_epoch_unchanged() {
        let ep = epoch_set_from_fn(|t| if t <= 0.0 { 0.0 } else { 5.0 });
        let out = remove_baseline_mean(&ep, -1.0, 0.0).unwrap();
        assert_eq!(out.data, ep.data);
    }

    #[test]
    fn baseline_of_ramp_shifts_by_half() {
        // mean of t over [−1, 0] is −0.5, so the ramp shifts up by 0.5
        let ep = epoch_set_from_fn(|t| t as f32);
        let out = remove_baseline_mean(&ep, -1.0, 0.0).unwrap();
        let shifted = out.epoch_channel(0, 0);
        let orig = ep.epoch_channel(0, 0);
        for (a, b) in shifted.iter().zip(orig) {
            assert_abs_diff_eq!(*a, *b + 0.5, epsilon = 1e-5);
        }
    }

    #[test]
    fn baseline_outside_epoch_rejected() {
        let ep = epoch_set_from_fn(|t| t as f32);
        assert!(remove_baseline_mean(&ep, -3.0, 0.0).is_err());
    }

    #[test]
    fn segment_and_baseline_commute_with_channel_permutation() {
        let fs = 200.0;
        let n_channels = 3;
        let n_samples = (40.0 * fs) as usize;
        let mk = vec![Marker { onset_s: 15.0, label: ClassLabel::Ma }];
        let mut data = Vec::new();
        for ch in 0..n_channels {
            data.extend((0..n_samples).map(|i| ((i + ch * 977) as f32 * 0.1).sin()));
        }
        let rec = Recording {
            sample_rate_hz: fs,
            channel_names: vec!["a".into(), "b".into(), "c".into()],
            data,
            n_samples,
            markers: mk.clone(),
            subject_id: "s".into(),
        };
        // permuted channel order: c, a, b
        let perm = [2usize, 0, 1];
        let mut pdata = Vec::new();
        for &ch in &perm {
            pdata.extend_from_slice(rec.channel(ch));
        }
        let prec = Recording {
            channel_names: perm.iter().map(|&i| rec.channel_names[i].clone()).collect(),
            data: pdata,
            ..rec.clone()
        };
        let a = remove_baseline_mean(&segment_epochs(&rec, -2.0, 10.0).unwrap(), -1.0, 0.0).unwrap();
        let b = remove_baseline_mean(&segment_epochs(&prec, -2.0, 10.0).unwrap(), -1.0, 0.0).unwrap();
        for (out_pos, &src) in perm.iter().enumerate() {
            assert_eq!(b.epoch_channel(0, out_pos), a.epoch_channel(0, src));
        }
    }

    #[test]
    fn preprocess_is_deterministic() {
        let rec = {
            let mut r = recording_with_markers(2, 1000.0, 2);
            for (i, v) in r.data.iter_mut().enumerate() {
                *v = ((i as f32) * 0.013).sin() * 10.0;
            }
            r
        };
        let cfg = DspConfig::default();
        let a = preprocess_recording(&rec, &cfg).unwrap();
        let b = preprocess_recording(&rec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sample_rate_hz, 200.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn designed_cascades_are_stable(
            order in 1usize..6,
            low in 0.1f64..10.0,
            span in 1.0f64..60.0,
            fs in 150.0f64..2000.0,
        ) {
            let high = low + span;
            prop_assume!(high < fs / 2.0 - 1.0);
            let f = design_butterworth_bandpass(order, low, high, fs).unwrap();
            prop_assert!(f.is_stable());
            for p in f.poles() {
                prop_assert!(p.norm() < 1.0);
            }
        }
    }
}
