//! Data containers and persistence.
//!
//! Three container file formats share one envelope:
//!
//! ```text
//! [8-byte magic][4-byte LE header length][UTF-8 JSON header][f32 LE payload]
//! ```
//!
//! | extension | magic      | payload                          |
//! |-----------|------------|----------------------------------|
//! | `.eegr`   | `EEGRECv1` | channels × samples, row-major    |
//! | `.eegp`   | `EEGEPOv1` | epochs × channels × times        |
//! | `.eegs`   | `EEGSPCv1` | samples × H × W                  |
//!
//! The JSON header is self-describing (schema version, shapes, names,
//! rates, markers/metadata); the payload is raw little-endian IEEE-754
//! float32 so round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAGIC_RECORDING: &[u8; 8] = b"EEGRECv1";
const MAGIC_EPOCHS: &[u8; 8] = b"EEGEPOv1";
const MAGIC_SPECTRA: &[u8; 8] = b"EEGSPCv1";

/// Trial class: mental arithmetic (positive class) or baseline rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "MA")]
    Ma,
    #[serde(rename = "BL")]
    Bl,
}

impl ClassLabel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "MA" => Ok(ClassLabel::Ma),
            "BL" => Ok(ClassLabel::Bl),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Ma => "MA",
            ClassLabel::Bl => "BL",
        }
    }

    /// Class index used by the models (BL = 0, MA = 1).
    pub fn class_index(self) -> usize {
        match self {
            ClassLabel::Bl => 0,
            ClassLabel::Ma => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 0 {
            ClassLabel::Bl
        } else {
            ClassLabel::Ma
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Task onset marker within a recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    /// Seconds from recording start.
    pub onset_s: f64,
    pub label: ClassLabel,
}

/// Continuous multi-channel EEG recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    /// Row-major `[n_channels × n_samples]`, µV.
    pub data: Vec<f32>,
    pub n_samples: usize,
    pub markers: Vec<Marker>,
    pub subject_id: String,
}

impl Recording {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.data[ch * self.n_samples..(ch + 1) * self.n_samples]
    }

    /// Check the type invariants (shape consistency, unique channel names,
    /// markers inside the recording).
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::invalid("recording", "sample_rate_hz must be positive"));
        }
        if self.data.len() != self.n_channels() * self.n_samples {
            return Err(Error::invalid(
                "recording",
                format!(
                    "data length {} != {} channels × {} samples",
                    self.data.len(),
                    self.n_channels(),
                    self.n_samples
                ),
            ));
        }
        let mut names: Vec<&String> = self.channel_names.iter().collect();
        names.sort();
        names.dedup();
        if names.len() != self.channel_names.len() {
            return Err(Error::invalid("recording", "duplicate channel names"));
        }
        let max_s = self.duration_s();
        for m in &self.markers {
            if m.onset_s < 0.0 || m.onset_s > max_s {
                return Err(Error::MarkerOutOfRange {
                    onset_s: m.onset_s,
                    max_s,
                });
            }
        }
        Ok(())
    }
}

/// Segmented trials: `[n_epochs × n_channels × n_times]` with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub sample_rate_hz: f64,
    /// Epoch window relative to task onset, seconds.
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub data: Vec<f32>,
    pub n_epochs: usize,
    pub n_times: usize,
    pub labels: Vec<ClassLabel>,
    pub subject_id: String,
    pub channel_names: Vec<String>,
}

impl EpochSet {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn epoch_channel(&self, epoch: usize, ch: usize) -> &[f32] {
        let base = (epoch * self.n_channels() + ch) * self.n_times;
        &self.data[base..base + self.n_times]
    }

    pub fn epoch_channel_mut(&mut self, epoch: usize, ch: usize) -> &mut [f32] {
        let nc = self.n_channels();
        let base = (epoch * nc + ch) * self.n_times;
        &mut self.data[base..base + self.n_times]
    }

    pub fn validate(&self) -> Result<()> {
        let expect_times =
            ((self.t_end_s - self.t_start_s) * self.sample_rate_hz).round() as usize;
        if self.n_times != expect_times {
            return Err(Error::invalid(
                "epoch set",
                format!("n_times {} != round(window × fs) = {}", self.n_times, expect_times),
            ));
        }
        if self.labels.len() != self.n_epochs {
            return Err(Error::invalid(
                "epoch set",
                format!("{} labels for {} epochs", self.labels.len(), self.n_epochs),
            ));
        }
        if self.data.len() != self.n_epochs * self.n_channels() * self.n_times {
            return Err(Error::invalid("epoch set", "data length mismatch"));
        }
        Ok(())
    }
}

/// Per-sample provenance for a spectrogram dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub subject_id: String,
    pub channel_name: String,
    pub epoch_index: usize,
    pub label: ClassLabel,
}

/// Fixed-grid ERSP images with per-sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramSet {
    /// `[n_samples × height × width]`, dB (or z-scored dB).
    pub images: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub meta: Vec<SampleMeta>,
    pub freq_range_hz: (f64, f64),
    pub time_range_s: (f64, f64),
}

impl SpectrogramSet {
    pub fn n_samples(&self) -> usize {
        self.meta.len()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let sz = self.height * self.width;
        &self.images[i * sz..(i + 1) * sz]
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.meta.len() * self.height * self.width {
            return Err(Error::invalid("spectrogram set", "image buffer length mismatch"));
        }
        if self.images.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrogram set", "non-finite image values"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// envelope read/write

#[derive(Serialize, Deserialize)]
struct RecordingHeader {
    schema: u32,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
    n_samples: usize,
    markers: Vec<Marker>,
    subject_id: String,
}

#[derive(Serialize, Deserialize)]
struct EpochHeader {
    schema: u32,
    sample_rate_hz: f64,
    t_start_s: f64,
    t_end_s: f64,
    n_epochs: usize,
    n_times: usize,
    labels: Vec<ClassLabel>,
    subject_id: String,
    channel_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SpectraHeader {
    schema: u32,
    height: usize,
    width: usize,
    meta: Vec<SampleMeta>,
    freq_range_hz: (f64, f64),
    time_range_s: (f64, f64),
}

fn write_envelope(path: &Path, magic: &[u8; 8], header: &[u8], payload: &[f32]) -> Result<()> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    let mut step = || -> std::io::Result<()> {
        w.write_all(magic)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header)?;
        for v in payload {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    step().map_err(|e| Error::io(&p, e))
}

fn read_envelope(path: &Path, magic: &[u8; 8]) -> Result<(Vec<u8>, Vec<f32>)> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut r = BufReader::new(file);
    let mut got_magic = [0u8; 8];
    r.read_exact(&mut got_magic)
        .map_err(|_| Error::format(&p, "file shorter than magic (offset 0)"))?;
    if &got_magic != magic {
        return Err(Error::format(
            &p,
            format!(
                "bad magic {:?} at offset 0, expected {:?}",
                String::from_utf8_lossy(&got_magic),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| Error::format(&p, "truncated header length field (offset 8)"))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)
        .map_err(|_| Error::format(&p, format!("truncated JSON header (offset 12, want {header_len} bytes)")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(&p, e))?;
    if rest.len() % 4 != 0 {
        return Err(Error::format(
            &p,
            format!("payload length {} is not a multiple of 4", rest.len()),
        ));
    }
    let payload = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, payload))
}

fn parse_header<'a, T: Deserialize<'a>>(path: &Path, bytes: &'a [u8]) -> Result<T> {
    serde_json::from_slice(bytes)
        .map_err(|e| Error::format(path.display().to_string(), format!("header JSON: {e}")))
}

/// Save a [`Recording`] to a `.eegr` file.
pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    rec.validate()?;
    let header = RecordingHeader {
        schema: 1,
        sample_rate_hz: rec.sample_rate_hz,
        channel_names: rec.channel_names.clone(),
        n_samples: rec.n_samples,
        markers: rec.markers.clone(),
        subject_id: rec.subject_id.clone(),
    };
    let bytes = serde_json::to_vec(&header).expect("header serializes");
    write_envelope(path.as_ref(), MAGIC_RECORDING, &bytes, &rec.data)
}

/// Load a [`Recording`] from a `.eegr` file.
pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let (hbytes, payload) = read_envelope(path, MAGIC_RECORDING)?;
    let h: RecordingHeader = parse_header(path, &hbytes)?;
    let expected = h.channel_names.len() * h.n_samples;
    if payload.len() != expected {
        return Err(Error::format(
            path.display().to_string(),
            format!(
                "payload has {} floats, header fields channel_names/n_samples imply {}",
                payload.len(),
                expected
            ),
        ));
    }
    let rec = Recording {
        sample_rate_hz: h.sample_rate_hz,
        channel_names: h.channel_names,
        data: payload,
        n_samples: h.n_samples,
        markers: h.markers,
        subject_id: h.subject_id,
    };
    rec.validate()?;
    Ok(rec)
}

/// Save an [`EpochSet`] to a `.eegp` file.
pub fn save_epochs(ep: &EpochSet, path: impl AsRef<Path>) -> Result<()> {
    ep.validate()?;
    let header = EpochHeader {
        schema: 1,
        sample_rate_hz: ep.sample_rate_hz,
        t_start_s: ep.t_start_s,
        t_end_s: ep.t_end_s,
        n_epochs: ep.n_epochs,
        n_times: ep.n_times,
        labels: ep.labels.clone(),
        subject_id: ep.subject_id.clone(),
        channel_names: ep.channel_names.clone(),
    };
    let bytes = serde_json::to_vec(&header).expect("header serializes");
    write_envelope(path.as_ref(), MAGIC_EPOCHS, &bytes, &ep.data)
}

/// Load an [`EpochSet`] from a `.eegp` file.
pub fn load_epochs(path: impl AsRef<Path>) -> Result<EpochSet> {
    let path = path.as_ref();
    let (hbytes, payload) = read_envelope(path, MAGIC_EPOCHS)?;
    let h: EpochHeader = parse_header(path, &hbytes)?;
    let expected = h.n_epochs * h.channel_names.len() * h.n_times;
    if payload.len() != expected {
        return Err(Error::format(
            path.display().to_string(),
            format!("payload has {} floats, header implies {}", payload.len(), expected),
        ));
    }
    let ep = EpochSet {
        sample_rate_hz: h.sample_rate_hz,
        t_start_s: h.t_start_s,
        t_end_s: h.t_end_s,
        data: payload,
        n_epochs: h.n_epochs,
        n_times: h.n_times,
        labels: h.labels,
        subject_id: h.subject_id,
        channel_names: h.channel_names,
    };
    ep.validate()?;
    Ok(ep)
}

/// Save a [`SpectrogramSet`] to a `.eegs` file.
pub fn save_spectra(ds: &SpectrogramSet, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let header = SpectraHeader {
        schema: 1,
        height: ds.height,
        width: ds.width,
        meta: ds.meta.clone(),
        freq_range_hz: ds.freq_range_hz,
        time_range_s: ds.time_range_s,
    };
    let bytes = serde_json::to_vec(&header).expect("header serializes");
    write_envelope(path.as_ref(), MAGIC_SPECTRA, &bytes, &ds.images)
}

/// Load a [`SpectrogramSet`] from a `.eegs` file.
pub fn load_spectra(path: impl AsRef<Path>) -> Result<SpectrogramSet> {
    let path = path.as_ref();
    let (hbytes, payload) = read_envelope(path, MAGIC_SPECTRA)?;
    let h: SpectraHeader = parse_header(path, &hbytes)?;
    let expected = h.meta.len() * h.height * h.width;
    if payload.len() != expected {
        return Err(Error::format(
            path.display().to_string(),
            format!("payload has {} floats, header implies {}", payload.len(), expected),
        ));
    }
    let ds = SpectrogramSet {
        images: payload,
        height: h.height,
        width: h.width,
        meta: h.meta,
        freq_range_hz: h.freq_range_hz,
        time_range_s: h.time_range_s,
    };
    ds.validate()?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// CSV import

/// Import a recording from CSV (one column per channel, header row) plus a
/// marker file with `onset_s,label` lines (label `MA` or `BL`).
///
/// Column order is preserved as channel order.
pub fn import_csv(
    csv_path: impl AsRef<Path>,
    sample_rate_hz: f64,
    marker_path: impl AsRef<Path>,
    subject_id: &str,
) -> Result<Recording> {
    let csv_path = csv_path.as_ref();
    let p = csv_path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| Error::format(&p, e.to_string()))?;
    let channel_names: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::format(&p, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let n_channels = channel_names.len();

    // column-major accumulation, transposed to [channel × sample] at the end
    let mut columns: Vec<Vec<f32>> = vec![Vec::new(); n_channels];
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(&p, format!("row {}: {e}", row_idx + 2)))?;
        if rec.len() != n_channels {
            return Err(Error::format(
                &p,
                format!(
                    "ragged row {}: {} fields, expected {}",
                    row_idx + 2,
                    rec.len(),
                    n_channels
                ),
            ));
        }
        for (ch, field) in rec.iter().enumerate() {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::format(&p, format!("row {}, column {}: not a number", row_idx + 2, ch + 1))
            })?;
            columns[ch].push(v);
        }
    }
    let n_samples = columns.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(n_channels * n_samples);
    for col in &columns {
        data.extend_from_slice(col);
    }

    let markers = read_marker_csv(marker_path.as_ref())?;
    let rec = Recording {
        sample_rate_hz,
        channel_names,
        data,
        n_samples,
        markers,
        subject_id: subject_id.to_string(),
    };
    rec.validate()?;
    Ok(rec)
}

fn read_marker_csv(path: &Path) -> Result<Vec<Marker>> {
    let p = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(&p, e.to_string()))?;
    let mut markers = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(&p, format!("row {}: {e}", i + 2)))?;
        if rec.len() < 2 {
            return Err(Error::format(&p, format!("row {}: need onset_s,label", i + 2)));
        }
        let onset_s: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(&p, format!("row {}: bad onset", i + 2)))?;
        let label = ClassLabel::parse(rec[1].trim())?;
        markers.push(Marker { onset_s, label });
    }
    Ok(markers)
}
