//! Metrics, across-split aggregation, per-subject and per-channel
//! breakdowns, CSV report emission, and the SVG channel topomap.
//!
//! MA (mental arithmetic) is the positive class throughout. Metrics with a
//! degenerate denominator are carried as `None` and serialized as the
//! literal string `undef`, never 0 or NaN.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eegio::{ClassLabel, SpectrogramSet};
use crate::nn::Network;
use crate::train::{self, SplitSet, TrainConfig, TrainHistory};
use crate::{Error, Result};

/// Binary confusion counts with MA as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(predictions: &[ClassLabel], truths: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (ClassLabel::Ma, ClassLabel::Ma) => cm.tp += 1,
            (ClassLabel::Ma, ClassLabel::Bl) => cm.fp += 1,
            (ClassLabel::Bl, ClassLabel::Bl) => cm.tn += 1,
            (ClassLabel::Bl, ClassLabel::Ma) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// The four reported metrics; `None` marks a degenerate denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::invalid("metrics", "empty confusion matrix"));
    }
    Ok(Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        sensitivity: ratio(cm.tp, cm.tp + cm.fn_),
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        f1: ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateKind {
    Median,
    Std,
}

/// Median (midpoint of two for even n) or sample standard deviation
/// (n−1 denominator; 0 for a single value).
pub fn aggregate(values: &[f64], kind: AggregateKind) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("aggregate", "empty value list"));
    }
    match kind {
        AggregateKind::Median => {
            let mut v = values.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = v.len();
            Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
        }
        AggregateKind::Std => {
            let n = values.len();
            if n < 2 {
                return Ok(0.0);
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n - 1) as f64;
            Ok(var.sqrt())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Overall,
    BySubject,
    ByChannel,
}

/// Test-set results of one train/evaluate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub seed: u64,
    pub overall_confusion: ConfusionMatrix,
    pub overall: Metrics,
    pub by_subject_confusion: BTreeMap<String, ConfusionMatrix>,
    pub by_subject: BTreeMap<String, Metrics>,
    pub by_channel_confusion: BTreeMap<String, ConfusionMatrix>,
    pub by_channel: BTreeMap<String, Metrics>,
    pub history: TrainHistory,
}

/// Median/std pair per metric, per group row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub grouping: Grouping,
    /// group key → (median metrics, std metrics) across splits
    pub rows: BTreeMap<String, (Metrics, Metrics)>,
}

/// Per-split outcomes plus the three aggregated reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub splits: Vec<SplitMetrics>,
    pub overall: MetricsReport,
    pub by_subject: MetricsReport,
    pub by_channel: MetricsReport,
}

impl EvaluationReport {
    /// Median accuracy per channel (input to the topomap).
    pub fn channel_median_accuracy(&self) -> BTreeMap<String, f64> {
        self.by_channel
            .rows
            .iter()
            .filter_map(|(k, (median, _))| median.accuracy.map(|a| (k.clone(), a)))
            .collect()
    }
}

fn classify_predictions(preds: &[usize]) -> Vec<ClassLabel> {
    preds
        .iter()
        .map(|&p| if p == ClassLabel::Ma.class_index() { ClassLabel::Ma } else { ClassLabel::Bl })
        .collect()
}

/// Confusion matrices of the test samples grouped by a metadata key.
fn grouped_confusions(
    ds: &SpectrogramSet,
    indices: &[usize],
    preds: &[ClassLabel],
    key: impl Fn(usize) -> String,
) -> Result<BTreeMap<String, ConfusionMatrix>> {
    let mut groups: BTreeMap<String, (Vec<ClassLabel>, Vec<ClassLabel>)> = BTreeMap::new();
    for (&idx, &p) in indices.iter().zip(preds) {
        let entry = groups.entry(key(idx)).or_default();
        entry.0.push(p);
        entry.1.push(ds.meta[idx].label);
    }
    groups.into_iter().map(|(k, (p, t))| Ok((k, confusion(&p, &t)?))).collect()
}

fn metrics_map(cms: &BTreeMap<String, ConfusionMatrix>) -> Result<BTreeMap<String, Metrics>> {
    cms.iter().map(|(k, cm)| Ok((k.clone(), metrics(cm)?))).collect()
}

/// Evaluate one already-trained network on a test index set.
pub fn evaluate_test_set(
    net: &mut Network,
    ds: &SpectrogramSet,
    split: &SplitSet,
    batch_size: usize,
    seed: u64,
    history: TrainHistory,
) -> Result<SplitMetrics> {
    let out = train::evaluate_set(net, ds, &split.test, batch_size)?;
    let preds = classify_predictions(&out.predictions);
    let truths: Vec<ClassLabel> = split.test.iter().map(|&i| ds.meta[i].label).collect();
    let overall_confusion = confusion(&preds, &truths)?;
    let by_subject_confusion =
        grouped_confusions(ds, &split.test, &preds, |i| ds.meta[i].subject_id.clone())?;
    let by_channel_confusion =
        grouped_confusions(ds, &split.test, &preds, |i| ds.meta[i].channel_name.clone())?;
    Ok(SplitMetrics {
        seed,
        overall: metrics(&overall_confusion)?,
        overall_confusion,
        by_subject: metrics_map(&by_subject_confusion)?,
        by_subject_confusion,
        by_channel: metrics_map(&by_channel_confusion)?,
        by_channel_confusion,
        history,
    })
}

fn aggregate_metric(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        (None, None)
    } else {
        (
            Some(aggregate(&defined, AggregateKind::Median).expect("non-empty")),
            Some(aggregate(&defined, AggregateKind::Std).expect("non-empty")),
        )
    }
}

fn aggregate_rows(
    grouping: Grouping,
    per_split: Vec<BTreeMap<String, Metrics>>,
) -> MetricsReport {
    let mut keys: Vec<String> = per_split.iter().flat_map(|m| m.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    let mut rows = BTreeMap::new();
    for key in keys {
        let values: Vec<Metrics> =
            per_split.iter().filter_map(|m| m.get(&key)).copied().collect();
        let (acc_m, acc_s) = aggregate_metric(&values.iter().map(|v| v.accuracy).collect::<Vec<_>>());
        let (sen_m, sen_s) =
            aggregate_metric(&values.iter().map(|v| v.sensitivity).collect::<Vec<_>>());
        let (spe_m, spe_s) =
            aggregate_metric(&values.iter().map(|v| v.specificity).collect::<Vec<_>>());
        let (f1_m, f1_s) = aggregate_metric(&values.iter().map(|v| v.f1).collect::<Vec<_>>());
        rows.insert(
            key,
            (
                Metrics { accuracy: acc_m, sensitivity: sen_m, specificity: spe_m, f1: f1_m },
                Metrics { accuracy: acc_s, sensitivity: sen_s, specificity: spe_s, f1: f1_s },
            ),
        );
    }
    MetricsReport { grouping, rows }
}

/// Full multi-split protocol: for each split seed `base_seed + i`, draw a
/// stratified 70/15/15 split, build and train a fresh model, score the test
/// set, then aggregate median/std across splits for every row.
pub fn evaluate_splits<F>(
    build_model: F,
    ds: &SpectrogramSet,
    n_splits: usize,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<EvaluationReport>
where
    F: Fn(&SpectrogramSet, u64) -> Result<Network>,
{
    if n_splits == 0 {
        return Err(Error::Config { field: "n_splits".into(), detail: "must be ≥ 1".into() });
    }
    let mut splits = Vec::with_capacity(n_splits);
    for i in 0..n_splits {
        let seed = base_seed.wrapping_add(i as u64);
        let split = train::split_dataset(ds, (0.70, 0.15, 0.15), seed)?;
        let mut net = build_model(ds, seed)?;
        let mut cfg_i = cfg.clone();
        cfg_i.seed = seed;
        let history = train::train_model(&mut net, ds, &split, &cfg_i)?;
        splits.push(evaluate_test_set(&mut net, ds, &split, cfg.batch_size, seed, history)?);
    }

    let overall = aggregate_rows(
        Grouping::Overall,
        splits.iter().map(|s| BTreeMap::from([("overall".to_string(), s.overall)])).collect(),
    );
    let by_subject =
        aggregate_rows(Grouping::BySubject, splits.iter().map(|s| s.by_subject.clone()).collect());
    let by_channel =
        aggregate_rows(Grouping::ByChannel, splits.iter().map(|s| s.by_channel.clone()).collect());
    Ok(EvaluationReport { splits, overall, by_subject, by_channel })
}

// ---------------------------------------------------------------------------
// CSV reports

fn pct(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.2}", x * 100.0),
        None => "undef".to_string(),
    }
}

/// One CSV per grouping: `group` column plus a `_median`/`_std` pair per
/// metric, values as percentages with 2 decimals (or `undef`).
pub fn write_metrics_csv(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref().display().to_string();
    let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&p, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut step = || -> std::io::Result<()> {
        writeln!(
            w,
            "group,acc_median,acc_std,sens_median,sens_std,spec_median,spec_std,f1_median,f1_std"
        )?;
        for (key, (med, std)) in &report.rows {
            writeln!(
                w,
                "{key},{},{},{},{},{},{},{},{}",
                pct(med.accuracy),
                pct(std.accuracy),
                pct(med.sensitivity),
                pct(std.sensitivity),
                pct(med.specificity),
                pct(std.specificity),
                pct(med.f1),
                pct(std.f1)
            )?;
        }
        w.flush()
    };
    step().map_err(|e| Error::io(&p, e))
}

// ---------------------------------------------------------------------------
// topomap

/// Approximate 2D head-disk projections (10-05 system) for the 22 recorded
/// channels. Display metadata only — positions are schematic.
pub fn standard_coords() -> BTreeMap<String, (f64, f64)> {
    [
        ("Cz", (0.00, 0.00)),
        ("Pz", (0.00, -0.38)),
        ("F3", (-0.33, 0.43)),
        ("F4", (0.33, 0.43)),
        ("F7", (-0.62, 0.45)),
        ("F8", (0.62, 0.45)),
        ("C3", (-0.38, 0.00)),
        ("C4", (0.38, 0.00)),
        ("T7", (-0.77, 0.00)),
        ("T8", (0.77, 0.00)),
        ("P3", (-0.33, -0.43)),
        ("P4", (0.33, -0.43)),
        ("P7", (-0.62, -0.45)),
        ("P8", (0.62, -0.45)),
        ("AFp1", (-0.09, 0.72)),
        ("AFp2", (0.09, 0.72)),
        ("AFF1h", (-0.14, 0.58)),
        ("AFF2h", (0.14, 0.58)),
        ("AFF5h", (-0.42, 0.55)),
        ("AFF6h", (0.42, 0.55)),
        ("POO1", (-0.09, -0.72)),
        ("POO2", (0.09, -0.72)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Map `t ∈ [0,1]` to a blue→red ramp; monotonic in the red component so
/// color order follows value order.
fn colormap(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = 255 - r;
    format!("#{r:02x}50{b:02x}")
}

/// Render an accuracy topomap as a standalone SVG 1.1 document: head
/// outline, inverse-distance-weighted color field over the scalp disk,
/// labeled electrode dots, and a color scale. Byte-deterministic for fixed
/// inputs.
pub fn render_topomap(
    per_channel_acc: &BTreeMap<String, f64>,
    coords: &BTreeMap<String, (f64, f64)>,
) -> Result<String> {
    if per_channel_acc.is_empty() {
        return Err(Error::invalid("topomap", "no channel values"));
    }
    let mut chans: Vec<(&str, (f64, f64), f64)> = Vec::new();
    for (name, &v) in per_channel_acc {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid("topomap", format!("value {v} for {name} outside [0,1]")));
        }
        let &(x, y) = coords
            .get(name)
            .ok_or_else(|| Error::invalid("topomap", format!("no coordinates for channel {name}")))?;
        chans.push((name, (x, y), v));
    }
    let vmin = chans.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let vmax = chans.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let norm = |v: f64| if vmax > vmin { (v - vmin) / (vmax - vmin) } else { 0.5 };

    // head coordinates: unit disk mapped to a 400×400 canvas centred at 200,200
    let size = 400.0;
    let cx = 200.0;
    let cy = 200.0;
    let radius = 160.0;
    let to_px = |x: f64, y: f64| (cx + x * radius, cy - y * radius);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"460\" height=\"{size}\" viewBox=\"0 0 460 {size}\">"
    );

    // IDW (p = 2) color field over a grid restricted to the scalp disk
    let grid = 48usize;
    for gy in 0..grid {
        for gx in 0..grid {
            let x = -1.0 + 2.0 * (gx as f64 + 0.5) / grid as f64;
            let y = -1.0 + 2.0 * (gy as f64 + 0.5) / grid as f64;
            if x * x + y * y > 1.0 {
                continue;
            }
            let mut num = 0.0;
            let mut den = 0.0;
            let mut exact: Option<f64> = None;
            for &(_, (ex, ey), v) in &chans {
                let d2 = (x - ex) * (x - ex) + (y - ey) * (y - ey);
                if d2 < 1e-12 {
                    exact = Some(v);
                    break;
                }
                num += v / d2;
                den += 1.0 / d2;
            }
            let v = exact.unwrap_or(num / den);
            let (px, py) = to_px(x, y);
            let cell = 2.0 * radius / grid as f64;
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{}\"/>",
                px - cell / 2.0,
                py - cell / 2.0,
                colormap(norm(v))
            );
        }
    }

    // head outline and nose
    let _ = writeln!(
        svg,
        "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{radius}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>"
    );
    let _ = writeln!(
        svg,
        "<path d=\"M {:.1} {:.1} L {cx} {:.1} L {:.1} {:.1}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>",
        cx - 14.0,
        cy - radius + 4.0,
        cy - radius - 14.0,
        cx + 14.0,
        cy - radius + 4.0
    );

    // electrode dots + labels
    for &(name, (x, y), v) in &chans {
        let (px, py) = to_px(x, y);
        let _ = writeln!(
            svg,
            "<circle class=\"electrode\" data-ch=\"{name}\" data-val=\"{v:.4}\" cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"7\" fill=\"{}\" stroke=\"black\" stroke-width=\"1\"/>",
            colormap(norm(v))
        );
        let _ = writeln!(
            svg,
            "<text x=\"{px:.1}\" y=\"{:.1}\" font-size=\"9\" text-anchor=\"middle\" font-family=\"sans-serif\">{name}</text>",
            py - 9.0
        );
    }

    // color scale
    let steps = 32;
    let bar_h = 240.0;
    for i in 0..steps {
        let t = 1.0 - (i as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"420\" y=\"{:.2}\" width=\"18\" height=\"{:.2}\" fill=\"{}\"/>",
            80.0 + bar_h * i as f64 / steps as f64,
            bar_h / steps as f64 + 0.5,
            colormap(t)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"440\" y=\"88\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"end\">{:.1}%</text>",
        vmax * 100.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"440\" y=\"{:.0}\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"end\">{:.1}%</text>",
        80.0 + bar_h + 12.0,
        vmin * 100.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
