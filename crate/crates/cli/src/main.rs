//! Command-line orchestration of the EEG classification pipeline:
//! `import → preprocess → features → train / evaluate → report`, plus the
//! `synth` data generator.
//!
//! Configuration is a TOML (or JSON) file with sections mirroring the
//! library configs; every run writes the fully resolved configuration next
//! to its outputs so it can be replayed bit-exactly. Exit codes: 0 success,
//! 1 usage error, 2 data/validation error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use spectral_mind::dsp::{self, DspConfig};
use spectral_mind::eegio;
use spectral_mind::ersp::{self, ErspConfig};
use spectral_mind::eval;
use spectral_mind::nn;
use spectral_mind::synth::{self, SynthConfig};
use spectral_mind::train::{self, ModelKind, TrainConfig};

/// Seed override environment variable.
const SEED_ENV: &str = "SPECTRAL_MIND_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PipelineConfig {
    model: ModelKind,
    n_splits: usize,
    base_seed: u64,
    dsp: DspConfig,
    ersp: ErspConfig,
    train: TrainConfig,
    synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelKind::Cnn,
            n_splits: 20,
            base_seed: 0,
            dsp: DspConfig::default(),
            ersp: ErspConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e == "json")
            || text.trim_start().starts_with('{');
        let cfg: PipelineConfig = if is_json {
            serde_json::from_str(&text)
                .with_context(|| format!("parsing JSON config {}", path.display()))?
        } else {
            toml::from_str(&text)
                .with_context(|| format!("parsing TOML config {}", path.display()))?
        };
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        self.dsp.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        // features are computed at the post-preprocessing rate
        let fs = self.dsp.downsample_to_hz.unwrap_or(self.synth.fs_hz);
        self.ersp.validate(fs)?;
        if self.n_splits == 0 {
            bail!("config field n_splits: must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "spectral-mind", version, about = "EEG mental-arithmetic classification pipeline")]
struct Cli {
    /// Pipeline config file (TOML; JSON also accepted)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Base seed override (also via SPECTRAL_MIND_SEED)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker cap; 1 keeps logs bit-exact (stages are currently sequential)
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Convert a channels-as-columns CSV plus marker CSV into a recording
    Import {
        /// Signal CSV (header = channel names, one row per sample)
        #[arg(long)]
        data: PathBuf,
        /// Marker CSV with onset_s,label columns
        #[arg(long)]
        markers: PathBuf,
        /// Native sampling rate in Hz
        #[arg(long)]
        fs: f64,
        #[arg(long)]
        subject: String,
    },
    /// Band-pass / downsample / epoch / baseline-correct recordings
    Preprocess {
        /// Input .eegr files
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
    },
    /// Compute ERSP feature images from epoch files
    Features {
        /// Input .eegp files (combined into one dataset)
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
    },
    /// Train one model on one stratified split
    Train {
        /// Input .eegs dataset
        #[arg(long)]
        input: PathBuf,
        /// Model kind override (cnn | lstm)
        #[arg(long)]
        model: Option<String>,
        /// Start from an existing checkpoint instead of fresh weights
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Multi-split train/test protocol with aggregated reports
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: Option<String>,
        /// Number of random splits override
        #[arg(long)]
        splits: Option<usize>,
    },
    /// Re-emit CSV reports and topomap from a stored evaluation
    Report {
        /// evaluation.json produced by `evaluate`
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate synthetic recordings with a known spectral signature
    Synth,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn parse_model(s: &str) -> anyhow::Result<ModelKind> {
    match s {
        "cnn" => Ok(ModelKind::Cnn),
        "lstm" => Ok(ModelKind::Lstm),
        other => bail!("config field model: expected cnn or lstm, got {other}"),
    }
}

fn summary(command: &str, cfg: &PipelineConfig, outputs: &[PathBuf]) -> String {
    serde_json::json!({
        "command": command,
        "seed": cfg.base_seed,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    })
    .to_string()
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };

    // seed precedence: --seed > env > config
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => {
            Some(v.parse::<u64>().with_context(|| format!("{SEED_ENV} must be an unsigned integer"))?)
        }
        Err(_) => None,
    };
    if let Some(seed) = cli.seed.or(env_seed) {
        cfg.base_seed = seed;
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate()?;

    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    let resolved = cli.out.join("resolved-config.json");
    std::fs::write(&resolved, serde_json::to_string_pretty(&cfg)?)
        .with_context(|| format!("writing {}", resolved.display()))?;

    let mut outputs = vec![resolved];
    let name;
    match &cli.cmd {
        Cmd::Import { data, markers, fs, subject } => {
            name = "import";
            let rec = eegio::import_csv(data, *fs, markers, subject)?;
            let path = cli.out.join(format!("{subject}.eegr"));
            eegio::save_recording(&rec, &path)?;
            outputs.push(path);
        }
        Cmd::Preprocess { input } => {
            name = "preprocess";
            for file in input {
                let rec = eegio::load_recording(file)?;
                let clean = dsp::preprocess_recording(&rec, &cfg.dsp)?;
                let epochs =
                    dsp::segment_epochs(&clean, cfg.dsp.epoch_start_s, cfg.dsp.epoch_end_s)?;
                let epochs = dsp::remove_baseline_mean(
                    &epochs,
                    cfg.dsp.baseline_start_s,
                    cfg.dsp.baseline_end_s,
                )?;
                let stem = file.file_stem().unwrap_or_default().to_string_lossy();
                let path = cli.out.join(format!("{stem}.eegp"));
                eegio::save_epochs(&epochs, &path)?;
                outputs.push(path);
            }
        }
        Cmd::Features { input } => {
            name = "features";
            let mut sets = Vec::with_capacity(input.len());
            for file in input {
                let epochs = eegio::load_epochs(file)?;
                sets.push(ersp::build_dataset(&epochs, &cfg.ersp)?);
            }
            let ds = ersp::concat_datasets(&sets)?;
            let path = cli.out.join("features.eegs");
            eegio::save_spectra(&ds, &path)?;
            outputs.push(path);
        }
        Cmd::Train { input, model, init } => {
            name = "train";
            let kind = match model {
                Some(s) => parse_model(s)?,
                None => cfg.model,
            };
            let ds = eegio::load_spectra(input)?;
            let split = train::split_dataset(&ds, (0.70, 0.15, 0.15), cfg.base_seed)?;
            let mut net = match init {
                Some(ckpt) => {
                    let net = nn::load_checkpoint(ckpt)?;
                    let first = net.layer_specs().into_iter().next();
                    let kind_ok = matches!(
                        (&first, kind),
                        (Some(nn::LayerSpec::Conv2d { .. }), ModelKind::Cnn)
                            | (Some(nn::LayerSpec::Lstm { .. }), ModelKind::Lstm)
                    );
                    if !kind_ok || !train::compatible_with(&net, &ds) {
                        bail!(
                            "shape mismatch: checkpoint {} does not match model {kind:?} on a {}×{} dataset",
                            ckpt.display(),
                            ds.height,
                            ds.width
                        );
                    }
                    net
                }
                None => train::build_model(kind, &ds, cfg.base_seed)?,
            };
            let mut tc = cfg.train.clone();
            tc.seed = cfg.base_seed;
            let history = train::train_model(&mut net, &ds, &split, &tc)?;
            let ckpt_path = cli.out.join("model.ckpt");
            nn::save_checkpoint(&net, &ckpt_path)?;
            let hist_path = cli.out.join("history.csv");
            history.write_csv(&hist_path)?;
            outputs.push(ckpt_path);
            outputs.push(hist_path);
        }
        Cmd::Evaluate { input, model, splits } => {
            name = "evaluate";
            let kind = match model {
                Some(s) => parse_model(s)?,
                None => cfg.model,
            };
            let n_splits = splits.unwrap_or(cfg.n_splits);
            let ds = eegio::load_spectra(input)?;
            let report = eval::evaluate_splits(
                |ds, seed| train::build_model(kind, ds, seed),
                &ds,
                n_splits,
                &cfg.train,
                cfg.base_seed,
            )?;
            let json_path = cli.out.join("evaluation.json");
            std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)
                .with_context(|| format!("writing {}", json_path.display()))?;
            outputs.push(json_path);
            outputs.extend(write_reports(&report, &cli.out)?);
        }
        Cmd::Report { input } => {
            name = "report";
            let text = std::fs::read_to_string(input)
                .with_context(|| format!("reading {}", input.display()))?;
            let report: eval::EvaluationReport = serde_json::from_str(&text)
                .with_context(|| format!("parsing evaluation {}", input.display()))?;
            outputs.extend(write_reports(&report, &cli.out)?);
        }
        Cmd::Synth => {
            name = "synth";
            let mut sc = cfg.synth.clone();
            sc.seed = cfg.base_seed;
            let recordings = synth::generate(&sc)?;
            for rec in &recordings {
                let path = cli.out.join(format!("{}.eegr", rec.subject_id));
                eegio::save_recording(rec, &path)?;
                outputs.push(path);
            }
        }
    }
    Ok(summary(name, &cfg, &outputs))
}

/// Electrode coordinates: the built-in 10-05 table, extended with evenly
/// spaced ring positions for channel names it does not know (synthetic
/// data), so the topomap is always renderable.
fn coords_for(channels: &[String]) -> BTreeMap<String, (f64, f64)> {
    let mut coords = eval::standard_coords();
    let unknown: Vec<&String> = channels.iter().filter(|c| !coords.contains_key(*c)).collect();
    let n = unknown.len();
    for (k, name) in unknown.into_iter().enumerate() {
        let angle = std::f64::consts::TAU * k as f64 / n as f64;
        coords.insert(name.clone(), (0.55 * angle.cos(), 0.55 * angle.sin()));
    }
    coords
}

fn write_reports(report: &eval::EvaluationReport, out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut outputs = Vec::new();
    for (rep, file) in [
        (&report.overall, "overall.csv"),
        (&report.by_subject, "by_subject.csv"),
        (&report.by_channel, "by_channel.csv"),
    ] {
        let path = out.join(file);
        eval::write_metrics_csv(rep, &path)?;
        outputs.push(path);
    }
    let acc = report.channel_median_accuracy();
    let channels: Vec<String> = acc.keys().cloned().collect();
    let svg = eval::render_topomap(&acc, &coords_for(&channels))?;
    let svg_path = out.join("topomap.svg");
    std::fs::write(&svg_path, svg).with_context(|| format!("writing {}", svg_path.display()))?;
    outputs.push(svg_path);
    Ok(outputs)
}
