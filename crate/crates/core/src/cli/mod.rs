//! Command-line frontend: configuration, analysis dispatch and run records.

mod config;
mod record;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use log::{info, warn};
use nalgebra::DMatrix;

use crate::datastore::{read_matrix, Kind, Manifest, Split};
use crate::dynamics::{
    segment_phases, write_json, write_matrix_csv, xckpt_correlation, CheckpointSeries, MetricKind,
    SeriesPoint,
};
use crate::encoding::{encoding_results, encoding_series, EncodingConfig};
use crate::error::{Error, Result};
use crate::idim::{select_k, IdConfig};
use crate::lens::{exact_match_score, lens_series};
use crate::probing::{probe_results, probe_series, ProbeConfig};
use crate::stats::PermConfig;
use crate::synth::{write_synthetic_dataset, DatasetSpec};

pub use config::{Analysis, RunConfig, ScoreRecord};
pub use record::{hash_outputs, record_file, RunRecord};
pub use report::{render_report, Report};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CKPTSCOPE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ckptscope", version, about = "Representation dynamics across model checkpoints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Analysis,
    /// TOML run configuration, or a run record to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub layer: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

/// Resolves the configuration for an invocation: file (TOML config or JSON
/// run record), then command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        None => RunConfig::default(),
        Some(path) => RunConfig::load_any(path)?,
    };
    if let Some(a) = cfg.analysis.filter(|&a| a != cli.command) {
        return Err(Error::Config(format!(
            "configuration is for '{}', not '{}'",
            a.as_str(),
            cli.command.as_str()
        )));
    }
    cfg.analysis = Some(cli.command);
    if let Some(m) = &cli.manifest {
        cfg.manifest = Some(absolute(m)?);
    }
    if let Some(l) = cli.layer {
        cfg.layers = vec![l];
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(absolute(o)?);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        Ok(cwd.join(p))
    }
}

/// Parses arguments, runs the analysis and writes the run record.
pub fn run_cli(cli: &Cli) -> Result<RunRecord> {
    let cfg = resolve_config(cli)?;
    run(&cfg)
}

/// Executes one analysis and writes its run record to the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    let out = cfg.out_dir()?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let analysis = cfg.analysis.ok_or_else(|| Error::Config("no analysis selected".into()))?;
    info!("running {} into {}", analysis.as_str(), out.display());
    let written = match analysis {
        Analysis::Encode => run_encode(cfg, &out)?,
        Analysis::Probe => run_probe(cfg, &out)?,
        Analysis::Idim => run_idim(cfg, &out)?,
        Analysis::Xcorr => run_xcorr(cfg, &out)?,
        Analysis::Lens => run_lens(cfg, &out)?,
        Analysis::Score => run_score(cfg, &out)?,
        Analysis::Phases => run_phases(cfg, &out)?,
        Analysis::Synth => run_synth(cfg, &out)?,
        Analysis::Report => render_report(&out)?.files,
    };
    let record = RunRecord::new(cfg, &out, &written)?;
    record.save(out.join(record::record_file(analysis.as_str())))?;
    Ok(record)
}

fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.manifest.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "analysis '{}' needs a manifest (--manifest or `manifest` in the config)",
            cfg.analysis.map_or("?", Analysis::as_str)
        ))
    })?;
    Manifest::load(path)
}

fn series_file(out: &Path, s: &CheckpointSeries) -> PathBuf {
    out.join(format!("series_{}.csv", s.label))
}

fn write_series(out: &Path, s: &CheckpointSeries, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = series_file(out, s);
    s.write_csv(&path)?;
    written.push(path);
    Ok(())
}

fn subdir(out: &Path, name: &str) -> Result<PathBuf> {
    let d = out.join(name);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    Ok(d)
}

fn encoding_config(cfg: &RunConfig) -> EncodingConfig {
    EncodingConfig {
        delays: cfg.delays.clone(),
        grid: cfg.lambda_grid.clone(),
        folds: cfg.folds,
        perm: PermConfig {
            seed: cfg.seed,
            ..cfg.perm.clone()
        },
        alpha: cfg.alpha,
    }
}

fn run_encode(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(cfg)?;
    let enc = encoding_config(cfg);
    let dir = subdir(out, "encoding")?;
    let mut written = Vec::new();
    for &layer in &cfg.layers {
        let results = encoding_results(&manifest, layer, cfg.participant.as_deref(), &enc)?;
        for r in &results {
            let path = dir.join(format!("{}_L{layer}.csv", r.checkpoint_id));
            r.write_csv(&path)?;
            written.push(path);
        }
        let (all, sig) = encoding_series(&results, layer)?;
        write_series(out, &all, &mut written)?;
        if sig.len() < all.len() {
            warn!(
                "{} of {} checkpoints have no significant target; omitted from {}",
                all.len() - sig.len(),
                all.len(),
                sig.label
            );
        }
        write_series(out, &sig, &mut written)?;
    }
    Ok(written)
}

fn run_probe(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(cfg)?;
    let pc = ProbeConfig {
        grid: cfg.lambda_grid.clone(),
        folds: cfg.folds,
        ratio: cfg.probe_ratio,
        seed: cfg.seed,
    };
    let dir = subdir(out, "probing")?;
    let mut written = Vec::new();
    for &layer in &cfg.layers {
        let results = probe_results(&manifest, layer, &cfg.task, &pc)?;
        for r in &results {
            let stem = format!("{}_{}_L{layer}", cfg.task, r.checkpoint_id);
            let path = dir.join(format!("{stem}.csv"));
            r.write_csv(&path)?;
            written.push(path);
            let path = dir.join(format!("{stem}_hist.csv"));
            r.write_histogram_csv(&path)?;
            written.push(path);
        }
        write_series(out, &probe_series(&results, layer, &cfg.task)?, &mut written)?;
    }
    Ok(written)
}

/// Activations of the configured group for one (checkpoint, layer).
fn group_activations(manifest: &Manifest, cfg: &RunConfig, ckpt: &str, layer: usize) -> Result<DMatrix<f64>> {
    let group = cfg.group.as_deref().unwrap_or(&cfg.task);
    let e = manifest.find(ckpt, Some(layer), Kind::Activation, group, Split::Train)?;
    read_matrix(manifest.resolve(e))
}

fn run_idim(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(cfg)?;
    let id_cfg = IdConfig {
        seed: cfg.seed,
        ..cfg.idim.clone()
    };
    let dir = subdir(out, "idim")?;
    let mut written = Vec::new();
    for &layer in &cfg.layers {
        let mut points = Vec::new();
        for c in manifest.checkpoints() {
            let acts = group_activations(&manifest, cfg, c.id, layer)?;
            let profile = select_k(&acts, &id_cfg)?;
            if profile.no_plateau {
                warn!("{} layer {layer}: no stable scale, using the largest estimate", c.id);
            }
            let path = dir.join(format!("{}_L{layer}.json", c.id));
            write_json(&path, &profile)?;
            written.push(path);
            points.push(SeriesPoint {
                checkpoint_id: c.id.to_string(),
                training_tokens: c.training_tokens,
                value: profile.selected().d_hat,
            });
        }
        let s = CheckpointSeries::new(
            MetricKind::IdDhat,
            format!("{}_L{layer}", MetricKind::IdDhat.as_str()),
            points,
        )?;
        write_series(out, &s, &mut written)?;
    }
    Ok(written)
}

fn run_xcorr(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(cfg)?;
    let mut written = Vec::new();
    for &layer in &cfg.layers {
        let ckpts = manifest.checkpoints();
        let acts = ckpts
            .iter()
            .map(|c| group_activations(&manifest, cfg, c.id, layer))
            .collect::<Result<Vec<_>>>()?;
        let m = xckpt_correlation(&acts, cfg.xcorr_mode)?;
        let ids: Vec<String> = ckpts.iter().map(|c| c.id.to_string()).collect();
        let path = out.join(format!("xcorr_L{layer}.csv"));
        write_matrix_csv(&path, &ids, &m)?;
        written.push(path);
    }
    Ok(written)
}

fn run_lens(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(cfg)?;
    let mut written = Vec::new();
    for &layer in &cfg.layers {
        let s = lens_series(&manifest, layer, &cfg.task, cfg.lens)?;
        write_series(out, &s, &mut written)?;
    }
    Ok(written)
}

fn run_score(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let path = cfg
        .score_file
        .as_ref()
        .ok_or_else(|| Error::Config("score needs `score_file` in the config".into()))?;
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::MissingData(format!("score file {} does not exist", path.display()))
        }
        _ => Error::io(path, e),
    })?;
    let records: Vec<ScoreRecord> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let points = records
        .iter()
        .map(|r| {
            Ok(SeriesPoint {
                checkpoint_id: r.checkpoint_id.clone(),
                training_tokens: r.training_tokens,
                value: exact_match_score(&r.outputs, &r.golds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let s = CheckpointSeries::new(
        MetricKind::BenchmarkAccuracy,
        format!("{}_{}_exact", MetricKind::BenchmarkAccuracy.as_str(), cfg.task),
        points,
    )?;
    let mut written = Vec::new();
    write_series(out, &s, &mut written)?;
    Ok(written)
}

fn run_phases(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let discovered = cfg.series.is_empty();
    let inputs = if discovered {
        report::series_files(out)?
    } else {
        cfg.series.clone()
    };
    if inputs.is_empty() {
        return Err(Error::MissingData(format!(
            "no series to segment in {}",
            out.display()
        )));
    }
    let mut written = Vec::new();
    for path in inputs {
        let s = CheckpointSeries::read_csv(&path)?;
        let seg = match segment_phases(&s, cfg.segments) {
            Err(Error::InvalidInput(msg)) if discovered => {
                warn!("skipping {}: {msg}", path.display());
                continue;
            }
            other => other?,
        };
        let record = report::PhaseRecord::new(&s, seg);
        let path = out.join(format!("phases_{}.json", s.label));
        write_json(&path, &record)?;
        written.push(path);
    }
    Ok(written)
}

fn run_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let spec = DatasetSpec {
        seed: cfg.seed,
        ..cfg.synth.clone()
    };
    let truth = write_synthetic_dataset(out, &spec)?;
    let path = out.join("truth.json");
    write_json(&path, &truth)?;
    let mut written: Vec<PathBuf> = Manifest::load(out.join("manifest.json"))?
        .entries
        .iter()
        .map(|e| out.join(&e.path))
        .collect();
    written.push(out.join("manifest.json"));
    written.push(path);
    Ok(written)
}

/// Caps the global worker pool from [`THREADS_ENV`], if set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={value} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}
