//! Voxelwise encoding models: delayed activations to target responses,
//! grouped cross-validation, held-out correlation and significance.

use std::collections::BTreeSet;
use std::path::Path;

use log::info;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datastore::{read_matrix, row_group_folds, Kind, Manifest, Split};
use crate::dynamics::{csv_err, format_value, CheckpointSeries, MetricKind, SeriesPoint};
use crate::error::{invalid, shape, Error, Result};
use crate::ridge::{
    default_grid, delay_embed, fit_ridge_cv, predict, CvSweep, DelaySpec, RidgeFit, RidgeOptions,
};
use crate::stats::{significance, PermConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub delays: DelaySpec,
    pub grid: Vec<f64>,
    pub folds: usize,
    pub perm: PermConfig,
    pub alpha: f64,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            delays: DelaySpec::default(),
            grid: default_grid(),
            folds: 4,
            perm: PermConfig::default(),
            alpha: 0.05,
        }
    }
}

/// Delay-embeds each contiguous run of rows sharing a group label on its
/// own, so no delayed copy reaches across a run boundary.
pub fn delay_embed_runs(x: &DMatrix<f64>, groups: &[String], delays: &DelaySpec) -> Result<DMatrix<f64>> {
    if groups.len() != x.nrows() {
        return Err(shape(format!(
            "{} group labels for {} rows",
            groups.len(),
            x.nrows()
        )));
    }
    let mut out = DMatrix::zeros(x.nrows(), x.ncols() * delays.len());
    let mut start = 0;
    while start < groups.len() {
        let mut end = start + 1;
        while end < groups.len() && groups[end] == groups[start] {
            end += 1;
        }
        let block = delay_embed(&x.rows(start, end - start).into_owned(), delays)?;
        out.rows_mut(start, end - start).copy_from(&block);
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingFit {
    pub ridge: RidgeFit,
    pub sweep: CvSweep,
    pub delays: DelaySpec,
}

/// Delay embedding, grouped-CV penalty selection and refit on all training
/// rows. `groups` labels every training row; contiguous equal labels form
/// one run.
pub fn fit_encoding(
    x_train: &DMatrix<f64>,
    y_train: &DMatrix<f64>,
    groups: &[String],
    cfg: &EncodingConfig,
) -> Result<EncodingFit> {
    if x_train.nrows() != y_train.nrows() {
        return Err(shape(format!(
            "{} activation rows for {} target rows",
            x_train.nrows(),
            y_train.nrows()
        )));
    }
    let xd = delay_embed_runs(x_train, groups, &cfg.delays)?;
    let folds = row_group_folds(groups, cfg.folds)?;
    let (ridge, sweep) = fit_ridge_cv(&xd, y_train, &cfg.grid, &folds, RidgeOptions::ZSCORE)?;
    Ok(EncodingFit {
        ridge,
        sweep,
        delays: cfg.delays.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingResult {
    pub checkpoint_id: String,
    pub training_tokens: u64,
    pub layer: usize,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    pub significant: Vec<bool>,
    pub mean_r_all: f64,
    /// `None` when no target is significant.
    pub mean_r_sig: Option<f64>,
}

impl EncodingResult {
    pub fn n_significant(&self) -> usize {
        self.significant.iter().filter(|&&s| s).count()
    }

    /// Per-target table followed by a summary row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        w.write_record(["voxel", "r", "p", "q", "lambda", "significant"])
            .map_err(|e| csv_err(path, e))?;
        for v in 0..self.r.len() {
            w.write_record([
                v.to_string(),
                format_value(self.r[v]),
                format_value(self.p[v]),
                format_value(self.q[v]),
                format_value(self.lambda[v]),
                self.significant[v].to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.write_record([
            "summary".to_string(),
            format!("mean_r_all={}", format_value(self.mean_r_all)),
            format!(
                "mean_r_sig={}",
                self.mean_r_sig.map_or("NA".to_string(), format_value)
            ),
            format!("n_significant={}", self.n_significant()),
            format!("fdr_scope={FDR_SCOPE}"),
        ])
        .map_err(|e| csv_err(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Voxels sharing one Benjamini–Hochberg correction: all targets of a
/// single checkpoint, layer and participant.
pub const FDR_SCOPE: &str = "checkpoint_layer_participant";

/// Identifies the model state an evaluation belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointTag {
    pub checkpoint_id: String,
    pub training_tokens: u64,
    pub layer: usize,
}

/// Held-out correlation per target, block-permutation p-values, FDR
/// q-values and significance at `cfg.alpha`. `test_groups` labels the test
/// rows for run-wise delay embedding.
pub fn evaluate_encoding(
    fit: &EncodingFit,
    x_test: &DMatrix<f64>,
    y_test: &DMatrix<f64>,
    test_groups: &[String],
    cfg: &EncodingConfig,
    tag: CheckpointTag,
) -> Result<EncodingResult> {
    if x_test.nrows() != y_test.nrows() {
        return Err(shape(format!(
            "{} test activation rows for {} test target rows",
            x_test.nrows(),
            y_test.nrows()
        )));
    }
    if y_test.ncols() != fit.ridge.n_targets() {
        return Err(shape(format!(
            "{} test targets for a model of {}",
            y_test.ncols(),
            fit.ridge.n_targets()
        )));
    }
    let xd = delay_embed_runs(x_test, test_groups, &fit.delays)?;
    let pred = predict(&fit.ridge, &xd)?;
    let sig = significance(&pred, y_test, &cfg.perm, cfg.alpha)?;
    let mean_r_all = sig.r.iter().sum::<f64>() / sig.r.len() as f64;
    let sig_r: Vec<f64> = sig
        .r
        .iter()
        .zip(&sig.significant)
        .filter(|(_, &s)| s)
        .map(|(&r, _)| r)
        .collect();
    let mean_r_sig = (!sig_r.is_empty()).then(|| sig_r.iter().sum::<f64>() / sig_r.len() as f64);
    Ok(EncodingResult {
        checkpoint_id: tag.checkpoint_id,
        training_tokens: tag.training_tokens,
        layer: tag.layer,
        r: sig.r,
        p: sig.p,
        q: sig.q,
        lambda: fit.ridge.lambdas.clone(),
        significant: sig.significant,
        mean_r_all,
        mean_r_sig,
    })
}

/// Rows of all entries in `groups`, stacked in group order, plus one group
/// label per row.
fn stack_groups(
    groups: &[String],
    mut load: impl FnMut(&str) -> Result<DMatrix<f64>>,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let blocks = groups
        .iter()
        .map(|g| load(g))
        .collect::<Result<Vec<_>>>()?;
    let cols = blocks[0].ncols();
    if let Some(b) = blocks.iter().find(|b| b.ncols() != cols) {
        return Err(shape(format!("run widths {cols} and {} differ", b.ncols())));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut labels = Vec::with_capacity(rows);
    let mut at = 0;
    for (g, b) in groups.iter().zip(&blocks) {
        out.rows_mut(at, b.nrows()).copy_from(b);
        labels.extend(std::iter::repeat_n(g.clone(), b.nrows()));
        at += b.nrows();
    }
    Ok((out, labels))
}

/// Target responses of one participant, split into train and test runs.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub train: DMatrix<f64>,
    pub train_groups: Vec<String>,
    pub test: DMatrix<f64>,
    pub test_groups: Vec<String>,
}

fn target_groups(manifest: &Manifest, participant: Option<&str>, split: Split) -> Vec<String> {
    manifest
        .entries_of(Kind::Target)
        .filter(|e| e.meta.split == split && participant.is_none_or(|p| e.meta.participant.as_deref() == Some(p)))
        .map(|e| e.meta.group_label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn load_targets(manifest: &Manifest, participant: Option<&str>) -> Result<TargetSet> {
    let load = |split: Split| {
        let groups = target_groups(manifest, participant, split);
        if groups.is_empty() {
            return Err(Error::MissingData(format!(
                "no {split:?} target runs for participant {participant:?}"
            )));
        }
        stack_groups(&groups, |g| {
            let entry = manifest
                .entries_of(Kind::Target)
                .find(|e| {
                    e.meta.group_label == g
                        && e.meta.split == split
                        && participant.is_none_or(|p| e.meta.participant.as_deref() == Some(p))
                })
                .expect("group listed from the manifest");
            read_matrix(manifest.resolve(entry))
        })
    };
    let (train, train_groups) = load(Split::Train)?;
    let (test, test_groups) = load(Split::Test)?;
    Ok(TargetSet {
        train,
        train_groups,
        test,
        test_groups,
    })
}

/// Activations of one (checkpoint, layer) stacked over the given runs.
pub fn load_activations(
    manifest: &Manifest,
    checkpoint_id: &str,
    layer: usize,
    groups: &[String],
    split: Split,
) -> Result<DMatrix<f64>> {
    let unique: Vec<String> = dedup_in_order(groups);
    let (m, _) = stack_groups(&unique, |g| {
        let e = manifest.find(checkpoint_id, Some(layer), Kind::Activation, g, split)?;
        read_matrix(manifest.resolve(e))
    })?;
    Ok(m)
}

fn dedup_in_order(labels: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in labels {
        if out.last() != Some(l) {
            out.push(l.clone());
        }
    }
    out
}

/// Per-checkpoint encoding results for one layer, in training order.
pub fn encoding_results(
    manifest: &Manifest,
    layer: usize,
    participant: Option<&str>,
    cfg: &EncodingConfig,
) -> Result<Vec<EncodingResult>> {
    let checkpoints = manifest.checkpoints();
    if checkpoints.len() < 2 {
        return Err(invalid(format!(
            "an encoding series needs at least 2 checkpoints, manifest has {}",
            checkpoints.len()
        )));
    }
    let targets = load_targets(manifest, participant)?;
    checkpoints
        .iter()
        .map(|c| {
            let x_train =
                load_activations(manifest, c.id, layer, &targets.train_groups, Split::Train)?;
            let x_test = load_activations(manifest, c.id, layer, &targets.test_groups, Split::Test)?;
            let fit = fit_encoding(&x_train, &targets.train, &targets.train_groups, cfg)?;
            let res = evaluate_encoding(
                &fit,
                &x_test,
                &targets.test,
                &targets.test_groups,
                cfg,
                CheckpointTag {
                    checkpoint_id: c.id.to_string(),
                    training_tokens: c.training_tokens,
                    layer,
                },
            )?;
            info!(
                "encoding {} layer {layer}: mean r {:.4}, {} significant",
                c.id,
                res.mean_r_all,
                res.n_significant()
            );
            Ok(res)
        })
        .collect()
}

/// Series of mean r over all targets and over significant targets. The
/// second series skips checkpoints with no significant target.
pub fn encoding_series(results: &[EncodingResult], layer: usize) -> Result<(CheckpointSeries, CheckpointSeries)> {
    let all = results
        .iter()
        .map(|r| SeriesPoint {
            checkpoint_id: r.checkpoint_id.clone(),
            training_tokens: r.training_tokens,
            value: r.mean_r_all,
        })
        .collect();
    let sig = results
        .iter()
        .filter_map(|r| {
            r.mean_r_sig.map(|v| SeriesPoint {
                checkpoint_id: r.checkpoint_id.clone(),
                training_tokens: r.training_tokens,
                value: v,
            })
        })
        .collect();
    Ok((
        CheckpointSeries::new(
            MetricKind::EncodingMeanR,
            format!("{}_L{layer}", MetricKind::EncodingMeanR.as_str()),
            all,
        )?,
        CheckpointSeries::new(
            MetricKind::EncodingMeanRSig,
            format!("{}_L{layer}", MetricKind::EncodingMeanRSig.as_str()),
            sig,
        )?,
    ))
}

/// Per-target change in r between two checkpoints, defined where either
/// checkpoint is significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelDelta {
    pub from: String,
    pub to: String,
    pub delta: Vec<Option<f64>>,
    pub significant_from: Vec<bool>,
    pub significant_to: Vec<bool>,
}

impl VoxelDelta {
    pub fn mask(&self) -> Vec<bool> {
        self.delta.iter().map(Option::is_some).collect()
    }
}

pub fn voxel_delta(a: &EncodingResult, b: &EncodingResult) -> Result<VoxelDelta> {
    if a.r.len() != b.r.len() {
        return Err(shape(format!(
            "target counts differ: {} and {}",
            a.r.len(),
            b.r.len()
        )));
    }
    if a.layer != b.layer {
        return Err(invalid(format!(
            "results come from layers {} and {}",
            a.layer, b.layer
        )));
    }
    let delta = (0..a.r.len())
        .map(|v| (a.significant[v] || b.significant[v]).then(|| b.r[v] - a.r[v]))
        .collect();
    Ok(VoxelDelta {
        from: a.checkpoint_id.clone(),
        to: b.checkpoint_id.clone(),
        delta,
        significant_from: a.significant.clone(),
        significant_to: b.significant.clone(),
    })
}
