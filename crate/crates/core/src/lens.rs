//! Logit-lens readout of intermediate hidden states and exact-match scoring.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{read_amx, read_matrix, Kind, Manifest, Split};
use crate::dynamics::{CheckpointSeries, MetricKind, SeriesPoint};
use crate::error::{invalid, shape, Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Inputs of a per-layer lens readout for one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LensBundle {
    /// Samples × model width.
    pub hidden: DMatrix<f64>,
    pub norm_gain: DVector<f64>,
    /// Vocabulary × model width.
    pub unembed: DMatrix<f64>,
    pub gold: Vec<usize>,
    pub eps: f64,
    /// Apply the final RMS norm before unembedding.
    pub apply_norm: bool,
}

impl LensBundle {
    pub fn new(
        hidden: DMatrix<f64>,
        norm_gain: DVector<f64>,
        unembed: DMatrix<f64>,
        gold: Vec<usize>,
    ) -> Result<Self> {
        let b = Self {
            hidden,
            norm_gain,
            unembed,
            gold,
            eps: DEFAULT_EPS,
            apply_norm: true,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hidden.ncols();
        if self.norm_gain.len() != d || self.unembed.ncols() != d {
            return Err(shape(format!(
                "hidden width {d}, norm gain length {}, unembedding width {}",
                self.norm_gain.len(),
                self.unembed.ncols()
            )));
        }
        if self.gold.len() != self.hidden.nrows() {
            return Err(shape(format!(
                "{} gold tokens for {} samples",
                self.gold.len(),
                self.hidden.nrows()
            )));
        }
        if let Some(g) = self.gold.iter().find(|&&g| g >= self.unembed.nrows()) {
            return Err(invalid(format!(
                "gold token {g} outside vocabulary of {}",
                self.unembed.nrows()
            )));
        }
        if !(self.eps >= 0.0) {
            return Err(invalid("norm epsilon must be nonnegative"));
        }
        Ok(())
    }
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Predicted token per sample: RMS-normalize, scale by the gain, project
/// onto the vocabulary and take the argmax.
pub fn lens_project(bundle: &LensBundle) -> Result<Vec<usize>> {
    bundle.validate()?;
    let d = bundle.hidden.ncols() as f64;
    Ok((0..bundle.hidden.nrows())
        .into_par_iter()
        .map(|s| {
            let h = bundle.hidden.row(s).transpose();
            let normed = if bundle.apply_norm {
                let rms = (h.norm_squared() / d + bundle.eps).sqrt();
                (h / rms).component_mul(&bundle.norm_gain)
            } else {
                h
            };
            argmax((&bundle.unembed * normed).iter().copied())
        })
        .collect())
}

pub fn layer_accuracy(bundle: &LensBundle) -> Result<f64> {
    if bundle.hidden.nrows() == 0 {
        return Err(invalid("lens bundle has no samples"));
    }
    let pred = lens_project(bundle)?;
    let hits = pred.iter().zip(&bundle.gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Fraction of outputs equal to their gold answer after trimming
/// surrounding whitespace. Case-sensitive.
pub fn exact_match_score<S: AsRef<str>, T: AsRef<str>>(outputs: &[S], golds: &[T]) -> Result<f64> {
    if outputs.len() != golds.len() {
        return Err(shape(format!(
            "{} outputs for {} gold answers",
            outputs.len(),
            golds.len()
        )));
    }
    if outputs.is_empty() {
        return Err(invalid("nothing to score"));
    }
    let hits = outputs
        .iter()
        .zip(golds)
        .filter(|(o, g)| o.as_ref().trim() == g.as_ref().trim())
        .count();
    Ok(hits as f64 / outputs.len() as f64)
}

/// Label of the 1-D answer file holding gold token ids for `task`.
pub fn gold_label(task: &str) -> String {
    format!("{task}.gold")
}

pub fn load_bundle(
    manifest: &Manifest,
    checkpoint_id: &str,
    layer: usize,
    task: &str,
    apply_norm: bool,
) -> Result<LensBundle> {
    let hidden = read_matrix(
        manifest.resolve(manifest.find(checkpoint_id, Some(layer), Kind::Hidden, task, Split::Train)?),
    )?;
    let per_ckpt = |kind: Kind| {
        manifest
            .entries_of(kind)
            .find(|e| e.meta.checkpoint_id == checkpoint_id)
            .ok_or_else(|| {
                Error::MissingData(format!("no {kind:?} entry for checkpoint '{checkpoint_id}'"))
            })
    };
    let gain = read_amx(manifest.resolve(per_ckpt(Kind::Normgain)?))?.to_vec();
    let unembed = read_matrix(manifest.resolve(per_ckpt(Kind::Unembed)?))?;
    let label = gold_label(task);
    let gold_entry = manifest
        .entries_of(Kind::Answer)
        .find(|e| e.meta.group_label == label)
        .ok_or_else(|| Error::MissingData(format!("no gold tokens for task '{task}'")))?;
    let gold = read_amx(manifest.resolve(gold_entry))?
        .to_vec()
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(invalid(format!("gold token id {v} is not a nonnegative integer")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut b = LensBundle::new(hidden, DVector::from_vec(gain), unembed, gold)?;
    b.apply_norm = apply_norm;
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LensConfig {
    pub apply_norm: bool,
}

impl Default for LensConfig {
    fn default() -> Self {
        Self { apply_norm: true }
    }
}

/// Lens accuracy of one layer at every checkpoint.
pub fn lens_series(manifest: &Manifest, layer: usize, task: &str, cfg: LensConfig) -> Result<CheckpointSeries> {
    let points = manifest
        .checkpoints()
        .iter()
        .map(|c| {
            let b = load_bundle(manifest, c.id, layer, task, cfg.apply_norm)?;
            Ok(SeriesPoint {
                checkpoint_id: c.id.to_string(),
                training_tokens: c.training_tokens,
                value: layer_accuracy(&b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CheckpointSeries::new(
        MetricKind::BenchmarkAccuracy,
        format!("{}_{task}_L{layer}", MetricKind::BenchmarkAccuracy.as_str()),
        points,
    )
}
