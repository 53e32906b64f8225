//! Probing: ridge maps from multiple-choice answer matrices to per-neuron
//! activations, scored by held-out correlation per neuron.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{folds_from_partition, read_amx, read_matrix, split_by_ratio, Kind, Manifest, Split};
use crate::dynamics::{csv_err, format_value, CheckpointSeries, MetricKind, SeriesPoint};
use crate::error::{invalid, shape, Error, Result};
use crate::ridge::{default_grid, fit_ridge_cv, predict, CvSweep, RidgeFit, RidgeOptions};
use crate::stats::{column_correlations, pearson};

/// Samples × choices indicator matrix with 1 at the correct choice. Rows
/// with fewer choices than columns are zero-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerMatrix {
    pub values: DMatrix<f64>,
    pub choice_count: Vec<usize>,
    pub gold: Vec<usize>,
}

impl AnswerMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn max_choices(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_padded(&self, sample: usize, choice: usize) -> bool {
        choice >= self.choice_count[sample]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
            choice_count: rows.iter().map(|&r| self.choice_count[r]).collect(),
            gold: rows.iter().map(|&r| self.gold[r]).collect(),
        }
    }

    /// Columns holding a real choice in at least one row.
    pub fn used_columns(&self) -> Vec<usize> {
        let widest = self.choice_count.iter().copied().max().unwrap_or(0);
        (0..widest).collect()
    }

    /// On-disk form: padding cells are NaN.
    pub fn to_stored(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_samples(), self.max_choices(), |s, c| {
            if self.is_padded(s, c) {
                f64::NAN
            } else {
                self.values[(s, c)]
            }
        })
    }

    /// Parses the on-disk form, checking one 1 per row within the choices.
    pub fn from_stored(m: &DMatrix<f64>) -> Result<Self> {
        let mut items = Vec::with_capacity(m.nrows());
        for s in 0..m.nrows() {
            let row: Vec<f64> = m.row(s).iter().copied().collect();
            let count = row.iter().take_while(|v| !v.is_nan()).count();
            if row[count..].iter().any(|v| !v.is_nan()) {
                return Err(invalid(format!("answer row {s} has a choice after padding")));
            }
            if row[..count].iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(invalid(format!("answer row {s} is not binary")));
            }
            let ones: Vec<usize> = (0..count).filter(|&c| row[c] == 1.0).collect();
            if ones.len() != 1 {
                return Err(invalid(format!(
                    "answer row {s} marks {} correct choices",
                    ones.len()
                )));
            }
            items.push((count, ones[0]));
        }
        build_answer_matrix(&items, m.ncols())
    }
}

/// Builds the indicator matrix from `(choice_count, gold_index)` pairs.
pub fn build_answer_matrix(samples: &[(usize, usize)], c_max: usize) -> Result<AnswerMatrix> {
    let mut values = DMatrix::zeros(samples.len(), c_max);
    for (s, &(count, gold)) in samples.iter().enumerate() {
        if count == 0 || count > c_max {
            return Err(invalid(format!(
                "sample {s} has {count} choices, allowed 1..={c_max}"
            )));
        }
        if gold >= count {
            return Err(invalid(format!(
                "sample {s}: gold index {gold} out of range for {count} choices"
            )));
        }
        values[(s, gold)] = 1.0;
    }
    Ok(AnswerMatrix {
        values,
        choice_count: samples.iter().map(|s| s.0).collect(),
        gold: samples.iter().map(|s| s.1).collect(),
    })
}

/// Shuffles `indices` under `seed` and cuts them into `k` contiguous blocks
/// whose sizes differ by at most one.
pub fn shuffled_kfold(indices: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > indices.len() {
        return Err(invalid(format!(
            "cannot cut {} indices into {k} folds",
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (indices.len() / k, indices.len() % k);
    let mut out = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        out.push(shuffled[at..at + size].to_vec());
        at += size;
    }
    Ok(out)
}

/// Largest deviation, over folds and labels, of a fold's label count from
/// an even share. Logs a warning when it exceeds one sample.
pub fn fold_balance(blocks: &[Vec<usize>], labels: &[String]) -> f64 {
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *totals.entry(l).or_default() += 1;
    }
    let k = blocks.len() as f64;
    let mut worst: f64 = 0.0;
    for block in blocks {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in block {
            *counts.entry(&labels[i]).or_default() += 1;
        }
        for (l, &total) in &totals {
            let have = counts.get(l).copied().unwrap_or(0) as f64;
            worst = worst.max((have - total as f64 / k).abs());
        }
    }
    if worst > 1.0 {
        warn!("fold label counts deviate from an even split by up to {worst:.1} samples");
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub grid: Vec<f64>,
    pub folds: usize,
    /// Train:test ratio of the sample split.
    pub ratio: (u32, u32),
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            folds: 4,
            ratio: (4, 1),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub ridge: RidgeFit,
    pub sweep: CvSweep,
    /// Answer columns used as features.
    pub columns: Vec<usize>,
}

/// Answer features to every neuron; per-neuron penalty by shuffled k-fold
/// CV. Features are centered but not scaled.
pub fn fit_probe(
    answers: &AnswerMatrix,
    acts: &DMatrix<f64>,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<ProbeFit> {
    if answers.n_samples() != acts.nrows() {
        return Err(shape(format!(
            "{} answer rows for {} activation rows",
            answers.n_samples(),
            acts.nrows()
        )));
    }
    if acts.ncols() == 0 {
        return Err(invalid("no neurons to probe"));
    }
    let columns = answers.used_columns();
    let x = answers.values.select_columns(&columns);
    let indices: Vec<usize> = (0..x.nrows()).collect();
    let folds = folds_from_partition(&shuffled_kfold(&indices, k, seed)?);
    let (ridge, sweep) = fit_ridge_cv(&x, acts, grid, &folds, RidgeOptions::CENTER)?;
    Ok(ProbeFit {
        ridge,
        sweep,
        columns,
    })
}

pub const HIST_BINS: usize = 200;

/// Bin of width 0.01 over [-1, 1]; `1.0` falls in the last bin. Values on
/// an edge up to rounding error go to the bin starting there.
pub fn hist_bin(r: f64) -> usize {
    let v = r * 100.0;
    let nearest = v.round();
    let edge = if (v - nearest).abs() < 1e-9 { nearest } else { v.floor() };
    (edge + 100.0).clamp(0.0, (HIST_BINS - 1) as f64) as usize
}

pub fn histogram(r: &[f64]) -> Vec<u64> {
    let mut h = vec![0; HIST_BINS];
    for &v in r {
        h[hist_bin(v)] += 1;
    }
    h
}

/// Left edge of bin `i`.
pub fn bin_left(i: usize) -> f64 {
    (i as f64 - 100.0) / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub checkpoint_id: String,
    pub training_tokens: u64,
    pub layer: usize,
    pub task: String,
    pub r: Vec<f64>,
    pub lambda: Vec<f64>,
    pub histogram: Vec<u64>,
    pub mean_r: f64,
}

impl ProbeResult {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["neuron_index", "r", "lambda"])
            .map_err(|e| csv_err(path, e))?;
        for (i, (r, l)) in self.r.iter().zip(&self.lambda).enumerate() {
            w.write_record([i.to_string(), format_value(*r), format_value(*l)])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_histogram_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["bin_left", "count"]).map_err(|e| csv_err(path, e))?;
        for (i, c) in self.histogram.iter().enumerate() {
            w.write_record([format!("{:.2}", bin_left(i)), c.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Identifies one probing evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeTag {
    pub checkpoint_id: String,
    pub training_tokens: u64,
    pub layer: usize,
    pub task: String,
}

/// Split samples, fit on the training share and correlate per neuron on
/// the held-out share.
pub fn evaluate_probe(
    answers: &AnswerMatrix,
    acts: &DMatrix<f64>,
    cfg: &ProbeConfig,
    tag: ProbeTag,
) -> Result<ProbeResult> {
    let split = split_by_ratio(answers.n_samples(), cfg.ratio, cfg.seed)?;
    let a_train = answers.select_rows(&split.train_indices);
    let a_test = answers.select_rows(&split.test_indices);
    let fit = fit_probe(
        &a_train,
        &acts.select_rows(&split.train_indices),
        &cfg.grid,
        cfg.folds,
        cfg.seed,
    )?;
    let pred = predict(&fit.ridge, &a_test.values.select_columns(&fit.columns))?;
    let r: Vec<f64> = column_correlations(&pred, &acts.select_rows(&split.test_indices))?
        .into_iter()
        .map(|c| c.r)
        .collect();
    let mean_r = r.iter().sum::<f64>() / r.len() as f64;
    Ok(ProbeResult {
        checkpoint_id: tag.checkpoint_id,
        training_tokens: tag.training_tokens,
        layer: tag.layer,
        task: tag.task,
        histogram: histogram(&r),
        lambda: fit.ridge.lambdas.clone(),
        r,
        mean_r,
    })
}

pub fn load_answers(manifest: &Manifest, task: &str) -> Result<AnswerMatrix> {
    let e = manifest
        .entries_of(Kind::Answer)
        .find(|e| e.meta.group_label == task)
        .ok_or_else(|| Error::MissingData(format!("no answer matrix for task '{task}'")))?;
    let amx = read_amx(manifest.resolve(e))?;
    if amx.ndim() != 2 {
        return Err(shape(format!(
            "answer matrix for task '{task}' has {} dimensions",
            amx.ndim()
        )));
    }
    AnswerMatrix::from_stored(&amx.to_matrix()?)
}

/// One probe result per checkpoint, in training order.
pub fn probe_results(
    manifest: &Manifest,
    layer: usize,
    task: &str,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeResult>> {
    let answers = load_answers(manifest, task)?;
    let checkpoints = manifest.checkpoints();
    if checkpoints.is_empty() {
        return Err(Error::MissingData("manifest lists no checkpoints".into()));
    }
    checkpoints
        .iter()
        .map(|c| {
            let e = manifest.find(c.id, Some(layer), Kind::Activation, task, Split::Train)?;
            let acts = read_matrix(manifest.resolve(e))?;
            evaluate_probe(
                &answers,
                &acts,
                cfg,
                ProbeTag {
                    checkpoint_id: c.id.to_string(),
                    training_tokens: c.training_tokens,
                    layer,
                    task: task.to_string(),
                },
            )
        })
        .collect()
}

pub fn probe_series(results: &[ProbeResult], layer: usize, task: &str) -> Result<CheckpointSeries> {
    CheckpointSeries::new(
        MetricKind::ProbingMeanR,
        format!("{}_{task}_L{layer}", MetricKind::ProbingMeanR.as_str()),
        results
            .iter()
            .map(|r| SeriesPoint {
                checkpoint_id: r.checkpoint_id.clone(),
                training_tokens: r.training_tokens,
                value: r.mean_r,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTask {
    pub task_a: String,
    pub task_b: String,
    pub pairs: Vec<(f64, f64)>,
    pub r: f64,
}

/// Per-neuron accuracies of two tasks paired by neuron index.
pub fn cross_task_scatter(a: &ProbeResult, b: &ProbeResult) -> Result<CrossTask> {
    if a.r.len() != b.r.len() {
        return Err(shape(format!(
            "neuron counts differ: {} and {}",
            a.r.len(),
            b.r.len()
        )));
    }
    if a.checkpoint_id != b.checkpoint_id || a.layer != b.layer {
        return Err(invalid("cross-task comparison needs the same checkpoint and layer"));
    }
    Ok(CrossTask {
        task_a: a.task.clone(),
        task_b: b.task.clone(),
        pairs: a.r.iter().copied().zip(b.r.iter().copied()).collect(),
        r: pearson(&a.r, &b.r)?.r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{randn, rng};
    use proptest::prelude::*;

    #[test]
    fn answer_rows() {
        let a = build_answer_matrix(&[(4, 2), (1, 0)], 4).unwrap();
        assert_eq!(a.values.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(a.values.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert!(a.is_padded(1, 1) && !a.is_padded(0, 3));
        assert!(build_answer_matrix(&[(4, 5)], 4).is_err());
        assert!(build_answer_matrix(&[(5, 0)], 4).is_err());
    }

    #[test]
    fn stored_form_round_trips() {
        let a = build_answer_matrix(&[(4, 2), (3, 0), (2, 1)], 4).unwrap();
        let stored = a.to_stored();
        assert!(stored[(1, 3)].is_nan());
        assert_eq!(AnswerMatrix::from_stored(&stored).unwrap(), a);
        let mut bad = stored.clone();
        bad[(0, 0)] = 1.0;
        assert!(AnswerMatrix::from_stored(&bad).is_err());
    }

    #[test]
    fn kfold_examples() {
        let idx: Vec<usize> = (0..8).collect();
        let folds = shuffled_kfold(&idx, 4, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, idx);
        assert_eq!(folds, shuffled_kfold(&idx, 4, 1).unwrap());
        assert!(shuffled_kfold(&idx[..3], 4, 1).is_err());
    }

    #[test]
    fn histogram_binning() {
        assert_eq!(hist_bin(-1.0), 0);
        assert_eq!(hist_bin(1.0), 199);
        assert_eq!(hist_bin(0.0), 100);
        assert_eq!(hist_bin(0.29), 129);
        assert_eq!(hist_bin(0.005), 100);
        assert_eq!(hist_bin(-0.005), 99);
        for i in 0..HIST_BINS {
            assert_eq!(hist_bin(bin_left(i)), i);
            assert_eq!(format!("{:.2}", bin_left(i)).parse::<f64>().unwrap(), bin_left(i));
        }
    }

    fn planted(seed: u64, n_samples: usize, neurons: usize, snr: f64) -> (AnswerMatrix, DMatrix<f64>) {
        let mut g = rng(seed);
        let items: Vec<(usize, usize)> = (0..n_samples)
            .map(|_| (4, rand::Rng::random_range(&mut g, 0..4)))
            .collect();
        let a = build_answer_matrix(&items, 4).unwrap();
        let m = randn(4, neurons, &mut g);
        let signal = &a.values * m;
        let mut acts = signal.clone();
        if snr.is_finite() {
            let noise = randn(n_samples, neurons, &mut g);
            for j in 0..neurons {
                let sd = (crate::synth::variance(signal.column(j).iter()) / snr).sqrt();
                let nsd = crate::synth::variance(noise.column(j).iter()).sqrt();
                for s in 0..n_samples {
                    acts[(s, j)] += noise[(s, j)] / nsd * sd;
                }
            }
        } else {
            acts = randn(n_samples, neurons, &mut g);
        }
        (a, acts)
    }

    fn tag() -> ProbeTag {
        ProbeTag {
            checkpoint_id: "c".into(),
            training_tokens: 1,
            layer: 0,
            task: "t".into(),
        }
    }

    #[test]
    fn planted_signal_is_recovered() {
        let (a, acts) = planted(5, 500, 50, 4.0);
        let res = evaluate_probe(&a, &acts, &ProbeConfig::default(), tag()).unwrap();
        assert!(res.mean_r > 0.6, "mean r {}", res.mean_r);
        assert_eq!(res.histogram.iter().sum::<u64>(), 50);
        let from_hist: f64 = res
            .histogram
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (bin_left(i) + 0.005))
            .sum::<f64>()
            / 50.0;
        assert!((from_hist - res.mean_r).abs() <= 0.005);
    }

    #[test]
    fn duplicated_neuron_gets_identical_results() {
        let (a, acts) = planted(6, 200, 3, 2.0);
        let mut dup = DMatrix::zeros(200, 4);
        dup.columns_mut(0, 3).copy_from(&acts);
        dup.set_column(3, &acts.column(1));
        let res = evaluate_probe(&a, &dup, &ProbeConfig::default(), tag()).unwrap();
        assert_eq!(res.r[1], res.r[3]);
        assert_eq!(res.lambda[1], res.lambda[3]);
    }

    #[test]
    fn neuron_permutation_permutes_results() {
        let (a, acts) = planted(7, 200, 6, 1.0);
        let perm = [3, 0, 5, 1, 4, 2];
        let shuffled = acts.select_columns(&perm);
        let cfg = ProbeConfig::default();
        let base = evaluate_probe(&a, &acts, &cfg, tag()).unwrap();
        let moved = evaluate_probe(&a, &shuffled, &cfg, tag()).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(moved.r[i], base.r[p]);
            assert_eq!(moved.lambda[i], base.lambda[p]);
        }
    }

    #[test]
    fn cross_task_examples() {
        let mk = |task: &str, r: Vec<f64>| ProbeResult {
            checkpoint_id: "c".into(),
            training_tokens: 1,
            layer: 0,
            task: task.into(),
            histogram: histogram(&r),
            lambda: vec![1.0; r.len()],
            mean_r: 0.0,
            r,
        };
        let a = mk("a", vec![0.1, 0.2, 0.6]);
        assert_eq!(cross_task_scatter(&a, &a).unwrap().r, 1.0);
        let b = mk("b", vec![0.3, 0.1, 0.2]);
        // Hand Pearson: centered a = (-0.2, -0.1, 0.3), b = (0.1, -0.1, 0)
        // sum ab = -0.01, |a|^2 = 0.14, |b|^2 = 0.02
        let expect = -0.01 / (0.14f64 * 0.02).sqrt();
        assert!((cross_task_scatter(&a, &b).unwrap().r - expect).abs() < 1e-12);
        assert!(cross_task_scatter(&a, &mk("c", vec![0.0; 2])).is_err());
    }

    #[test]
    fn balance_of_even_folds() {
        let labels: Vec<String> = (0..16).map(|i| format!("s{}", i % 2)).collect();
        let blocks = vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9, 10, 11], vec![12, 13, 14, 15]];
        assert_eq!(fold_balance(&blocks, &labels), 0.0);
    }

    proptest! {
        #[test]
        fn answer_rows_sum_to_one(items in proptest::collection::vec((1usize..6, 0usize..6), 1..20)) {
            let items: Vec<(usize, usize)> = items.into_iter().map(|(c, g)| (c, g % c)).collect();
            let a = build_answer_matrix(&items, 6).unwrap();
            for (s, &(count, _)) in items.iter().enumerate() {
                let sum: f64 = (0..count).map(|c| a.values[(s, c)]).sum();
                prop_assert_eq!(sum, 1.0);
                for c in count..6 {
                    prop_assert_eq!(a.values[(s, c)], 0.0);
                }
            }
        }

        #[test]
        fn fold_sizes_differ_by_at_most_one(n in 4usize..60, k in 2usize..5, seed in 0u64..100) {
            let idx: Vec<usize> = (0..n).collect();
            let folds = shuffled_kfold(&idx, k, seed).unwrap();
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all = folds.concat();
            all.sort();
            prop_assert_eq!(all, idx);
        }
    }
}
