//! Train/test splits and grouped cross-validation folds.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Group label for each entry of `train_indices`, in the same order.
    pub group_of: Vec<String>,
}

/// Row indices of one cross-validation fold, relative to the training matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupFold {
    pub train_groups: Vec<String>,
    pub validation_groups: Vec<String>,
}

/// Shuffles `0..num_samples` under `seed` and cuts it at the given
/// train:test ratio. Test size is rounded to the nearest sample; both sides
/// keep at least one sample. Indices are returned sorted.
pub fn split_by_ratio(num_samples: usize, ratio: (u32, u32), seed: u64) -> Result<SplitSpec> {
    if num_samples == 0 {
        return Err(invalid("cannot split zero samples"));
    }
    let (a, b) = ratio;
    if a == 0 || b == 0 {
        return Err(invalid(format!("ratio {a}:{b} must have positive parts")));
    }
    let n_test = ((num_samples as f64) * b as f64 / (a + b) as f64).round() as usize;
    if n_test == 0 || n_test >= num_samples {
        return Err(invalid(format!(
            "{num_samples} samples are too few for a {a}:{b} split"
        )));
    }
    let mut order: Vec<usize> = (0..num_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_indices = order[..n_test].to_vec();
    let mut train_indices = order[n_test..].to_vec();
    test_indices.sort_unstable();
    train_indices.sort_unstable();
    let group_of = vec![String::new(); train_indices.len()];
    Ok(SplitSpec {
        train_indices,
        test_indices,
        group_of,
    })
}

impl SplitSpec {
    /// Assigns group labels to the training indices. `labels` is indexed by
    /// original sample index.
    pub fn with_groups(mut self, labels: &[String]) -> Result<Self> {
        self.group_of = self
            .train_indices
            .iter()
            .map(|&i| {
                labels
                    .get(i)
                    .cloned()
                    .ok_or_else(|| invalid(format!("no group label for sample {i}")))
            })
            .collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn groups(&self) -> Vec<String> {
        self.group_of
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Distinct labels sorted lexicographically, dealt round-robin into `folds`
/// validation sets.
pub fn group_folds(spec: &SplitSpec, folds: usize) -> Result<Vec<GroupFold>> {
    deal_groups(&spec.groups(), folds)
}

fn deal_groups(groups: &[String], folds: usize) -> Result<Vec<GroupFold>> {
    if folds == 0 {
        return Err(invalid("need at least one fold"));
    }
    if groups.len() < folds {
        return Err(invalid(format!(
            "{} distinct groups cannot fill {folds} folds",
            groups.len()
        )));
    }
    Ok((0..folds)
        .map(|f| {
            let (validation_groups, train_groups) = groups
                .iter()
                .enumerate()
                .partition::<Vec<_>, _>(|(i, _)| i % folds == f);
            GroupFold {
                train_groups: train_groups.into_iter().map(|(_, g)| g.clone()).collect(),
                validation_groups: validation_groups
                    .into_iter()
                    .map(|(_, g)| g.clone())
                    .collect(),
            }
        })
        .collect())
}

/// Grouped folds over training rows labelled by `row_groups`.
pub fn row_group_folds(row_groups: &[String], folds: usize) -> Result<Vec<Fold>> {
    let groups: Vec<String> = row_groups
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gf = deal_groups(&groups, folds)?;
    Ok(gf
        .iter()
        .map(|g| {
            let (validation, train) = (0..row_groups.len())
                .partition(|&r| g.validation_groups.contains(&row_groups[r]));
            Fold { train, validation }
        })
        .collect())
}

/// Complement folds from a partition of row indices: each block becomes the
/// validation set once.
pub fn folds_from_partition(blocks: &[Vec<usize>]) -> Vec<Fold> {
    (0..blocks.len())
        .map(|v| {
            let mut train: Vec<usize> = blocks
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != v)
                .flat_map(|(_, b)| b.iter().copied())
                .collect();
            train.sort_unstable();
            let mut validation = blocks[v].clone();
            validation.sort_unstable();
            Fold { train, validation }
        })
        .collect()
}
