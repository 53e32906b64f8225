//! Pearson correlation, blockwise permutation p-values and Benjamini–Hochberg
//! adjustment.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Either input had zero variance; `r` is then reported as 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation of two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(shape(format!(
            "pearson inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(invalid("pearson needs at least two samples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("pearson inputs must be finite"));
    }
    Ok(pearson_unchecked(x.iter().copied(), y.iter().copied(), x.len()))
}

pub(crate) fn pearson_unchecked<I, J>(x: I, y: J, n: usize) -> Correlation
where
    I: Iterator<Item = f64> + Clone,
    J: Iterator<Item = f64> + Clone,
{
    let mx = x.clone().sum::<f64>() / n as f64;
    let my = y.clone().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if !(sxx > 0.0 && syy > 0.0) || is_negligible(sxx, mx, n) || is_negligible(syy, my, n) {
        return Correlation {
            r: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

// A constant series whose mean is not exactly representable leaves rounding
// residue in its sum of squares.
fn is_negligible(ss: f64, mean: f64, n: usize) -> bool {
    ss.sqrt() <= 1e-12 * mean.abs() * (n as f64).sqrt()
}

/// Correlation of matching columns of two equally shaped matrices.
pub fn column_correlations(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<Correlation>> {
    if a.shape() != b.shape() {
        return Err(shape(format!(
            "column correlation of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.nrows() < 2 {
        return Err(invalid("column correlation needs at least two rows"));
    }
    Ok((0..a.ncols())
        .map(|c| {
            pearson_unchecked(
                a.column(c).iter().copied(),
                b.column(c).iter().copied(),
                a.nrows(),
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermConfig {
    pub block_len: usize,
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for PermConfig {
    fn default() -> Self {
        Self {
            block_len: 10,
            n_perm: 1000,
            seed: 0,
        }
    }
}

impl PermConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_len < 1 {
            return Err(invalid("block_len must be at least 1"));
        }
        if self.n_perm < 100 {
            return Err(invalid(format!(
                "n_perm must be at least 100, got {}",
                self.n_perm
            )));
        }
        Ok(())
    }
}

/// Per-target outcome of the one-sided (greater) permutation test.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult {
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    pub degenerate: Vec<bool>,
}

/// Row order of the `draw`-th block permutation of a length-`t` series.
///
/// The series is cut into `ceil(t / block_len)` contiguous blocks (the last
/// one may be short) whose order is shuffled uniformly. Draw `i` uses ChaCha8
/// seeded with `seed` on stream `i`, so any draw can be regenerated on its own.
pub fn block_permutation(t: usize, block_len: usize, seed: u64, draw: u64) -> Vec<usize> {
    let n_blocks = t.div_ceil(block_len);
    let mut blocks: Vec<usize> = (0..n_blocks).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    blocks.shuffle(&mut rng);
    blocks
        .into_iter()
        .flat_map(|b| b * block_len..((b + 1) * block_len).min(t))
        .collect()
}

/// Blockwise permutation p-values for the correlation between each column of
/// `pred` and the matching column of `meas`.
///
/// Every draw applies the same block order to all targets. The p-value is
/// `(1 + #{r_null >= r_obs}) / (1 + n_perm)`; zero-variance targets get
/// `p = 1` and are flagged degenerate.
pub fn block_permutation_pvalues(
    pred: &DMatrix<f64>,
    meas: &DMatrix<f64>,
    cfg: &PermConfig,
) -> Result<PermutationResult> {
    cfg.validate()?;
    if pred.shape() != meas.shape() {
        return Err(shape(format!(
            "prediction {:?} vs measurement {:?}",
            pred.shape(),
            meas.shape()
        )));
    }
    let (t, v) = pred.shape();
    if t < 2 * cfg.block_len {
        return Err(invalid(format!(
            "{t} samples do not span two blocks of {}",
            cfg.block_len
        )));
    }
    if pred.iter().chain(meas.iter()).any(|x| !x.is_finite()) {
        return Err(invalid("permutation test inputs must be finite"));
    }

    // Unit-norm centered columns turn each correlation into a dot product,
    // and permuting rows of `meas` preserves its mean and norm.
    let zp = unit_columns(pred);
    let zm = unit_columns(meas);
    let degenerate: Vec<bool> = (0..v).map(|c| zp[c].is_none() || zm[c].is_none()).collect();
    let identity: Vec<usize> = (0..t).collect();
    let r_obs: Vec<f64> = (0..v)
        .map(|c| permuted_dot(&zp[c], &zm[c], &identity))
        .collect();

    let exceed = (0..cfg.n_perm as u64)
        .into_par_iter()
        .fold(
            || vec![0u64; v],
            |mut counts, draw| {
                let order = block_permutation(t, cfg.block_len, cfg.seed, draw);
                for c in 0..v {
                    if !degenerate[c] && permuted_dot(&zp[c], &zm[c], &order) >= r_obs[c] {
                        counts[c] += 1;
                    }
                }
                counts
            },
        )
        .reduce(
            || vec![0u64; v],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let denom = (cfg.n_perm + 1) as f64;
    let p = (0..v)
        .map(|c| {
            if degenerate[c] {
                1.0
            } else {
                (1 + exceed[c]) as f64 / denom
            }
        })
        .collect();
    let r = (0..v)
        .map(|c| if degenerate[c] { 0.0 } else { r_obs[c].clamp(-1.0, 1.0) })
        .collect();
    Ok(PermutationResult { r, p, degenerate })
}

fn unit_columns(m: &DMatrix<f64>) -> Vec<Option<Vec<f64>>> {
    let n = m.nrows();
    m.column_iter()
        .map(|col| {
            let mean = col.sum() / n as f64;
            let centered: Vec<f64> = col.iter().map(|x| x - mean).collect();
            let ss: f64 = centered.iter().map(|x| x * x).sum();
            if ss <= 0.0 || is_negligible(ss, mean, n) {
                None
            } else {
                let norm = ss.sqrt();
                Some(centered.into_iter().map(|x| x / norm).collect())
            }
        })
        .collect()
}

fn permuted_dot(a: &Option<Vec<f64>>, b: &Option<Vec<f64>>, order: &[usize]) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => a.iter().zip(order).map(|(x, &i)| x * b[i]).sum(),
        _ => 0.0,
    }
}

/// Benjamini–Hochberg step-up adjusted values, in input order.
pub fn bh_fdr(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
        return Err(invalid(format!("p-value {bad} outside (0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(m as f64 * p[i] / (rank + 1) as f64);
        q[i] = running;
    }
    Ok(q)
}

/// Combined per-target significance summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceResult {
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub significant: Vec<bool>,
    pub degenerate: Vec<bool>,
}

/// Permutation test followed by FDR adjustment at level `alpha`.
pub fn significance(
    pred: &DMatrix<f64>,
    meas: &DMatrix<f64>,
    cfg: &PermConfig,
    alpha: f64,
) -> Result<SignificanceResult> {
    let perm = block_permutation_pvalues(pred, meas, cfg)?;
    let q = bh_fdr(&perm.p)?;
    let significant = q
        .iter()
        .zip(&perm.degenerate)
        .map(|(&q, &d)| !d && q <= alpha)
        .collect();
    Ok(SignificanceResult {
        r: perm.r,
        p: perm.p,
        q,
        significant,
        degenerate: perm.degenerate,
    })
}
