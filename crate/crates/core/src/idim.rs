//! Intrinsic dimension from nearest-neighbour distance ratios (GRIDE, with
//! TwoNN as the `k = 1` case).
//!
//! For each point the ratio `μ = r_{2k} / r_k` of its `2k`-th to `k`-th
//! neighbour distance follows, under locally uniform density in `d`
//! dimensions, the generalized Pareto law
//!
//! ```text
//! f(μ) = d (μ^d − 1)^(k−1) / (B(k, k) μ^(d(2k−1)+1)),   μ ≥ 1
//! ```
//!
//! The log-likelihood over independent ratios is concave in `d` and is
//! maximized numerically. Note the factor is `(μ^d − 1)^(k−1)`; a variant
//! printed as `(μ^(d−1))^(k−1)` also circulates, which would make the
//! maximizer closed-form. Both agree at `k = 1`.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{invalid, Error, Result};

/// Sorted neighbour distances `r_{i,1..=max_rank}` for every retained point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborDistances {
    pub distances: Vec<Vec<f64>>,
    pub duplicates_dropped: usize,
}

impl NeighborDistances {
    pub fn n(&self) -> usize {
        self.distances.len()
    }
}

/// Removes exact duplicate rows, keeping first occurrences.
pub fn dedup_rows(points: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let mut seen = HashSet::new();
    let keep: Vec<usize> = (0..points.nrows())
        .filter(|&i| {
            let key: Vec<u64> = points
                .row(i)
                .iter()
                .map(|v| if *v == 0.0 { 0u64 } else { v.to_bits() })
                .collect();
            seen.insert(key)
        })
        .collect();
    let dropped = points.nrows() - keep.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} duplicate points before neighbour search");
    }
    (points.select_rows(&keep), dropped)
}

/// Exact brute-force Euclidean neighbour distances, self excluded, ties
/// between neighbours broken by point index.
pub fn knn_distances(points: &DMatrix<f64>, max_rank: usize) -> Result<NeighborDistances> {
    if max_rank == 0 {
        return Err(invalid("max_rank must be positive"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(invalid("points must be finite"));
    }
    let (pts, duplicates_dropped) = dedup_rows(points);
    let n = pts.nrows();
    if n <= max_rank {
        return Err(invalid(format!(
            "{n} distinct points cannot supply {max_rank} neighbours each"
        )));
    }
    let dim = pts.ncols();
    let rows: Vec<f64> = pts.transpose().as_slice().to_vec();
    let row = |i: usize| &rows[i * dim..(i + 1) * dim];

    let distances = (0..n)
        .into_par_iter()
        .map(|i| {
            let q = row(i);
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(max_rank + 1);
            for j in (0..n).filter(|&j| j != i) {
                let d2 = sq_dist(q, row(j));
                if best.len() == max_rank {
                    let last = best[max_rank - 1];
                    if (d2, j) >= last {
                        continue;
                    }
                }
                let pos = best.partition_point(|&e| e < (d2, j));
                best.insert(pos, (d2, j));
                best.truncate(max_rank);
            }
            best.into_iter().map(|(d2, _)| d2.sqrt()).collect()
        })
        .collect();
    Ok(NeighborDistances {
        distances,
        duplicates_dropped,
    })
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ratios `μ_i = r_{i,2k} / r_{i,k}` at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRatios {
    pub k: usize,
    pub mu: Vec<f64>,
    /// Points removed because `μ = 1` (tied distances) made the density zero.
    pub ties_dropped: usize,
}

impl NeighborRatios {
    pub fn new(k: usize, mu: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("scale k must be positive"));
        }
        if let Some(bad) = mu.iter().find(|m| !(m.is_finite() && **m >= 1.0)) {
            return Err(invalid(format!("neighbour ratio {bad} must be finite and >= 1")));
        }
        let before = mu.len();
        let mu: Vec<f64> = if k > 1 {
            mu.into_iter().filter(|&m| m > 1.0).collect()
        } else {
            mu
        };
        let ties_dropped = before - mu.len();
        if ties_dropped > 0 {
            log::warn!("dropped {ties_dropped} points with tied neighbour distances at k = {k}");
        }
        if mu.is_empty() {
            return Err(invalid("no usable neighbour ratios"));
        }
        Ok(Self {
            k,
            mu,
            ties_dropped,
        })
    }

    pub fn from_distances(nd: &NeighborDistances, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("scale k must be positive"));
        }
        let mu = nd
            .distances
            .iter()
            .map(|r| {
                r.get(2 * k - 1)
                    .map(|far| far / r[k - 1])
                    .ok_or_else(|| invalid(format!("distances stop before rank {}", 2 * k)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(k, mu)
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }
}

/// Log-likelihood of dimension `d` for the given ratios.
pub fn gride_loglik(ratios: &NeighborRatios, d: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(invalid(format!("dimension {d} must be positive")));
    }
    Ok(loglik(ratios, d))
}

fn loglik(ratios: &NeighborRatios, d: f64) -> f64 {
    let k = ratios.k as f64;
    let n = ratios.n() as f64;
    let sum_log_mu: f64 = ratios.mu.iter().map(|m| m.ln()).sum();
    let mut l = n * d.ln() - (d * (2.0 * k - 1.0) + 1.0) * sum_log_mu - n * ln_beta(k, k);
    if ratios.k > 1 {
        // ln(μ^d − 1) = a·d + ln(1 − e^{−a·d}) with a = ln μ
        let s: f64 = ratios
            .mu
            .iter()
            .map(|m| {
                let ad = m.ln() * d;
                ad + (-(-ad).exp_m1()).ln()
            })
            .sum();
        l += (k - 1.0) * s;
    }
    l
}

fn loglik_slope(ratios: &NeighborRatios, d: f64) -> f64 {
    let k = ratios.k as f64;
    let n = ratios.n() as f64;
    let sum_log_mu: f64 = ratios.mu.iter().map(|m| m.ln()).sum();
    let mut g = n / d - (2.0 * k - 1.0) * sum_log_mu;
    if ratios.k > 1 {
        let s: f64 = ratios
            .mu
            .iter()
            .map(|m| {
                let a = m.ln();
                a / -(-a * d).exp_m1()
            })
            .sum();
        g += (k - 1.0) * s;
    }
    g
}

/// TwoNN maximum-likelihood dimension `n / Σ ln μ`.
pub fn twonn_closed_form(mu: &[f64]) -> f64 {
    mu.len() as f64 / mu.iter().map(|m| m.ln()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub d_hat: f64,
    pub k: usize,
    pub loglik: f64,
    pub n_used: usize,
    /// The maximum sits on an end of the search bracket.
    pub at_boundary: bool,
}

pub const D_MIN: f64 = 1e-3;
const GOLDEN_TOL: f64 = 1e-7;

/// Maximizes the log-likelihood over `d ∈ (1e-3, d_max]` by golden-section
/// search. The likelihood is concave in `d`, so the slope signs at the two
/// bracket ends tell whether the maximum is interior.
pub fn gride_mle(ratios: &NeighborRatios, d_max: f64) -> Result<IdEstimate> {
    if !(d_max > D_MIN && d_max.is_finite()) {
        return Err(invalid(format!("upper dimension bound {d_max} must exceed {D_MIN}")));
    }
    let estimate = |d_hat: f64, at_boundary: bool| IdEstimate {
        d_hat,
        k: ratios.k,
        loglik: loglik(ratios, d_hat),
        n_used: ratios.n(),
        at_boundary,
    };
    if loglik_slope(ratios, d_max) >= 0.0 {
        log::warn!("likelihood still rising at d = {d_max} (k = {}); reporting the bound", ratios.k);
        return Ok(estimate(d_max, true));
    }
    if loglik_slope(ratios, D_MIN) <= 0.0 {
        log::warn!("likelihood falling at d = {D_MIN} (k = {}); reporting the bound", ratios.k);
        return Ok(estimate(D_MIN, true));
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (D_MIN, d_max);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (loglik(ratios, c), loglik(ratios, d));
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = loglik(ratios, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = loglik(ratios, d);
        }
    }
    // Polish on the sign of the slope, which has a single root: this pins
    // the maximizer to rounding level so tiny perturbations of the ratios
    // cannot move it by a whole golden-section step.
    let (mut lo, mut hi) = (a, b);
    if loglik_slope(ratios, lo) <= 0.0 {
        lo = D_MIN;
    }
    if loglik_slope(ratios, hi) >= 0.0 {
        hi = d_max;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if loglik_slope(ratios, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let d_hat = 0.5 * (lo + hi);
    if !d_hat.is_finite() {
        return Err(Error::Numerical("dimension search diverged".into()));
    }
    Ok(estimate(d_hat, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdConfig {
    pub k_grid: Vec<usize>,
    /// Relative change below which `d_hat(k)` counts as stable into the next scale.
    pub plateau_tol: f64,
    /// Estimate on a random subset of this many points.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for IdConfig {
    fn default() -> Self {
        Self {
            k_grid: vec![1, 2, 4, 8, 16, 32, 64],
            plateau_tol: 0.05,
            subsample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub estimate: IdEstimate,
    pub plateau: bool,
}

/// Estimates across scales and the chosen scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KProfile {
    pub rows: Vec<ProfileRow>,
    pub k_star: usize,
    pub no_plateau: bool,
    pub duplicates_dropped: usize,
}

impl KProfile {
    pub fn selected(&self) -> &IdEstimate {
        &self
            .rows
            .iter()
            .find(|r| r.estimate.k == self.k_star)
            .expect("k_star is on the grid")
            .estimate
    }
}

/// Applies the scale rule to a `d_hat(k)` profile: among scales whose
/// estimate changes by less than `tol` (relative) at the next grid scale,
/// take the one with the largest estimate; without any such scale take the
/// overall argmax and flag it. Returns (index, plateau flags, no_plateau).
pub fn select_scale(d_hat: &[f64], tol: f64) -> (usize, Vec<bool>, bool) {
    let plateau: Vec<bool> = (0..d_hat.len())
        .map(|i| i + 1 < d_hat.len() && ((d_hat[i + 1] - d_hat[i]) / d_hat[i]).abs() < tol)
        .collect();
    let argmax = |candidates: &mut dyn Iterator<Item = usize>| {
        candidates.fold(None, |best: Option<usize>, i| match best {
            Some(b) if d_hat[b] >= d_hat[i] => Some(b),
            _ => Some(i),
        })
    };
    match argmax(&mut (0..d_hat.len()).filter(|&i| plateau[i])) {
        Some(i) => (i, plateau, false),
        None => (argmax(&mut (0..d_hat.len())).unwrap_or(0), plateau, true),
    }
}

/// Mean profile over several layers, then the same scale rule.
pub fn select_scale_layer_mean(profiles: &[Vec<f64>], tol: f64) -> Result<(usize, Vec<f64>)> {
    let len = profiles
        .first()
        .map(Vec::len)
        .ok_or_else(|| invalid("no profiles to average"))?;
    if profiles.iter().any(|p| p.len() != len) {
        return Err(invalid("profiles differ in length"));
    }
    let mean: Vec<f64> = (0..len)
        .map(|i| profiles.iter().map(|p| p[i]).sum::<f64>() / profiles.len() as f64)
        .collect();
    Ok((select_scale(&mean, tol).0, mean))
}

fn check_grid(grid: &[usize]) -> Result<usize> {
    if grid.is_empty() || grid.contains(&0) {
        return Err(invalid("k grid must be nonempty and positive"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("k grid must be strictly ascending"));
    }
    Ok(*grid.last().unwrap())
}

/// Estimates `d_hat(k)` over `cfg.k_grid` from one shared neighbour search
/// and selects the scale.
pub fn select_k(points: &DMatrix<f64>, cfg: &IdConfig) -> Result<KProfile> {
    let k_max = check_grid(&cfg.k_grid)?;
    let points = match cfg.subsample {
        Some(m) if m < points.nrows() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, points.nrows(), m).into_vec();
            idx.sort_unstable();
            points.select_rows(&idx)
        }
        _ => points.clone(),
    };
    let (unique, _) = dedup_rows(&points);
    if unique.nrows() <= 2 * k_max {
        return Err(invalid(format!(
            "k grid up to {k_max} needs more than {} points, have {}",
            2 * k_max,
            unique.nrows()
        )));
    }
    let nd = knn_distances(&points, 2 * k_max)?;
    let d_max = points.ncols() as f64;
    let estimates = cfg
        .k_grid
        .iter()
        .map(|&k| gride_mle(&NeighborRatios::from_distances(&nd, k)?, d_max))
        .collect::<Result<Vec<_>>>()?;
    let d_hat: Vec<f64> = estimates.iter().map(|e| e.d_hat).collect();
    let (idx, plateau, no_plateau) = select_scale(&d_hat, cfg.plateau_tol);
    if no_plateau {
        log::warn!("no stable scale in profile {d_hat:?}; using the maximum");
    }
    Ok(KProfile {
        k_star: cfg.k_grid[idx],
        rows: estimates
            .into_iter()
            .zip(plateau)
            .map(|(estimate, plateau)| ProfileRow { estimate, plateau })
            .collect(),
        no_plateau,
        duplicates_dropped: nd.duplicates_dropped,
    })
}
