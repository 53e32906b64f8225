//! L2-regularized least squares with one thin SVD shared across a λ grid,
//! grouped cross-validation for per-target λ, and delay embedding.
//!
//! For standardized features `X = U diag(s) Vᵀ` and centered targets `Y`, the
//! ridge solution of target `v` at penalty `λ` is
//!
//! ```text
//! W[:, v] = V diag(s / (s² + λ)) Uᵀ Y[:, v]
//! ```
//!
//! so a whole grid of penalties costs one factorization per fold.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::Fold;
use crate::error::{invalid, shape, Error, Result};
use crate::linalg::thin_svd;
use crate::stats::column_correlations;

/// Nonnegative sample shifts modelling the response lag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct DelaySpec {
    delays: Vec<usize>,
}

impl DelaySpec {
    pub fn new(delays: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut delays: Vec<usize> = delays.into_iter().collect();
        delays.sort_unstable();
        delays.dedup();
        if delays.is_empty() {
            return Err(invalid("delay set must not be empty"));
        }
        Ok(Self { delays })
    }

    pub fn delays(&self) -> &[usize] {
        &self.delays
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn max(&self) -> usize {
        *self.delays.last().expect("nonempty")
    }
}

impl Default for DelaySpec {
    fn default() -> Self {
        Self {
            delays: vec![8, 9, 10],
        }
    }
}

impl TryFrom<Vec<usize>> for DelaySpec {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DelaySpec> for Vec<usize> {
    fn from(d: DelaySpec) -> Self {
        d.delays
    }
}

/// Concatenates shifted copies of `x`, one column block per delay in
/// ascending order. Row `t` of block `d` is `x[t - d]`, zero when `t < d`.
pub fn delay_embed(x: &DMatrix<f64>, spec: &DelaySpec) -> Result<DMatrix<f64>> {
    let (t, n) = x.shape();
    if spec.max() >= t {
        return Err(invalid(format!(
            "delay {} needs more than {t} samples",
            spec.max()
        )));
    }
    let mut out = DMatrix::zeros(t, n * spec.len());
    for (b, &d) in spec.delays().iter().enumerate() {
        out.view_mut((d, b * n), (t - d, n))
            .copy_from(&x.view((0, 0), (t - d, n)));
    }
    Ok(out)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && count >= 1) || !hi.is_finite() {
        return Err(invalid(format!(
            "invalid log grid [{lo}, {hi}] x {count}"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect())
}

/// 20 log-spaced penalties over `[1e-3, 1e7]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e7, 20).expect("static grid")
}

/// Which training-set normalizations a fit applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RidgeOptions {
    pub center_features: bool,
    pub scale_features: bool,
    pub center_targets: bool,
}

impl RidgeOptions {
    /// z-score features, center targets.
    pub const ZSCORE: Self = Self {
        center_features: true,
        scale_features: true,
        center_targets: true,
    };
    /// Center features and targets without rescaling features.
    pub const CENTER: Self = Self {
        center_features: true,
        scale_features: false,
        center_targets: true,
    };
    /// Raw features and targets.
    pub const RAW: Self = Self {
        center_features: false,
        scale_features: false,
        center_targets: false,
    };
}

impl Default for RidgeOptions {
    fn default() -> Self {
        Self::ZSCORE
    }
}

/// Per-feature affine normalization estimated on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
    /// Zero-variance training features; always mapped to 0.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>, opts: RidgeOptions) -> Self {
        let (t, f) = x.shape();
        let mut mean = DVector::zeros(f);
        let mut scale = DVector::from_element(f, 1.0);
        let mut constant = vec![false; f];
        for (j, col) in x.column_iter().enumerate() {
            let m = col.sum() / t as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64;
            let sd = var.sqrt();
            constant[j] = sd == 0.0 || sd <= 1e-12 * m.abs();
            if opts.center_features {
                mean[j] = m;
            }
            if opts.scale_features && !constant[j] {
                scale[j] = sd;
            }
        }
        Self {
            mean,
            scale,
            constant,
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(shape(format!(
                "expected {} feature columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if self.constant[j] {
                col.fill(0.0);
            } else {
                let (m, s) = (self.mean[j], self.scale[j]);
                col.iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
        Ok(out)
    }
}

/// A fitted multi-target ridge model.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub standardizer: Standardizer,
    /// Features × targets.
    pub weights: DMatrix<f64>,
    pub lambdas: Vec<f64>,
    pub target_mean: DVector<f64>,
}

impl RidgeFit {
    pub fn feature_mean(&self) -> &DVector<f64> {
        &self.standardizer.mean
    }

    pub fn feature_scale(&self) -> &DVector<f64> {
        &self.standardizer.scale
    }

    pub fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.weights.ncols()
    }
}

fn shrink(s: f64, lambda: f64) -> f64 {
    s / (s * s + lambda)
}

fn check_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(shape(format!(
            "features have {} rows, targets {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 || x.ncols() == 0 || y.ncols() == 0 {
        return Err(invalid(format!(
            "ridge needs at least 2 rows, 1 feature and 1 target; got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(invalid("ridge inputs must be finite"));
    }
    Ok(())
}

fn check_lambda(l: f64) -> Result<()> {
    if !(l >= 0.0 && l.is_finite()) {
        return Err(invalid(format!("penalty {l} must be finite and nonnegative")));
    }
    Ok(())
}

fn column_means(y: &DMatrix<f64>, center: bool) -> DVector<f64> {
    if center {
        DVector::from_iterator(
            y.ncols(),
            y.column_iter().map(|c| c.sum() / y.nrows() as f64),
        )
    } else {
        DVector::zeros(y.ncols())
    }
}

fn subtract_row(y: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = y.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Fits one ridge model per target column, target `v` with penalty
/// `lambda_per_target[v]`. A zero penalty gives the minimum-norm least
/// squares solution.
pub fn fit_ridge_svd(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda_per_target: &[f64],
    opts: RidgeOptions,
) -> Result<RidgeFit> {
    check_inputs(x, y)?;
    if lambda_per_target.len() != y.ncols() {
        return Err(shape(format!(
            "{} penalties for {} targets",
            lambda_per_target.len(),
            y.ncols()
        )));
    }
    for &l in lambda_per_target {
        check_lambda(l)?;
    }
    let standardizer = Standardizer::fit(x, opts);
    let xs = standardizer.apply(x)?;
    let target_mean = column_means(y, opts.center_targets);
    let yc = subtract_row(y, &target_mean);

    let f = thin_svd(&xs)?;
    let mut coef = f.u.tr_mul(&yc);
    for (v, mut col) in coef.column_iter_mut().enumerate() {
        for (i, c) in col.iter_mut().enumerate() {
            *c *= shrink(f.s[i], lambda_per_target[v]);
        }
    }
    let mut weights = &f.v * coef;
    for (j, &is_const) in standardizer.constant.iter().enumerate() {
        if is_const {
            weights.row_mut(j).fill(0.0);
        }
    }
    Ok(RidgeFit {
        standardizer,
        weights,
        lambdas: lambda_per_target.to_vec(),
        target_mean,
    })
}

/// `standardize(x_new) · W + target_mean`, using training statistics.
pub fn predict(fit: &RidgeFit, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xs = fit.standardizer.apply(x_new)?;
    let mut out = xs * &fit.weights;
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(fit.target_mean[j]);
    }
    Ok(out)
}

/// Outcome of a cross-validated penalty sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSweep {
    pub grid: Vec<f64>,
    /// Mean validation correlation, grid × targets.
    pub scores: DMatrix<f64>,
    pub best_index: Vec<usize>,
    pub best_lambda: Vec<f64>,
}

impl CvSweep {
    pub fn best_score(&self, target: usize) -> f64 {
        self.scores[(self.best_index[target], target)]
    }
}

/// Mean validation Pearson r for every (penalty, target) pair, and the
/// per-target penalty maximizing it (ties go to the smaller penalty).
///
/// Each fold standardizes on its own training rows and factors them once;
/// the grid is then evaluated from the shared factors.
pub fn sweep_lambdas_cv(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid: &[f64],
    folds: &[Fold],
    opts: RidgeOptions,
) -> Result<CvSweep> {
    check_inputs(x, y)?;
    if grid.is_empty() {
        return Err(invalid("penalty grid is empty"));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("penalty grid must be strictly ascending"));
    }
    if folds.is_empty() {
        return Err(invalid("no cross-validation folds"));
    }
    let n_targets = y.ncols();
    let mut scores = DMatrix::zeros(grid.len(), n_targets);

    for (k, fold) in folds.iter().enumerate() {
        if fold.validation.len() < 2 {
            return Err(invalid(format!(
                "fold {k} has {} validation samples, need at least 2",
                fold.validation.len()
            )));
        }
        if fold.train.len() < 2 {
            return Err(invalid(format!(
                "fold {k} has {} training samples, need at least 2",
                fold.train.len()
            )));
        }
        if let Some(&bad) = fold
            .train
            .iter()
            .chain(&fold.validation)
            .find(|&&i| i >= x.nrows())
        {
            return Err(shape(format!("fold {k} references row {bad} of {}", x.nrows())));
        }
        let x_tr = x.select_rows(&fold.train);
        let y_tr = y.select_rows(&fold.train);
        let x_va = x.select_rows(&fold.validation);
        let y_va = y.select_rows(&fold.validation);

        let standardizer = Standardizer::fit(&x_tr, opts);
        let xs_tr = standardizer.apply(&x_tr)?;
        let mean = column_means(&y_tr, opts.center_targets);
        let f = thin_svd(&xs_tr)?;
        let uty = f.u.tr_mul(&subtract_row(&y_tr, &mean));
        let xv_v = standardizer.apply(&x_va)? * &f.v;

        let per_lambda: Vec<Vec<f64>> = grid
            .par_iter()
            .map(|&lambda| {
                let mut coef = uty.clone();
                for (i, mut row) in coef.row_iter_mut().enumerate() {
                    row *= shrink(f.s[i], lambda);
                }
                let mut pred = &xv_v * coef;
                for (j, mut col) in pred.column_iter_mut().enumerate() {
                    col.add_scalar_mut(mean[j]);
                }
                column_correlations(&pred, &y_va)
                    .expect("validated shapes")
                    .into_iter()
                    .map(|c| c.r)
                    .collect()
            })
            .collect();
        for (l, rs) in per_lambda.iter().enumerate() {
            for (v, r) in rs.iter().enumerate() {
                scores[(l, v)] += r;
            }
        }
    }
    scores /= folds.len() as f64;

    let best_index: Vec<usize> = (0..n_targets)
        .map(|v| {
            let mut best = 0;
            for l in 1..grid.len() {
                if scores[(l, v)] > scores[(best, v)] {
                    best = l;
                }
            }
            best
        })
        .collect();
    let best_lambda = best_index.iter().map(|&i| grid[i]).collect();
    Ok(CvSweep {
        grid: grid.to_vec(),
        scores,
        best_index,
        best_lambda,
    })
}

/// Sweep, then refit on all rows with each target's selected penalty.
pub fn fit_ridge_cv(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid: &[f64],
    folds: &[Fold],
    opts: RidgeOptions,
) -> Result<(RidgeFit, CvSweep)> {
    let sweep = sweep_lambdas_cv(x, y, grid, folds, opts)?;
    let fit = fit_ridge_svd(x, y, &sweep.best_lambda, opts)?;
    Ok((fit, sweep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    /// Normal-equations solve on explicitly standardized data.
    fn normal_equations(
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        lambda: f64,
    ) -> DMatrix<f64> {
        let f = x.ncols();
        let a = x.transpose() * x + DMatrix::identity(f, f) * lambda;
        a.lu().solve(&(x.transpose() * y)).unwrap()
    }

    fn zscore(x: &DMatrix<f64>) -> DMatrix<f64> {
        let t = x.nrows() as f64;
        let mut out = x.clone();
        for mut col in out.column_iter_mut() {
            let m = col.sum() / t;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t).sqrt();
            col.iter_mut().for_each(|v| *v = (*v - m) / sd);
        }
        out
    }

    #[test]
    fn delay_examples() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let one = delay_embed(&x, &DelaySpec::new([1]).unwrap()).unwrap();
        assert_eq!(one.as_slice(), &[0.0, 1.0, 2.0]);
        let zero = delay_embed(&x, &DelaySpec::new([0]).unwrap()).unwrap();
        assert_eq!(zero, x);
        assert!(delay_embed(&x, &DelaySpec::new([3]).unwrap()).is_err());
        assert!(DelaySpec::new([]).is_err());
    }

    #[test]
    fn default_delays_shape_and_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(20, 2, &mut rng);
        let spec = DelaySpec::default();
        let e = delay_embed(&x, &spec).unwrap();
        assert_eq!(e.shape(), (20, 6));
        for (b, d) in [8usize, 9, 10].into_iter().enumerate() {
            for t in 0..20 {
                for n in 0..2 {
                    let expect = if t >= d { x[(t - d, n)] } else { 0.0 };
                    assert_eq!(e[(t, b * 2 + n)], expect);
                }
            }
        }
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = default_grid();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[19] - 1e7).abs() < 1e-6);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn identity_design_interpolates() {
        let x = DMatrix::identity(3, 3);
        let y = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let fit = fit_ridge_svd(&x, &y, &[0.0], RidgeOptions::RAW).unwrap();
        assert!((&fit.weights - &y).norm() < 1e-12);
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(40, 8, &mut rng);
        let y = randn(40, 2, &mut rng);
        let free = fit_ridge_svd(&x, &y, &[0.0, 0.0], RidgeOptions::ZSCORE).unwrap();
        let tight = fit_ridge_svd(&x, &y, &[1e12, 1e12], RidgeOptions::ZSCORE).unwrap();
        assert!(tight.weights.norm() <= 1e-6 * free.weights.norm());
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(50, 20, &mut rng);
        let y = randn(50, 5, &mut rng);
        let xs = zscore(&x);
        let yc = {
            let mut y = y.clone();
            for mut c in y.column_iter_mut() {
                let m = c.sum() / 50.0;
                c.add_scalar_mut(-m);
            }
            y
        };
        for lambda in default_grid() {
            let fit = fit_ridge_svd(&x, &y, &[lambda; 5], RidgeOptions::ZSCORE).unwrap();
            let oracle = normal_equations(&xs, &yc, lambda);
            let rel = (&fit.weights - &oracle).norm() / oracle.norm();
            assert!(rel < 1e-6, "lambda {lambda}: rel {rel}");
        }
    }

    #[test]
    fn rejects_bad_penalties_and_inputs() {
        let x = DMatrix::identity(3, 3);
        let y = DMatrix::zeros(3, 1);
        assert!(fit_ridge_svd(&x, &y, &[-1.0], RidgeOptions::RAW).is_err());
        assert!(fit_ridge_svd(&x, &y, &[f64::NAN], RidgeOptions::RAW).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::INFINITY;
        assert!(fit_ridge_svd(&bad, &y, &[1.0], RidgeOptions::RAW).is_err());
        assert!(fit_ridge_svd(&x, &DMatrix::zeros(2, 1), &[1.0], RidgeOptions::RAW).is_err());
    }

    #[test]
    fn constant_feature_gets_unit_scale_and_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = randn(30, 3, &mut rng);
        x.column_mut(1).fill(0.7);
        let y = randn(30, 2, &mut rng);
        let fit = fit_ridge_svd(&x, &y, &[1.0, 1.0], RidgeOptions::ZSCORE).unwrap();
        assert_eq!(fit.feature_scale()[1], 1.0);
        assert!(fit.weights.row(1).iter().all(|&w| w == 0.0));
        assert!(fit.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn training_rows_are_reproduced_without_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(12, 12, &mut rng);
        let y = randn(12, 3, &mut rng);
        let fit = fit_ridge_svd(&x, &y, &[0.0; 3], RidgeOptions::RAW).unwrap();
        let yhat = predict(&fit, &x).unwrap();
        assert!((&yhat - &y).amax() < 1e-8);
    }

    #[test]
    fn zero_standardized_row_predicts_target_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = randn(30, 4, &mut rng);
        let y = randn(30, 2, &mut rng);
        let fit = fit_ridge_svd(&x, &y, &[3.0, 3.0], RidgeOptions::ZSCORE).unwrap();
        let row = DMatrix::from_row_slice(1, 4, fit.feature_mean().as_slice());
        let yhat = predict(&fit, &row).unwrap();
        for j in 0..2 {
            assert!((yhat[(0, j)] - fit.target_mean[j]).abs() < 1e-12);
        }
        assert!(predict(&fit, &DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn standardization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = randn(50, 6, &mut rng) * 3.0;
        let z = Standardizer::fit(&x, RidgeOptions::ZSCORE).apply(&x).unwrap();
        let zz = Standardizer::fit(&z, RidgeOptions::ZSCORE).apply(&z).unwrap();
        assert!((&z - &zz).amax() < 1e-12);
    }

    #[test]
    fn predictions_ignore_feature_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = randn(60, 5, &mut rng);
        let y = randn(60, 2, &mut rng);
        let x_test = randn(10, 5, &mut rng);
        let mut x2 = x.clone();
        let mut x2_test = x_test.clone();
        x2.column_mut(2).scale_mut(37.5);
        x2_test.column_mut(2).scale_mut(37.5);
        let a = predict(&fit_ridge_svd(&x, &y, &[2.0, 2.0], RidgeOptions::ZSCORE).unwrap(), &x_test).unwrap();
        let b = predict(&fit_ridge_svd(&x2, &y, &[2.0, 2.0], RidgeOptions::ZSCORE).unwrap(), &x2_test).unwrap();
        assert!((&a - &b).amax() < 1e-8);
    }

    fn contiguous_folds(n: usize, k: usize) -> Vec<Fold> {
        let blocks: Vec<Vec<usize>> = (0..k)
            .map(|f| (f * n / k..(f + 1) * n / k).collect())
            .collect();
        crate::datastore::folds_from_partition(&blocks)
    }

    #[test]
    fn noiseless_targets_pick_smallest_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = randn(80, 6, &mut rng);
        let w = randn(6, 4, &mut rng);
        let y = &x * w;
        let sweep =
            sweep_lambdas_cv(&x, &y, &default_grid(), &contiguous_folds(80, 4), RidgeOptions::ZSCORE)
                .unwrap();
        assert!(sweep.best_index.iter().all(|&i| i == 0), "{:?}", sweep.best_index);
    }

    #[test]
    fn noise_targets_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = randn(400, 10, &mut rng);
        let y = randn(400, 20, &mut rng);
        let sweep =
            sweep_lambdas_cv(&x, &y, &default_grid(), &contiguous_folds(400, 4), RidgeOptions::ZSCORE)
                .unwrap();
        let bound = 2.0 / (100f64).sqrt();
        let mean: f64 = (0..20).map(|v| sweep.best_score(v)).sum::<f64>() / 20.0;
        assert!(mean.abs() < bound, "mean best CV r {mean}");
    }

    #[test]
    fn sweep_errors() {
        let x = DMatrix::identity(6, 2);
        let y = DMatrix::zeros(6, 1);
        let folds = vec![Fold {
            train: vec![0, 1, 2, 3, 4],
            validation: vec![5],
        }];
        assert!(sweep_lambdas_cv(&x, &y, &[1.0], &folds, RidgeOptions::ZSCORE).is_err());
        let folds = contiguous_folds(6, 2);
        assert!(sweep_lambdas_cv(&x, &y, &[], &folds, RidgeOptions::ZSCORE).is_err());
        assert!(sweep_lambdas_cv(&x, &y, &[2.0, 1.0], &folds, RidgeOptions::ZSCORE).is_err());
    }
}
