//! Synthetic ground-truth generators: linear response systems with a known
//! signal-to-noise ratio, point clouds of known intrinsic dimension and
//! piecewise-linear metric curves with known phase boundaries.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CheckpointSeries, MetricKind, SeriesPoint};
use crate::error::{invalid, Result};
use crate::ridge::{delay_embed, DelaySpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Uniformly random orthogonal `dim × dim` matrix.
pub fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    orthonormal_columns(dim, dim, rng)
}

/// `rows × cols` matrix with orthonormal columns (`cols <= rows`).
pub fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = randn(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    // Fix column signs so the distribution is Haar.
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub seed: u64,
    pub t: usize,
    pub n_features: usize,
    pub n_targets: usize,
    pub delays: DelaySpec,
    /// Signal-to-noise variance ratio per target; `None` means noiseless.
    pub snr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearResponse {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub w_true: DMatrix<f64>,
    pub delays: DelaySpec,
    /// Noise-free part of `y`.
    pub signal: DMatrix<f64>,
}

/// `Y = delay_embed(X) · W + ε` with Gaussian `X`, `W`, `ε`; each target's
/// noise is rescaled so that var(signal) / var(ε) equals the SNR exactly.
pub fn gen_linear_response(spec: &LinearSpec) -> Result<LinearResponse> {
    if spec.t == 0 || spec.n_features == 0 || spec.n_targets == 0 {
        return Err(invalid("linear response sizes must be positive"));
    }
    if let Some(snr) = spec.snr {
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(invalid(format!("SNR {snr} must be positive")));
        }
    }
    let mut rng = rng(spec.seed);
    let x = randn(spec.t, spec.n_features, &mut rng);
    let w_true = randn(spec.n_features * spec.delays.len(), spec.n_targets, &mut rng);
    let signal = delay_embed(&x, &spec.delays)? * &w_true;
    let mut y = signal.clone();
    if let Some(snr) = spec.snr {
        let mut noise = randn(spec.t, spec.n_targets, &mut rng);
        for j in 0..spec.n_targets {
            let target_sd = (variance(signal.column(j).iter()) / snr).sqrt();
            let sd = variance(noise.column(j).iter()).sqrt();
            let mut col = noise.column_mut(j);
            let m = col.mean();
            col.iter_mut().for_each(|v| *v = (*v - m) / sd * target_sd);
        }
        y += noise;
    }
    Ok(LinearResponse {
        x,
        y,
        w_true,
        delays: spec.delays.clone(),
        signal,
    })
}

pub(crate) fn variance<'a>(v: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    v.map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldShape {
    /// Uniform on the unit cube.
    Cube,
    /// Standard normal.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub seed: u64,
    pub n: usize,
    pub true_dim: usize,
    pub ambient: usize,
    pub shape: ManifoldShape,
    /// Isotropic ambient noise standard deviation.
    pub noise_sd: f64,
}

/// `n` samples of a `true_dim`-dimensional distribution mapped into
/// `ambient` dimensions by a random isometry.
pub fn gen_manifold(spec: &ManifoldSpec) -> Result<DMatrix<f64>> {
    let (points, _) = gen_manifold_with_latent(spec)?;
    Ok(points)
}

/// Like [`gen_manifold`], also returning the latent coordinates.
pub fn gen_manifold_with_latent(spec: &ManifoldSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if spec.n == 0 || spec.true_dim == 0 || spec.true_dim > spec.ambient {
        return Err(invalid(format!(
            "manifold of dimension {} in {} ambient dimensions with {} points",
            spec.true_dim, spec.ambient, spec.n
        )));
    }
    if !(spec.noise_sd >= 0.0) {
        return Err(invalid("noise_sd must be nonnegative"));
    }
    let mut rng = rng(spec.seed);
    let z = match spec.shape {
        ManifoldShape::Cube => DMatrix::from_fn(spec.n, spec.true_dim, |_, _| rng.random::<f64>()),
        ManifoldShape::Gaussian => randn(spec.n, spec.true_dim, &mut rng),
    };
    let q = orthonormal_columns(spec.ambient, spec.true_dim, &mut rng);
    let mut points = &z * q.transpose();
    if spec.noise_sd > 0.0 {
        points += randn(spec.n, spec.ambient, &mut rng) * spec.noise_sd;
    }
    Ok((points, z))
}

/// Piecewise-linear curve template over log10(training tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub seed: u64,
    pub n_checkpoints: usize,
    pub tokens_min: u64,
    pub tokens_max: u64,
    /// Interior indices where segments 2.. start.
    pub boundaries: Vec<usize>,
    /// Slope of each segment, per decade of training tokens.
    pub slopes: Vec<f64>,
    /// Level jump at each boundary.
    pub jumps: Vec<f64>,
    pub start: f64,
    pub sigma: f64,
}

impl PhaseSpec {
    /// 28 checkpoints spanning 1B to 3896B tokens with a continuous
    /// rise, dip and renewed rise.
    pub fn rise_dip_rise(seed: u64, sigma: f64) -> Self {
        Self {
            seed,
            n_checkpoints: 28,
            tokens_min: 1_000_000_000,
            tokens_max: 3_896_000_000_000,
            boundaries: vec![9, 19],
            slopes: vec![0.8, -0.5, 0.7],
            jumps: vec![0.0, 0.0],
            start: 0.0,
            sigma,
        }
    }

    pub fn segment_of(&self, i: usize) -> usize {
        self.boundaries.iter().filter(|&&b| b <= i).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCurve {
    pub series: CheckpointSeries,
    /// Noise-free values.
    pub truth: Vec<f64>,
}

impl PhaseCurve {
    pub fn range(&self) -> f64 {
        let max = self.truth.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.truth.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    }
}

/// Log-spaced token counts, strictly increasing.
pub fn log_spaced_tokens(n: usize, lo: u64, hi: u64) -> Result<Vec<u64>> {
    if n < 2 || lo == 0 || hi <= lo {
        return Err(invalid(format!("cannot space {n} checkpoints over [{lo}, {hi}]")));
    }
    let (a, b) = ((lo as f64).log10(), (hi as f64).log10());
    let tokens: Vec<u64> = (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64).round() as u64)
        .collect();
    if tokens.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("token range too narrow for distinct checkpoints"));
    }
    Ok(tokens)
}

pub fn gen_phase_curve(spec: &PhaseSpec) -> Result<PhaseCurve> {
    let n = spec.n_checkpoints;
    if spec.slopes.len() != spec.boundaries.len() + 1 || spec.jumps.len() != spec.boundaries.len() {
        return Err(invalid("need one slope per segment and one jump per boundary"));
    }
    if spec.boundaries.windows(2).any(|w| w[0] >= w[1])
        || spec.boundaries.first().is_some_and(|&b| b == 0)
        || spec.boundaries.last().is_some_and(|&b| b >= n)
    {
        return Err(invalid(format!(
            "boundaries {:?} must be strictly interior to {n} checkpoints",
            spec.boundaries
        )));
    }
    if !(spec.sigma >= 0.0) {
        return Err(invalid("sigma must be nonnegative"));
    }
    let tokens = log_spaced_tokens(n, spec.tokens_min, spec.tokens_max)?;
    let x: Vec<f64> = tokens.iter().map(|&t| (t as f64).log10()).collect();
    let mut truth = Vec::with_capacity(n);
    let mut level = spec.start;
    for i in 0..n {
        if i > 0 {
            let seg = spec.segment_of(i);
            let dx = x[i] - x[i - 1];
            if spec.boundaries.get(seg.wrapping_sub(1)) == Some(&i) {
                // Knot halfway between the last point of one segment and the
                // first of the next, so no point lies on two lines.
                level += spec.slopes[seg - 1] * dx / 2.0 + spec.jumps[seg - 1];
                level += spec.slopes[seg] * dx / 2.0;
            } else {
                level += spec.slopes[seg] * dx;
            }
        }
        truth.push(level);
    }
    let mut rng = rng(spec.seed);
    let points = tokens
        .iter()
        .zip(&truth)
        .enumerate()
        .map(|(i, (&t, &v))| {
            let noise: f64 = rng.sample(StandardNormal);
            SeriesPoint {
                checkpoint_id: format!("step{i:02}"),
                training_tokens: t,
                value: v + spec.sigma * noise,
            }
        })
        .collect();
    Ok(PhaseCurve {
        series: CheckpointSeries::new(MetricKind::EncodingMeanR, "encoding_mean_r", points)?,
        truth,
    })
}

/// Maps curve values onto `[lo, hi]` linearly.
pub fn rescale(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    let span = (max - min).max(f64::MIN_POSITIVE);
    values.iter().map(|v| lo + (hi - lo) * (v - min) / span).collect()
}

/// Settings of a complete synthetic checkpoint sweep on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_checkpoints: usize,
    pub tokens_min: u64,
    pub tokens_max: u64,
    pub layer: usize,
    pub participant: String,
    /// Stimulus feature width and activation width for encoding.
    pub n_features: usize,
    pub n_voxels: usize,
    pub train_runs: usize,
    pub run_len: usize,
    pub test_len: usize,
    /// Target signal-to-noise variance ratio.
    pub snr: f64,
    /// Range of the activation/stimulus mixing weight over checkpoints.
    pub strength_range: (f64, f64),
    pub task: String,
    pub n_samples: usize,
    pub max_choices: usize,
    pub n_neurons: usize,
    pub vocab: usize,
    pub width: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_checkpoints: 9,
            tokens_min: 1_000_000_000,
            tokens_max: 3_896_000_000_000,
            layer: 0,
            participant: "p1".into(),
            n_features: 12,
            n_voxels: 40,
            train_runs: 4,
            run_len: 150,
            test_len: 200,
            snr: 1.0,
            strength_range: (0.2, 0.9),
            task: "mcq".into(),
            n_samples: 300,
            max_choices: 4,
            n_neurons: 48,
            vocab: 32,
            width: 16,
        }
    }
}

/// Ground truth planted in a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTruth {
    pub checkpoint_ids: Vec<String>,
    pub training_tokens: Vec<u64>,
    /// Weight of the stimulus in the activations, per checkpoint.
    pub encoding_strength: Vec<f64>,
    /// Scale of the answer-driven activation component, per checkpoint.
    pub probing_strength: Vec<f64>,
    /// Scale of the gold-token direction in the hidden states.
    pub lens_strength: Vec<f64>,
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        if self.n_checkpoints < 6 {
            return Err(invalid("a synthetic sweep needs at least 6 checkpoints"));
        }
        if self.train_runs < 2 || self.run_len < 20 || self.test_len < 20 {
            return Err(invalid("synthetic runs are too short"));
        }
        if self.max_choices < 2 || self.n_samples < 20 || self.vocab < self.max_choices {
            return Err(invalid("synthetic task is too small"));
        }
        let (lo, hi) = self.strength_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(invalid("strength_range must satisfy 0 <= lo < hi <= 1"));
        }
        Ok(())
    }

    /// Rise, dip, rise over thirds of the sweep, mapped to `strength_range`.
    pub fn encoding_template(&self) -> Result<Vec<f64>> {
        let n = self.n_checkpoints;
        let phase = PhaseSpec {
            seed: self.seed,
            n_checkpoints: n,
            tokens_min: self.tokens_min,
            tokens_max: self.tokens_max,
            boundaries: vec![n / 3, 2 * n / 3],
            slopes: vec![1.0, -0.6, 0.8],
            jumps: vec![0.0, 0.0],
            start: 0.0,
            sigma: 0.0,
        };
        let curve = gen_phase_curve(&phase)?;
        Ok(rescale(&curve.truth, self.strength_range.0, self.strength_range.1))
    }
}

fn write_entry(
    dir: &std::path::Path,
    manifest: &mut crate::datastore::Manifest,
    name: String,
    m: &DMatrix<f64>,
    meta: crate::datastore::Sidecar,
) -> Result<()> {
    use crate::datastore::{write_amx, write_sidecar, Amx};
    let path = dir.join(&name);
    write_amx(&path, &Amx::from_matrix(m)?)?;
    write_sidecar(&path, &meta)?;
    manifest.push(name, meta);
    Ok(())
}

fn write_vector(
    dir: &std::path::Path,
    manifest: &mut crate::datastore::Manifest,
    name: String,
    v: &[f64],
    meta: crate::datastore::Sidecar,
) -> Result<()> {
    use crate::datastore::{write_amx, write_sidecar, Amx};
    let path = dir.join(&name);
    write_amx(&path, &Amx::from_slice(v)?)?;
    write_sidecar(&path, &meta)?;
    manifest.push(name, meta);
    Ok(())
}

/// Writes AMX files, sidecars and `manifest.json` for a checkpoint sweep
/// carrying encoding, probing and lens data with planted dynamics.
///
/// Encoding: targets are a fixed linear response to a stimulus `X`; the
/// activations of checkpoint `c` are `s_c X + sqrt(1 - s_c^2) Z_c` with `s_c`
/// following [`DatasetSpec::encoding_template`]. Probing: activations are
/// `g_c A M + E_c` with `g_c` zero over the first half and rising after.
/// Lens: hidden states are `a_c U[gold] + noise` with `a_c` rising linearly.
pub fn write_synthetic_dataset(dir: impl AsRef<std::path::Path>, spec: &DatasetSpec) -> Result<DatasetTruth> {
    use crate::datastore::{Kind, Manifest, Sidecar, Split};
    use crate::lens::gold_label;
    use crate::probing::build_answer_matrix;

    spec.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut g = rng(spec.seed);
    let mut manifest = Manifest::new(dir);
    manifest.seed = Some(spec.seed);

    let n = spec.n_checkpoints;
    let tokens = log_spaced_tokens(n, spec.tokens_min, spec.tokens_max)?;
    let ids: Vec<String> = (0..n).map(|i| format!("ckpt{i:02}")).collect();
    let enc = spec.encoding_template()?;
    let probe: Vec<f64> = (0..n)
        .map(|i| {
            let half = n / 2;
            if i < half {
                0.0
            } else {
                (i + 1 - half) as f64 / (n - half) as f64
            }
        })
        .collect();
    let lens: Vec<f64> = (0..n).map(|i| 0.1 + 0.5 * i as f64 / (n - 1) as f64).collect();

    let stim_meta = |kind, group: &str, split| Sidecar {
        checkpoint_id: String::new(),
        training_tokens: 0,
        layer: 0,
        kind,
        group_label: group.to_string(),
        split,
        participant: None,
    };

    // Stimulus runs and their target responses.
    let mut runs: Vec<(String, Split, usize)> = (0..spec.train_runs)
        .map(|r| (format!("run{r}"), Split::Train, spec.run_len))
        .collect();
    runs.push(("test0".into(), Split::Test, spec.test_len));
    let delays = DelaySpec::default();
    let w_true = randn(spec.n_features * delays.len(), spec.n_voxels, &mut g);
    let mut stimuli = Vec::with_capacity(runs.len());
    for (group, split, len) in &runs {
        let x = randn(*len, spec.n_features, &mut g);
        let signal = delay_embed(&x, &delays)? * &w_true;
        let noise = randn(*len, spec.n_voxels, &mut g);
        let mut y = signal.clone();
        for j in 0..spec.n_voxels {
            let sd = (variance(signal.column(j).iter()) / spec.snr).sqrt();
            let nsd = variance(noise.column(j).iter()).sqrt();
            for t in 0..*len {
                y[(t, j)] += noise[(t, j)] / nsd * sd;
            }
        }
        let meta = Sidecar {
            participant: Some(spec.participant.clone()),
            ..stim_meta(Kind::Target, group, *split)
        };
        write_entry(dir, &mut manifest, format!("target_{}_{group}.amx", spec.participant), &y, meta)?;
        stimuli.push(x);
    }

    // Multiple-choice task: some samples have fewer choices than the maximum.
    let items: Vec<(usize, usize)> = (0..spec.n_samples)
        .map(|s| {
            let count = if s % 5 == 4 { spec.max_choices - 1 } else { spec.max_choices };
            (count, g.random_range(0..count))
        })
        .collect();
    let answers = build_answer_matrix(&items, spec.max_choices)?;
    write_entry(
        dir,
        &mut manifest,
        format!("answers_{}.amx", spec.task),
        &answers.to_stored(),
        stim_meta(Kind::Answer, &spec.task, Split::Train),
    )?;
    let mixing = randn(spec.max_choices, spec.n_neurons, &mut g);
    let gold: Vec<f64> = (0..spec.n_samples)
        .map(|_| g.random_range(0..spec.vocab) as f64)
        .collect();
    write_vector(
        dir,
        &mut manifest,
        format!("gold_{}.amx", spec.task),
        &gold,
        stim_meta(Kind::Answer, &gold_label(&spec.task), Split::Train),
    )?;

    for c in 0..n {
        let meta = |kind, group: &str, split| Sidecar {
            checkpoint_id: ids[c].clone(),
            training_tokens: tokens[c],
            layer: spec.layer,
            kind,
            group_label: group.to_string(),
            split,
            participant: None,
        };
        let s = enc[c];
        for ((group, split, len), x) in runs.iter().zip(&stimuli) {
            let z = randn(*len, spec.n_features, &mut g);
            let act = x * s + z * (1.0 - s * s).sqrt();
            write_entry(
                dir,
                &mut manifest,
                format!("act_{}_L{}_{group}.amx", ids[c], spec.layer),
                &act,
                meta(Kind::Activation, group, *split),
            )?;
        }
        let probe_act = &answers.values * &mixing * probe[c] + randn(spec.n_samples, spec.n_neurons, &mut g);
        write_entry(
            dir,
            &mut manifest,
            format!("act_{}_L{}_{}.amx", ids[c], spec.layer, spec.task),
            &probe_act,
            meta(Kind::Activation, &spec.task, Split::Train),
        )?;

        let unembed = randn(spec.vocab, spec.width, &mut g);
        let mut hidden = randn(spec.n_samples, spec.width, &mut g);
        for (row, &tok) in gold.iter().enumerate() {
            let dir_row = unembed.row(tok as usize) * lens[c];
            let mut h = hidden.row_mut(row);
            h += dir_row;
        }
        write_entry(
            dir,
            &mut manifest,
            format!("hidden_{}_L{}_{}.amx", ids[c], spec.layer, spec.task),
            &hidden,
            meta(Kind::Hidden, &spec.task, Split::Train),
        )?;
        write_entry(
            dir,
            &mut manifest,
            format!("unembed_{}.amx", ids[c]),
            &unembed,
            meta(Kind::Unembed, "model", Split::Train),
        )?;
        write_vector(
            dir,
            &mut manifest,
            format!("normgain_{}.amx", ids[c]),
            &vec![1.0; spec.width],
            meta(Kind::Normgain, "model", Split::Train),
        )?;
    }
    manifest.validate()?;
    manifest.save(dir.join("manifest.json"))?;
    Ok(DatasetTruth {
        checkpoint_ids: ids,
        training_tokens: tokens,
        encoding_strength: enc,
        probing_strength: probe,
        lens_strength: lens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::segment_phases;

    #[test]
    fn linear_response_is_seed_deterministic_and_respects_snr() {
        let spec = LinearSpec {
            seed: 3,
            t: 2000,
            n_features: 4,
            n_targets: 3,
            delays: DelaySpec::default(),
            snr: Some(4.0),
        };
        let a = gen_linear_response(&spec).unwrap();
        let b = gen_linear_response(&spec).unwrap();
        assert_eq!(a, b);
        for j in 0..3 {
            let noise: Vec<f64> = (0..2000).map(|t| a.y[(t, j)] - a.signal[(t, j)]).collect();
            let ratio = variance(a.signal.column(j).iter()) / variance(noise.iter());
            assert!((ratio / 4.0 - 1.0).abs() < 0.05, "ratio {ratio}");
        }
    }

    #[test]
    fn noiseless_response_equals_signal() {
        let spec = LinearSpec {
            seed: 1,
            t: 50,
            n_features: 2,
            n_targets: 2,
            delays: DelaySpec::new([0, 1]).unwrap(),
            snr: None,
        };
        let r = gen_linear_response(&spec).unwrap();
        assert_eq!(r.y, r.signal);
    }

    #[test]
    fn isometric_embedding_preserves_distances() {
        let spec = ManifoldSpec {
            seed: 2,
            n: 40,
            true_dim: 3,
            ambient: 12,
            shape: ManifoldShape::Cube,
            noise_sd: 0.0,
        };
        let (pts, z) = gen_manifold_with_latent(&spec).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                let d_amb = (pts.row(i) - pts.row(j)).norm();
                let d_lat = (z.row(i) - z.row(j)).norm();
                assert!((d_amb - d_lat).abs() < 1e-9);
            }
        }
        assert!(gen_manifold(&ManifoldSpec { true_dim: 13, ..spec }).is_err());
    }

    #[test]
    fn noiseless_phase_curve_is_recovered_exactly() {
        let spec = PhaseSpec::rise_dip_rise(0, 0.0);
        let curve = gen_phase_curve(&spec).unwrap();
        assert_eq!(curve.series.len(), 28);
        let seg = segment_phases(&curve.series, 3).unwrap();
        assert_eq!(seg.boundaries, spec.boundaries);
    }

    #[test]
    fn flat_middle_phase_has_slope_near_zero() {
        // Slope standard error from the segment's own residuals.
        let mut within = 0;
        for seed in 0..40 {
            let spec = PhaseSpec {
                slopes: vec![0.8, 0.0, 0.7],
                ..PhaseSpec::rise_dip_rise(seed, 0.02)
            };
            let curve = gen_phase_curve(&spec).unwrap();
            let seg = segment_phases(&curve.series, 3).unwrap();
            let x = curve.series.log_tokens();
            let mid = &x[seg.boundaries[0]..seg.boundaries[1]];
            let m = mid.iter().sum::<f64>() / mid.len() as f64;
            let sxx: f64 = mid.iter().map(|v| (v - m).powi(2)).sum();
            let fit = seg.fits[1];
            let se = (fit.sse / (mid.len() as f64 - 2.0) / sxx).sqrt();
            if fit.slope.abs() <= 2.0 * se {
                within += 1;
            }
        }
        assert!(within >= 34, "{within}/40 middle slopes within 2 standard errors of 0");
    }

    fn cube_dimension(d: usize, ambient: usize, seed: u64) -> f64 {
        let pts = gen_manifold(&ManifoldSpec {
            seed,
            n: 1000,
            true_dim: d,
            ambient,
            shape: ManifoldShape::Cube,
            noise_sd: 0.0,
        })
        .unwrap();
        crate::idim::select_k(&pts, &crate::idim::IdConfig::default())
            .unwrap()
            .selected()
            .d_hat
    }

    #[test]
    fn manifolds_have_their_stated_dimension() {
        let line = cube_dimension(1, 10, 1);
        assert!((0.9..=1.1).contains(&line), "{line}");
        for d in 1..=5 {
            let full = cube_dimension(d, d, d as u64);
            assert!(full >= 0.85 * d as f64 && full <= 1.1 * d as f64, "D = {d}: {full}");
        }
    }

    #[test]
    fn phase_spec_validation() {
        let mut spec = PhaseSpec::rise_dip_rise(0, 0.1);
        spec.boundaries = vec![0, 5];
        assert!(gen_phase_curve(&spec).is_err());
        let mut spec = PhaseSpec::rise_dip_rise(0, 0.1);
        spec.slopes.pop();
        assert!(gen_phase_curve(&spec).is_err());
    }

    #[test]
    fn dataset_round_trips_through_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            n_checkpoints: 6,
            ..DatasetSpec::default()
        };
        let truth = write_synthetic_dataset(dir.path(), &spec).unwrap();
        let m = crate::datastore::Manifest::load(dir.path().join("manifest.json")).unwrap();
        let ckpts: Vec<&str> = m.checkpoints().iter().map(|c| c.id).collect();
        assert_eq!(ckpts, truth.checkpoint_ids.iter().map(String::as_str).collect::<Vec<_>>());
        let from_sidecars = crate::datastore::Manifest::from_sidecars(dir.path()).unwrap();
        assert_eq!(from_sidecars.entries.len(), m.entries.len());
        assert!(truth.probing_strength[..3].iter().all(|&g| g == 0.0));
    }
}
