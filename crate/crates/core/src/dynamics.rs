//! Metric series over checkpoints: cross-checkpoint activation similarity,
//! three-phase segmentation and series alignment.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::stats::{pearson_unchecked, Correlation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    EncodingMeanR,
    EncodingMeanRSig,
    ProbingMeanR,
    BenchmarkAccuracy,
    IdDhat,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::EncodingMeanRSig,
        MetricKind::EncodingMeanR,
        MetricKind::ProbingMeanR,
        MetricKind::BenchmarkAccuracy,
        MetricKind::IdDhat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::EncodingMeanR => "encoding_mean_r",
            MetricKind::EncodingMeanRSig => "encoding_mean_r_sig",
            MetricKind::ProbingMeanR => "probing_mean_r",
            MetricKind::BenchmarkAccuracy => "benchmark_accuracy",
            MetricKind::IdDhat => "id_d_hat",
        }
    }

    /// Kind named by the prefix of a series label such as `probing_mean_r_L3`.
    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| label.starts_with(k.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub checkpoint_id: String,
    pub training_tokens: u64,
    pub value: f64,
}

/// One metric tracked across checkpoints in training order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    pub kind: MetricKind,
    /// Column name used in series files, e.g. `encoding_mean_r_L25`.
    pub label: String,
    pub points: Vec<SeriesPoint>,
}

impl CheckpointSeries {
    pub fn new(kind: MetricKind, label: impl Into<String>, points: Vec<SeriesPoint>) -> Result<Self> {
        let s = Self {
            kind,
            label: label.into(),
            points,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self
            .points
            .windows(2)
            .find(|w| w[1].training_tokens <= w[0].training_tokens)
        {
            return Err(invalid(format!(
                "series '{}' tokens not increasing: {} then {}",
                self.label, w[0].training_tokens, w[1].training_tokens
            )));
        }
        if let Some(p) = self.points.iter().find(|p| !p.value.is_finite()) {
            return Err(invalid(format!(
                "series '{}' has non-finite value at checkpoint '{}'",
                self.label, p.checkpoint_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn log_tokens(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| (p.training_tokens as f64).log10())
            .collect()
    }

    /// Writes `checkpoint_id,training_tokens,<label>` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["checkpoint_id", "training_tokens", self.label.as_str()])
            .map_err(|e| csv_err(path, e))?;
        for p in &self.points {
            w.write_record([
                p.checkpoint_id.clone(),
                p.training_tokens.to_string(),
                format_value(p.value),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if headers.len() != 3 || &headers[0] != "checkpoint_id" || &headers[1] != "training_tokens" {
            return Err(Error::format(path, "expected checkpoint_id,training_tokens,<metric>"));
        }
        let label = headers[2].to_string();
        let kind = MetricKind::from_label(&label)
            .ok_or_else(|| Error::format(path, format!("unknown metric column '{label}'")))?;
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let parse_err = |what: &str| Error::format(path, format!("bad {what} in {rec:?}"));
            points.push(SeriesPoint {
                checkpoint_id: rec[0].to_string(),
                training_tokens: rec[1].parse().map_err(|_| parse_err("token count"))?,
                value: rec[2].parse().map_err(|_| parse_err("value"))?,
            });
        }
        Self::new(kind, label, points)
    }
}

/// Shortest representation that parses back to the same f64.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// How activation matrices of two checkpoints are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XcorrMode {
    /// Pearson r over all entries after removing each matrix's grand mean.
    #[default]
    Flattened,
    /// Mean over neurons of the per-neuron Pearson r across stimuli.
    PerNeuronMean,
}

/// Checkpoint × checkpoint activation similarity matrix.
pub fn xckpt_correlation(acts: &[DMatrix<f64>], mode: XcorrMode) -> Result<DMatrix<f64>> {
    let first = acts.first().ok_or_else(|| invalid("no activation matrices"))?;
    if let Some(m) = acts.iter().find(|m| m.shape() != first.shape()) {
        return Err(shape(format!(
            "activation shapes differ: {:?} vs {:?}",
            first.shape(),
            m.shape()
        )));
    }
    if first.len() < 2 {
        return Err(invalid("activation matrices need at least two entries"));
    }
    if acts.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(invalid("activations must be finite"));
    }
    let c = acts.len();
    let pairs: Vec<(usize, usize)> = (0..c).flat_map(|a| (a..c).map(move |b| (a, b))).collect();
    let values: Vec<Correlation> = pairs
        .par_iter()
        .map(|&(a, b)| match mode {
            XcorrMode::Flattened => pearson_unchecked(
                acts[a].iter().copied(),
                acts[b].iter().copied(),
                first.len(),
            ),
            XcorrMode::PerNeuronMean => per_neuron_mean(&acts[a], &acts[b]),
        })
        .collect();
    let mut out = DMatrix::zeros(c, c);
    for (&(a, b), corr) in pairs.iter().zip(values) {
        let r = if a == b {
            if corr.degenerate {
                0.0
            } else {
                1.0
            }
        } else {
            corr.r
        };
        out[(a, b)] = r;
        out[(b, a)] = r;
    }
    Ok(out)
}

fn per_neuron_mean(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Correlation {
    let rs: Vec<f64> = (0..a.ncols())
        .map(|j| pearson_unchecked(a.column(j).iter().copied(), b.column(j).iter().copied(), a.nrows()))
        .filter(|c| !c.degenerate)
        .map(|c| c.r)
        .collect();
    if rs.is_empty() {
        Correlation {
            r: 0.0,
            degenerate: true,
        }
    } else {
        Correlation {
            r: rs.iter().sum::<f64>() / rs.len() as f64,
            degenerate: false,
        }
    }
}

pub fn write_matrix_csv(path: impl AsRef<Path>, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["checkpoint_id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.row(i).iter().map(|&v| format_value(v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Least-squares line over one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub sse: f64,
}

/// Fits `y = slope·x + intercept`. One or two points fit exactly.
pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len();
    debug_assert!(n == y.len() && n > 0);
    if n == 1 {
        return LineFit {
            slope: 0.0,
            intercept: y[0],
            sse: 0.0,
        };
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let sse = if n == 2 { 0.0 } else { (syy - slope * sxy).max(0.0) };
    LineFit {
        slope,
        intercept: my - slope * mx,
        sse,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegmentation {
    /// Interior start indices of segments 2.., strictly increasing.
    pub boundaries: Vec<usize>,
    /// One line per segment, fitted over log10(training tokens).
    pub fits: Vec<LineFit>,
    pub sse: f64,
}

/// Totals within this fraction of the series' total sum of squares count as ties.
pub const TIE_TOL: f64 = 1e-10;

pub(crate) fn tie_tolerance(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let ss: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    TIE_TOL * ss.max(f64::MIN_POSITIVE)
}

/// Exact minimum-SSE split of `(x, y)` into `segments` contiguous pieces,
/// each fitted by its own least-squares line. Among (near-)optimal splits the
/// lexicographically earliest boundaries win.
pub fn segment_xy(x: &[f64], y: &[f64], segments: usize) -> Result<PhaseSegmentation> {
    let n = y.len();
    if x.len() != n {
        return Err(shape(format!("{} x values for {n} y values", x.len())));
    }
    if segments == 0 {
        return Err(invalid("need at least one segment"));
    }
    if n < 2 * segments {
        return Err(invalid(format!(
            "series of length {n} is too short for {segments} segments"
        )));
    }
    // cost[i][j]: SSE of the segment covering indices i..j
    let mut cost = vec![vec![f64::INFINITY; n + 1]; n + 1];
    for i in 0..n {
        for j in i + 1..=n {
            cost[i][j] = fit_line(&x[i..j], &y[i..j]).sse;
        }
    }
    // best[s][i]: minimal cost of splitting the suffix i..n into s segments
    let mut best = vec![vec![f64::INFINITY; n + 1]; segments + 1];
    for i in 0..n {
        best[1][i] = cost[i][n];
    }
    for s in 2..=segments {
        for i in 0..n {
            for j in i + 1..=n.saturating_sub(s - 1) {
                let c = cost[i][j] + best[s - 1][j];
                if c < best[s][i] {
                    best[s][i] = c;
                }
            }
        }
    }
    let total = best[segments][0];
    if !total.is_finite() {
        return Err(Error::Numerical("segmentation cost is not finite".into()));
    }
    let mut budget = total + tie_tolerance(y);
    let mut boundaries = Vec::with_capacity(segments - 1);
    let mut i = 0;
    for s in (2..=segments).rev() {
        let j = (i + 1..=n - (s - 1))
            .find(|&j| cost[i][j] + best[s - 1][j] <= budget)
            .expect("the optimum is always within budget");
        budget -= cost[i][j];
        boundaries.push(j);
        i = j;
    }
    let mut starts = vec![0];
    starts.extend(&boundaries);
    let mut ends = boundaries.clone();
    ends.push(n);
    let fits: Vec<LineFit> = starts
        .iter()
        .zip(&ends)
        .map(|(&a, &b)| fit_line(&x[a..b], &y[a..b]))
        .collect();
    let sse = fits.iter().map(|f| f.sse).sum();
    Ok(PhaseSegmentation {
        boundaries,
        fits,
        sse,
    })
}

/// Segments a checkpoint series over log10(training tokens).
pub fn segment_phases(series: &CheckpointSeries, segments: usize) -> Result<PhaseSegmentation> {
    series.validate()?;
    segment_xy(&series.log_tokens(), &series.values(), segments)
}

/// Two series paired on their common checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSeries {
    pub checkpoint_ids: Vec<String>,
    pub training_tokens: Vec<u64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub r: f64,
}

/// Inner join on checkpoint id (in `a`'s order) and the Pearson r of the pairs.
pub fn align_series(a: &CheckpointSeries, b: &CheckpointSeries) -> Result<AlignedSeries> {
    let mut out = AlignedSeries {
        checkpoint_ids: vec![],
        training_tokens: vec![],
        a: vec![],
        b: vec![],
        r: 0.0,
    };
    for p in &a.points {
        if let Some(q) = b.points.iter().find(|q| q.checkpoint_id == p.checkpoint_id) {
            out.checkpoint_ids.push(p.checkpoint_id.clone());
            out.training_tokens.push(p.training_tokens);
            out.a.push(p.value);
            out.b.push(q.value);
        }
    }
    if out.a.len() < 3 {
        return Err(invalid(format!(
            "series '{}' and '{}' share {} checkpoints, need 3",
            a.label,
            b.label,
            out.a.len()
        )));
    }
    out.r = crate::stats::pearson(&out.a, &out.b)?.r;
    Ok(out)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).expect("serializable record");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
