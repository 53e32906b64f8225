use std::fs;
use std::path::{Path, PathBuf};

use clap::Subcommand;
use serde::{Deserialize, Serialize};

use crate::dynamics::XcorrMode;
use crate::error::{Error, Result};
use crate::idim::IdConfig;
use crate::lens::LensConfig;
use crate::ridge::{default_grid, DelaySpec};
use crate::stats::PermConfig;
use crate::synth::DatasetSpec;

use super::record::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    /// Encoding accuracy of activations for target responses.
    Encode,
    /// Probing accuracy of answer matrices for activations.
    Probe,
    /// Intrinsic dimension of activations.
    Idim,
    /// Cross-checkpoint activation correlation.
    Xcorr,
    /// Logit-lens benchmark accuracy.
    Lens,
    /// Exact-match scoring of generated answers.
    Score,
    /// Three-phase segmentation of metric series.
    Phases,
    /// Synthetic checkpoint sweep with planted dynamics.
    Synth,
    /// Combined table and chart of all series in the output directory.
    Report,
}

impl Analysis {
    pub fn as_str(self) -> &'static str {
        match self {
            Analysis::Encode => "encode",
            Analysis::Probe => "probe",
            Analysis::Idim => "idim",
            Analysis::Xcorr => "xcorr",
            Analysis::Lens => "lens",
            Analysis::Score => "score",
            Analysis::Phases => "phases",
            Analysis::Synth => "synth",
            Analysis::Report => "report",
        }
    }
}

/// Generated answers of one checkpoint for exact-match scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub checkpoint_id: String,
    pub training_tokens: u64,
    pub outputs: Vec<String>,
    pub golds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub analysis: Option<Analysis>,
    pub manifest: Option<PathBuf>,
    pub layers: Vec<usize>,
    pub out: Option<PathBuf>,
    /// Seeds every random step: splits, folds, permutations, subsampling,
    /// synthetic data.
    pub seed: u64,
    pub participant: Option<String>,
    pub task: String,
    /// Activation group for `idim` and `xcorr`; defaults to `task`.
    pub group: Option<String>,
    pub lambda_grid: Vec<f64>,
    pub delays: DelaySpec,
    pub folds: usize,
    pub perm: PermConfig,
    pub alpha: f64,
    pub probe_ratio: (u32, u32),
    pub idim: IdConfig,
    pub xcorr_mode: XcorrMode,
    pub lens: LensConfig,
    pub score_file: Option<PathBuf>,
    pub series: Vec<PathBuf>,
    pub segments: usize,
    pub synth: DatasetSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            analysis: None,
            manifest: None,
            layers: vec![0],
            out: None,
            seed: 0,
            participant: None,
            task: "mcq".into(),
            group: None,
            lambda_grid: default_grid(),
            delays: DelaySpec::default(),
            folds: 4,
            perm: PermConfig::default(),
            alpha: 0.05,
            probe_ratio: (4, 1),
            idim: IdConfig::default(),
            xcorr_mode: XcorrMode::default(),
            lens: LensConfig::default(),
            score_file: None,
            series: Vec::new(),
            segments: 3,
            synth: DatasetSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; relative paths resolve against the file's directory.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.manifest.as_mut().map(fix);
        cfg.out.as_mut().map(fix);
        cfg.score_file.as_mut().map(fix);
        cfg.series.iter_mut().for_each(fix);
        Ok(cfg)
    }

    /// Reads a TOML config, or the config embedded in a JSON run record.
    pub fn load_any(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Config(format!("config file {} does not exist", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        if path.extension().is_some_and(|e| e == "json") {
            let record: RunRecord = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            record.verify()?;
            return Ok(record.config);
        }
        let base = super::absolute(path)?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| Error::Config("no output directory (--out or `out`)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers.is_empty() {
            return bad("`layers` is empty".into());
        }
        if self.lambda_grid.is_empty() {
            return bad("`lambda_grid` is empty".into());
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("`lambda_grid` values must be finite and nonnegative".into());
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("`lambda_grid` must be strictly ascending".into());
        }
        if self.folds < 2 {
            return bad(format!("`folds` = {} must be at least 2", self.folds));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("`alpha` = {} must lie in (0, 1)", self.alpha));
        }
        if self.segments < 1 {
            return bad("`segments` must be positive".into());
        }
        self.perm
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.out_dir()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_defaults_and_resolves_paths() {
        let cfg = RunConfig::from_toml(
            "manifest = \"data/manifest.json\"\nlayers = [2, 5]\n[perm]\nn_perm = 200\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.manifest.unwrap(), PathBuf::from("/base/data/manifest.json"));
        assert_eq!(cfg.layers, vec![2, 5]);
        assert_eq!(cfg.perm.n_perm, 200);
        assert_eq!(cfg.perm.block_len, 10);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = RunConfig::from_toml("lamda_grid = [1.0]\n", Path::new("/")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn validation() {
        let ok = RunConfig {
            out: Some("/tmp/x".into()),
            ..RunConfig::default()
        };
        assert!(ok.validate().is_ok());
        assert!(RunConfig::default().validate().is_err());
        let bad = RunConfig {
            lambda_grid: vec![1.0, 0.5],
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
    }
}
