use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::RunConfig;

/// Run record file name for an analysis.
pub fn record_file(analysis: &str) -> String {
    format!("run_record_{analysis}.json")
}

/// Everything needed to reproduce a run: the resolved configuration, its
/// hash, the seeds in effect and hashes of every file written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub analysis: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Output path relative to the output directory, to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

/// SHA-256 of each file, keyed by its path relative to `root`.
pub fn hash_outputs(root: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for f in files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        let key = f
            .strip_prefix(root)
            .unwrap_or(f)
            .to_string_lossy()
            .replace('\\', "/");
        out.insert(key, sha256_hex(&bytes));
    }
    Ok(out)
}

impl RunRecord {
    pub fn new(cfg: &RunConfig, out: &Path, written: &[PathBuf]) -> Result<Self> {
        let mut seeds = BTreeMap::new();
        seeds.insert("seed".to_string(), cfg.seed);
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            analysis: cfg.analysis.map_or("", |a| a.as_str()).to_string(),
            config: cfg.clone(),
            config_hash: config_hash(cfg),
            seeds,
            outputs: hash_outputs(out, written)?,
        })
    }

    /// Rejects records whose configuration was edited after the run.
    pub fn verify(&self) -> Result<()> {
        let actual = config_hash(&self.config);
        if actual != self.config_hash {
            return Err(Error::Config(format!(
                "run record config hash {} does not match its config ({actual})",
                self.config_hash
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::dynamics::write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn tampered_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out: Some(dir.path().to_path_buf()),
            ..RunConfig::default()
        };
        let mut rec = RunRecord::new(&cfg, dir.path(), &[]).unwrap();
        assert!(rec.verify().is_ok());
        rec.config.seed = 7;
        assert_eq!(rec.verify().unwrap_err().exit_code(), 2);
    }
}
