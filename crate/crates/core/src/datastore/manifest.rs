//! Dataset manifests and per-file JSON sidecars.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Activation,
    Target,
    Answer,
    Hidden,
    Unembed,
    Normgain,
}

impl Kind {
    /// Targets and answers describe the stimuli, not a model state, so they
    /// carry no checkpoint.
    pub fn is_per_checkpoint(self) -> bool {
        !matches!(self, Kind::Target | Kind::Answer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Metadata describing one AMX file. Stored next to the file as
/// `<name>.amx.json` and repeated verbatim in manifest entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub checkpoint_id: String,
    pub training_tokens: u64,
    pub layer: usize,
    pub kind: Kind,
    pub group_label: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(flatten)]
    pub meta: Sidecar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointRef<'a> {
    pub id: &'a str,
    pub training_tokens: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    /// Seed used when the splits in this manifest were drawn, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

pub fn sidecar_path(amx_path: &Path) -> PathBuf {
    let mut s = amx_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar(amx_path: &Path, meta: &Sidecar) -> Result<()> {
    let path = sidecar_path(amx_path);
    let text = serde_json::to_string_pretty(meta).expect("sidecar serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_sidecar(amx_path: &Path) -> Result<Sidecar> {
    let path = sidecar_path(amx_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed: None,
            entries: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    /// Reads and validates a manifest; relative entry paths resolve against
    /// the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingData(format!(
                "manifest {} does not exist",
                path.display()
            )));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    /// Builds a manifest from every `*.amx.json` sidecar in `dir`, entries
    /// sorted by path. Checkpoint order is then fixed by the token counts.
    pub fn from_sidecars(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut names = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".amx.json") {
                names.push(format!("{stem}.amx"));
            }
        }
        names.sort();
        let mut entries = Vec::with_capacity(names.len());
        for name in names {
            let meta = read_sidecar(&dir.join(&name))?;
            entries.push(ManifestEntry {
                path: PathBuf::from(name),
                meta,
            });
        }
        entries.sort_by(|a, b| {
            (a.meta.kind.is_per_checkpoint(), a.meta.training_tokens)
                .cmp(&(b.meta.kind.is_per_checkpoint(), b.meta.training_tokens))
        });
        let manifest = Manifest {
            seed: None,
            entries,
            base_dir: dir.to_path_buf(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn push(&mut self, path: impl Into<PathBuf>, meta: Sidecar) {
        self.entries.push(ManifestEntry {
            path: path.into(),
            meta,
        });
    }

    /// Checks entry uniqueness, checkpoint token ordering and path existence.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut tokens_of: BTreeMap<&str, u64> = BTreeMap::new();
        let mut last_tokens: Option<(&str, u64)> = None;
        for e in &self.entries {
            let m = &e.meta;
            let key = (
                m.checkpoint_id.as_str(),
                m.layer,
                m.kind,
                m.group_label.as_str(),
                m.split,
                m.participant.as_deref(),
            );
            if !seen.insert(key) {
                return Err(Error::InvalidInput(format!(
                    "duplicate manifest entry for checkpoint '{}' layer {} kind {:?} group '{}' split {:?}",
                    m.checkpoint_id, m.layer, m.kind, m.group_label, m.split
                )));
            }
            if m.kind.is_per_checkpoint() {
                match tokens_of.get(m.checkpoint_id.as_str()) {
                    Some(&t) if t != m.training_tokens => {
                        return Err(Error::InvalidInput(format!(
                            "checkpoint '{}' listed with token counts {t} and {}",
                            m.checkpoint_id, m.training_tokens
                        )));
                    }
                    Some(_) => {}
                    None => {
                        if let Some((prev, t)) = last_tokens {
                            if m.training_tokens <= t {
                                return Err(Error::InvalidInput(format!(
                                    "training_tokens must increase with checkpoint order: '{}' ({}) follows '{prev}' ({t})",
                                    m.checkpoint_id, m.training_tokens
                                )));
                            }
                        }
                        tokens_of.insert(&m.checkpoint_id, m.training_tokens);
                        last_tokens = Some((&m.checkpoint_id, m.training_tokens));
                    }
                }
            }
            let path = self.resolve(e);
            if !path.exists() {
                return Err(Error::MissingData(format!(
                    "manifest entry {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Checkpoints in manifest order (ascending training tokens).
    pub fn checkpoints(&self) -> Vec<CheckpointRef<'_>> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| e.meta.kind.is_per_checkpoint())
            .filter(|e| seen.insert(e.meta.checkpoint_id.as_str()))
            .map(|e| CheckpointRef {
                id: &e.meta.checkpoint_id,
                training_tokens: e.meta.training_tokens,
            })
            .collect()
    }

    pub fn entries_of(&self, kind: Kind) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.meta.kind == kind)
    }

    /// The unique entry matching all given fields, or a missing-data error.
    pub fn find(
        &self,
        checkpoint_id: &str,
        layer: Option<usize>,
        kind: Kind,
        group_label: &str,
        split: Split,
    ) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| {
                e.meta.kind == kind
                    && e.meta.checkpoint_id == checkpoint_id
                    && layer.is_none_or(|l| e.meta.layer == l)
                    && e.meta.group_label == group_label
                    && e.meta.split == split
            })
            .ok_or_else(|| {
                Error::MissingData(format!(
                    "no {kind:?} entry for checkpoint '{checkpoint_id}' layer {layer:?} group '{group_label}' split {split:?}"
                ))
            })
    }
}
