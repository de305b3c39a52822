//! Plain-JSON artifact store: `datasets/`, `models/` and `explanations/`
//! under one root directory. Every write goes to a temporary file in the
//! target directory and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topoexplain::synth::Dataset;
use topoexplain::GcnModel;

use crate::error::{Result, ServiceError};

/// Generator family of a stored dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[value(alias = "bashapes")]
    BaShapes,
    #[value(alias = "treecycles")]
    TreeCycles,
    #[value(alias = "treegrid")]
    TreeGrid,
    #[value(alias = "biasedsbm", alias = "sbm")]
    BiasedSbm,
    Multilabel,
}

impl Family {
    /// Identifier used when the caller does not choose one.
    pub fn default_id(self) -> &'static str {
        match self {
            Family::BaShapes => "bashapes",
            Family::TreeCycles => "treecycles",
            Family::TreeGrid => "treegrid",
            Family::BiasedSbm => "biasedsbm",
            Family::Multilabel => "multilabel",
        }
    }
}

/// A generated dataset with the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredDataset {
    pub id: String,
    pub family: Family,
    pub config: serde_json::Value,
    pub data: Dataset,
}

/// File contents together with their SHA-256.
pub struct Loaded<T> {
    pub value: T,
    pub sha256: String,
}

pub struct Workspace {
    root: PathBuf,
}

const DATASETS: &str = "datasets";
const MODELS: &str = "models";
const EXPLANATIONS: &str = "explanations";

/// Identifiers are 1 to 64 characters from `[A-Za-z0-9_-]`.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(ServiceError::BadRequest(format!(
            "invalid identifier '{id}': use 1-64 characters from [A-Za-z0-9_-]"
        )))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Workspace {
    /// Opens (creating if needed) the workspace rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in [DATASETS, MODELS, EXPLANATIONS] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, sub: &str, id: &str) -> PathBuf {
        self.root.join(sub).join(format!("{id}.json"))
    }

    pub fn dataset_path(&self, id: &str) -> PathBuf {
        self.path(DATASETS, id)
    }

    pub fn model_path(&self, id: &str) -> PathBuf {
        self.path(MODELS, id)
    }

    /// Ids of all stored datasets, sorted.
    pub fn dataset_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join(DATASETS))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    if validate_id(stem).is_ok() {
                        ids.push(stem.to_string());
                    }
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn save_dataset(&self, d: &StoredDataset) -> Result<PathBuf> {
        validate_id(&d.id)?;
        let path = self.dataset_path(&d.id);
        write_atomic(&path, serde_json::to_string(d)?.as_bytes())?;
        Ok(path)
    }

    pub fn load_dataset(&self, id: &str) -> Result<Loaded<StoredDataset>> {
        validate_id(id)?;
        let bytes = read_if_exists(&self.dataset_path(id))?
            .ok_or_else(|| ServiceError::NotFound(format!("unknown dataset '{id}'")))?;
        let value: StoredDataset = serde_json::from_slice(&bytes)
            .map_err(|e| ServiceError::Internal(format!("corrupt dataset '{id}': {e}")))?;
        Ok(Loaded {
            value,
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn has_model(&self, id: &str) -> bool {
        self.model_path(id).is_file()
    }

    /// Stores the model trained for dataset `id`; returns its path and hash.
    pub fn save_model(&self, id: &str, model: &GcnModel) -> Result<(PathBuf, String)> {
        validate_id(id)?;
        let json = model.to_json()?;
        let path = self.model_path(id);
        write_atomic(&path, json.as_bytes())?;
        Ok((path, sha256_hex(json.as_bytes())))
    }

    /// The model for dataset `id`; `Conflict` when none has been trained.
    pub fn load_model(&self, id: &str) -> Result<Loaded<GcnModel>> {
        validate_id(id)?;
        let bytes = read_if_exists(&self.model_path(id))?.ok_or_else(|| {
            ServiceError::Conflict(format!("no trained model for dataset '{id}'"))
        })?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| ServiceError::Internal(format!("corrupt model '{id}': {e}")))?;
        let value = GcnModel::from_json(text)
            .map_err(|e| ServiceError::Internal(format!("corrupt model '{id}': {e}")))?;
        Ok(Loaded {
            value,
            sha256: sha256_hex(&bytes),
        })
    }

    /// Cached explanation body under content key `key`.
    pub fn cached_explanation(&self, key: &str) -> Result<Option<Vec<u8>>> {
        read_if_exists(&self.path(EXPLANATIONS, key))
    }

    /// Stores `body` under `key` unless an entry exists; returns the stored
    /// body, which is the earlier one on a race.
    pub fn store_explanation(&self, key: &str, body: Vec<u8>) -> Result<Vec<u8>> {
        let path = self.path(EXPLANATIONS, key);
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join(EXPLANATIONS))?;
        tmp.write_all(&body)?;
        tmp.as_file().sync_all()?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(body),
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => Ok(fs::read(&path)?),
            Err(e) => Err(e.error.into()),
        }
    }
}

fn read_if_exists(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Writes via a temporary sibling file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| ServiceError::Internal(format!("{} has no parent", path.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
