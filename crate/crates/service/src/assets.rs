//! Opaque image tokens. URLs handed to raters are `/assets/<token>`, where
//! the token is a keyed hash that reveals nothing about the model.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use arena_eval_core::io::read_jsonl;
use arena_eval_core::model::ModelId;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub model: ModelId,
    pub prompt_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct AssetStore {
    key: Vec<u8>,
    files: HashMap<String, PathBuf>,
}

impl AssetStore {
    pub fn new(seed: u64) -> Self {
        Self { key: seed.to_le_bytes().to_vec(), files: HashMap::new() }
    }

    /// Loads an asset manifest. Relative paths resolve against the
    /// manifest's directory.
    pub fn load(seed: u64, manifest: &Path) -> Result<Self, ServiceError> {
        let entries: Vec<AssetEntry> = read_jsonl(manifest).map_err(|e| ServiceError::Config(e.to_string()))?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut store = Self::new(seed);
        for e in entries {
            let path = if e.path.is_relative() { base.join(&e.path) } else { e.path.clone() };
            let token = store.image_token(&e.model, &e.prompt_id);
            store.files.insert(token, path);
        }
        Ok(store)
    }

    fn token(&self, parts: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(&self.key);
        for p in parts {
            h.update([0u8]);
            h.update(p.as_bytes());
        }
        let digest = h.finalize();
        digest[..12].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn image_token(&self, model: &ModelId, prompt_id: &str) -> String {
        self.token(&["image", model.as_str(), prompt_id])
    }

    pub fn reference_token(&self, prompt_set: &str, prompt_id: &str) -> String {
        self.token(&["reference", prompt_set, prompt_id])
    }

    pub fn image_url(&self, model: &ModelId, prompt_id: &str) -> String {
        format!("/assets/{}", self.image_token(model, prompt_id))
    }

    /// Registers a reference image and returns its URL.
    pub fn add_reference(&mut self, prompt_set: &str, prompt_id: &str, path: PathBuf) -> String {
        let token = self.reference_token(prompt_set, prompt_id);
        self.files.insert(token.clone(), path);
        format!("/assets/{token}")
    }

    pub fn reference_url(&self, prompt_set: &str, prompt_id: &str) -> String {
        format!("/assets/{}", self.reference_token(prompt_set, prompt_id))
    }

    pub fn resolve(&self, token: &str) -> Option<&Path> {
        self.files.get(token).map(PathBuf::as_path)
    }
}

pub fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}
