//! Content-addressed on-disk cache for remote fill-mask responses.

use std::path::{Path, PathBuf};

use mgt_core::backend::{Backend, BackendDescriptor, BackendError, FillMaskBackend, MaskQuery, TokenProbability};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Serialize, Deserialize)]
struct Entry {
    model: String,
    text: String,
    top_k: usize,
    predictions: Vec<TokenProbability>,
}

/// Key of one `(model, rendered text, top_k)` request.
pub fn cache_key(model: &str, text: &str, top_k: usize) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    h.update([0]);
    h.update(top_k.to_le_bytes());
    hex::encode(h.finalize())
}

/// Wraps a backend with a results cache. Synthetic backends are never
/// cached: they are cheap and deterministic.
#[derive(Debug)]
pub struct CachedBackend {
    inner: Backend,
    dir: Option<PathBuf>,
}

impl CachedBackend {
    pub fn new(inner: Backend, dir: Option<PathBuf>) -> Self {
        let dir = dir.filter(|_| inner.is_remote());
        Self { inner, dir }
    }

    pub fn uncached(inner: Backend) -> Self {
        Self { inner, dir: None }
    }

    pub fn cache_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn lookup(dir: &Path, key: &str, model: &str, query: &MaskQuery, top_k: usize) -> Option<Vec<TokenProbability>> {
        let text = std::fs::read_to_string(Self::path_for(dir, key)).ok()?;
        let entry: Entry = serde_json::from_str(&text).ok()?;
        // Guard against hash collisions and hand-edited files.
        (entry.model == model && entry.text == query.text && entry.top_k == top_k).then_some(entry.predictions)
    }

    fn store(dir: &Path, key: &str, entry: &Entry) -> std::io::Result<()> {
        let path = Self::path_for(dir, key);
        let parent = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        serde_json::to_writer(&mut tmp, entry)?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

impl FillMaskBackend for CachedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    async fn fill_mask(&self, query: &MaskQuery, top_k: usize) -> Result<Vec<TokenProbability>, BackendError> {
        let Some(dir) = &self.dir else {
            return self.inner.fill_mask(query, top_k).await;
        };
        let model = &self.inner.descriptor().name;
        let key = cache_key(model, &query.text, top_k);
        if let Some(hit) = Self::lookup(dir, &key, model, query, top_k) {
            return Ok(hit);
        }
        let predictions = self.inner.fill_mask(query, top_k).await?;
        let entry = Entry {
            model: model.clone(),
            text: query.text.clone(),
            top_k,
            predictions,
        };
        // A failed write only costs a future re-query.
        let _ = Self::store(dir, &key, &entry);
        Ok(entry.predictions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_separates_fields() {
        let a = cache_key("m", "ab", 5);
        assert_eq!(a.len(), 64);
        assert_eq!(a, cache_key("m", "ab", 5));
        assert_ne!(a, cache_key("ma", "b", 5));
        assert_ne!(a, cache_key("m", "ab", 4));
    }

    #[test]
    fn synthetic_is_never_cached() {
        let dir = tempfile::tempdir().unwrap();
        let inner = Backend::from_descriptor(BackendDescriptor::synthetic("s"), None).unwrap();
        let cached = CachedBackend::new(inner, Some(dir.path().to_path_buf()));
        assert!(cached.cache_dir().is_none());
    }

    #[test]
    fn store_then_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let q = MaskQuery {
            text: "[MASK] went home.".into(),
            w_index: 0,
        };
        let entry = Entry {
            model: "m".into(),
            text: q.text.clone(),
            top_k: 5,
            predictions: vec![TokenProbability {
                token: "she".into(),
                score: 0.4,
            }],
        };
        let key = cache_key("m", &q.text, 5);
        CachedBackend::store(dir.path(), &key, &entry).unwrap();
        let hit = CachedBackend::lookup(dir.path(), &key, "m", &q, 5).unwrap();
        assert_eq!(hit, entry.predictions);
        assert!(CachedBackend::lookup(dir.path(), &key, "other", &q, 5).is_none());
    }
}
