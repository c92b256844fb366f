use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

use super::{CategorizationResult, CategorySource, Classifier};

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    query: String,
    result: CategorizationResult,
}

/// Classification results keyed by the SHA-256 of the query text, optionally
/// persisted as append-only JSONL.
#[derive(Debug, Default)]
pub struct ClassificationCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CategorizationResult>>,
}

impl ClassificationCache {
    pub fn in_memory() -> Self {
        ClassificationCache::default()
    }

    /// Opens (or starts) a cache file. Later lines win on duplicate keys.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(std::fs::File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(&line)?;
                entries.insert(entry.key, entry.result);
            }
        }
        Ok(ClassificationCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
        })
    }

    pub fn key(query_text: &str) -> String {
        hex::encode(Sha256::digest(query_text.as_bytes()))
    }

    pub fn get(&self, query_text: &str) -> Option<CategorizationResult> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&Self::key(query_text))
            .cloned()
    }

    pub fn insert(&self, query_text: &str, result: &CategorizationResult) -> Result<()> {
        let key = Self::key(query_text);
        let mut entries = self.entries.write().expect("cache lock");
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                query: query_text.to_string(),
                result: result.clone(),
            })?;
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{line}")?;
        }
        entries.insert(key, result.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wraps a classifier so each distinct query is classified once.
pub struct CachedClassifier<C> {
    pub inner: C,
    pub cache: ClassificationCache,
}

impl<C: Classifier> Classifier for CachedClassifier<C> {
    fn classify(&self, query_text: &str) -> Result<CategorizationResult> {
        if let Some(hit) = self.cache.get(query_text) {
            return Ok(hit);
        }
        let result = self.inner.classify(query_text)?;
        self.cache.insert(query_text, &result)?;
        Ok(result)
    }

    fn source(&self) -> CategorySource {
        self.inner.source()
    }
}
