//! Persistent record/replay cache for completions.
//!
//! The cache file is JSONL, one entry per line, exported sorted by key so
//! exports of equal caches are byte-identical. Import merges by key with the
//! newest timestamp winning; corrupt lines are skipped and counted.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ClientError, CompletionClient, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: String,
    /// Unix seconds at recording time; used only for merge conflicts.
    pub timestamp: u64,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache i/o at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Counters for one run. `hits`/`misses` count lookups, `inserts` counts
/// recorded responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub hits: u64,
    pub misses: u64,
    pub inserts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImportSummary {
    /// Entries applied (new key, or newer than the resident entry).
    pub applied: usize,
    /// Entries ignored because the resident entry was at least as new.
    pub ignored_older: usize,
    /// Lines that failed to parse.
    pub skipped_corrupt: usize,
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: RwLock<HashMap<String, CacheEntry>>,
    hits: AtomicU64,
    misses: AtomicU64,
    inserts: AtomicU64,
}

impl ResponseCache {
    pub fn new() -> Self {
        ResponseCache::default()
    }

    /// Convenience: a cache pre-loaded from a file (missing file = empty).
    pub fn load(path: &Path) -> Result<(Self, ImportSummary), CacheError> {
        let cache = ResponseCache::new();
        if !path.exists() {
            return Ok((cache, ImportSummary::default()));
        }
        let summary = cache.import(path)?;
        Ok((cache, summary))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let found = self.entries.read().expect("cache lock").get(key).map(|e| e.response.clone());
        match &found {
            Some(_) => self.hits.fetch_add(1, Ordering::SeqCst),
            None => self.misses.fetch_add(1, Ordering::SeqCst),
        };
        found
    }

    /// Lookup without touching the hit/miss counters.
    pub fn peek(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, entry: CacheEntry) {
        self.inserts.fetch_add(1, Ordering::SeqCst);
        self.entries.write().expect("cache lock").insert(entry.key.clone(), entry);
    }

    /// Record a response for a request, stamping the current time.
    pub fn record(&self, request: &CompletionRequest, response: &str, provider: Option<&str>) {
        let timestamp =
            SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.insert(CacheEntry {
            key: request.cache_key(),
            response: response.to_string(),
            timestamp,
            model_id: request.model_id.clone(),
            provider: provider.map(str::to_string),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.len(),
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            inserts: self.inserts.load(Ordering::SeqCst),
        }
    }

    pub fn reset_stats(&self) {
        self.hits.store(0, Ordering::SeqCst);
        self.misses.store(0, Ordering::SeqCst);
        self.inserts.store(0, Ordering::SeqCst);
    }

    /// All entries as JSONL, sorted by key.
    pub fn to_jsonl(&self) -> String {
        let mut entries: Vec<CacheEntry> =
            self.entries.read().expect("cache lock").values().cloned().collect();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        let mut out = String::new();
        for entry in entries {
            out.push_str(&serde_json::to_string(&entry).expect("cache entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Write all entries as JSONL, sorted by key. Returns the entry count.
    pub fn export(&self, path: &Path) -> Result<usize, CacheError> {
        let io = |source| CacheError::Io { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
        }
        let count = self.len();
        let mut writer = BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writer.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        writer.flush().map_err(io)?;
        Ok(count)
    }

    /// Merge JSONL cache lines into this cache. Newer timestamps win; ties
    /// keep the resident entry. Corrupt lines are skipped and counted.
    pub fn merge_jsonl(&self, text: &str) -> ImportSummary {
        let mut summary = ImportSummary::default();
        let mut entries = self.entries.write().expect("cache lock");
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let incoming: CacheEntry = match serde_json::from_str(line) {
                Ok(entry) => entry,
                Err(_) => {
                    summary.skipped_corrupt += 1;
                    continue;
                }
            };
            match entries.get(&incoming.key) {
                Some(resident) if resident.timestamp >= incoming.timestamp => {
                    summary.ignored_older += 1;
                }
                _ => {
                    entries.insert(incoming.key.clone(), incoming);
                    summary.applied += 1;
                }
            }
        }
        summary
    }

    /// Merge a JSONL cache file into this cache; see [`Self::merge_jsonl`].
    pub fn import(&self, path: &Path) -> Result<ImportSummary, CacheError> {
        let io = |source| CacheError::Io { path: path.to_path_buf(), source };
        let text = std::fs::read_to_string(path).map_err(io)?;
        Ok(self.merge_jsonl(&text))
    }
}

/// Wraps an inner client with read-through caching. Without an inner client
/// it is a cache-only backend: misses fail with [`ClientError::CacheOnlyMiss`].
pub struct CachingClient {
    inner: Option<Arc<dyn CompletionClient>>,
    cache: Arc<ResponseCache>,
}

impl CachingClient {
    pub fn new(inner: Arc<dyn CompletionClient>, cache: Arc<ResponseCache>) -> Self {
        CachingClient { inner: Some(inner), cache }
    }

    pub fn cache_only(cache: Arc<ResponseCache>) -> Self {
        CachingClient { inner: None, cache }
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }
}

#[async_trait]
impl CompletionClient for CachingClient {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        request.validate()?;
        let key = request.cache_key();
        if let Some(response) = self.cache.get(&key) {
            return Ok(response);
        }
        match &self.inner {
            Some(inner) => {
                let response = inner.complete(request).await?;
                self.cache.record(request, &response, Some(inner.name()));
                Ok(response)
            }
            None => Err(ClientError::CacheOnlyMiss { key }),
        }
    }

    fn name(&self) -> &'static str {
        match self.inner {
            Some(_) => "caching",
            None => "cache-only",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::scripted::ScriptedClient;

    fn entry(key: &str, response: &str, timestamp: u64) -> CacheEntry {
        CacheEntry {
            key: key.to_string(),
            response: response.to_string(),
            timestamp,
            model_id: "m".to_string(),
            provider: None,
        }
    }

    #[tokio::test]
    async fn hit_returns_identical_response_with_zero_upstream_calls() {
        let cache = Arc::new(ResponseCache::new());
        let request = CompletionRequest::new("p", "m");
        cache.insert(entry(&request.cache_key(), "canned", 1));
        let upstream = Arc::new(ScriptedClient::new(["never used"]));
        let calls_before = upstream.calls();
        let client = CachingClient::new(upstream.clone(), cache);
        assert_eq!(client.complete(&request).await.unwrap(), "canned");
        assert_eq!(upstream.calls(), calls_before);
    }

    #[tokio::test]
    async fn same_request_twice_costs_one_upstream_call() {
        let upstream = Arc::new(ScriptedClient::new(["answer"]));
        let client = CachingClient::new(upstream.clone(), Arc::new(ResponseCache::new()));
        let request = CompletionRequest::new("p", "m");
        assert_eq!(client.complete(&request).await.unwrap(), "answer");
        assert_eq!(client.complete(&request).await.unwrap(), "answer");
        assert_eq!(upstream.calls(), 1);
        let stats = client.cache().stats();
        assert_eq!((stats.hits, stats.misses, stats.inserts, stats.entries), (1, 1, 1, 1));
    }

    #[tokio::test]
    async fn cache_only_miss_is_typed() {
        let client = CachingClient::cache_only(Arc::new(ResponseCache::new()));
        let request = CompletionRequest::new("p", "m");
        let err = client.complete(&request).await.unwrap_err();
        match err {
            ClientError::CacheOnlyMiss { key } => assert_eq!(key, request.cache_key()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn export_import_round_trips_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = ResponseCache::new();
        cache.insert(entry("bbb", "2", 5));
        cache.insert(entry("aaa", "1", 9));
        cache.export(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Vec<CacheEntry> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed.len(), 2);
        assert!(parsed[0].key < parsed[1].key);

        let other = ResponseCache::new();
        let summary = other.import(&path).unwrap();
        assert_eq!(summary, ImportSummary { applied: 2, ignored_older: 0, skipped_corrupt: 0 });
        assert_eq!(other.peek("aaa").unwrap(), entry("aaa", "1", 9));
        assert_eq!(other.peek("bbb").unwrap(), entry("bbb", "2", 5));

        // Exports of equal caches are byte-identical.
        let path2 = dir.path().join("cache2.jsonl");
        other.export(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn import_merges_newest_timestamp_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");

        let exporter = ResponseCache::new();
        exporter.insert(entry("k1", "new", 10));
        exporter.insert(entry("k2", "old", 1));
        exporter.insert(entry("k3", "tie", 5));
        exporter.export(&path).unwrap();

        let cache = ResponseCache::new();
        cache.insert(entry("k1", "resident-old", 2));
        cache.insert(entry("k2", "resident-new", 7));
        cache.insert(entry("k3", "resident-tie", 5));
        let summary = cache.import(&path).unwrap();
        assert_eq!(summary, ImportSummary { applied: 1, ignored_older: 2, skipped_corrupt: 0 });
        assert_eq!(cache.peek("k1").unwrap().response, "new");
        assert_eq!(cache.peek("k2").unwrap().response, "resident-new");
        assert_eq!(cache.peek("k3").unwrap().response, "resident-tie");
    }

    #[test]
    fn corrupt_lines_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let good = serde_json::to_string(&entry("k", "v", 1)).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n{{\"key\":\"partial\"\n\n")).unwrap();
        let cache = ResponseCache::new();
        let summary = cache.import(&path).unwrap();
        assert_eq!(summary, ImportSummary { applied: 1, ignored_older: 0, skipped_corrupt: 2 });
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn import_of_empty_file_is_a_noop() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let cache = ResponseCache::new();
        cache.insert(entry("k", "v", 1));
        let summary = cache.import(&path).unwrap();
        assert_eq!(summary, ImportSummary::default());
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn load_tolerates_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let (cache, summary) = ResponseCache::load(&dir.path().join("absent.jsonl")).unwrap();
        assert!(cache.is_empty());
        assert_eq!(summary, ImportSummary::default());
    }
}
