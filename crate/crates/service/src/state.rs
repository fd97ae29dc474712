use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use usersim_core::corpus::Corpus;
use usersim_core::llm::ResponseCache;

/// Startup options.
#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// JSONL cache file loaded at startup and rewritten after runs that
    /// insert new responses.
    pub cache_path: Option<PathBuf>,
}

pub struct ServiceState {
    pub config: ServiceConfig,
    corpora: RwLock<HashMap<String, Arc<Corpus>>>,
    pub cache: Arc<ResponseCache>,
}

impl ServiceState {
    /// Build state, loading the cache file when configured (a missing file
    /// is an empty cache).
    pub fn new(config: ServiceConfig) -> std::io::Result<Self> {
        let cache = match &config.cache_path {
            Some(path) => {
                let (cache, _) = ResponseCache::load(path)
                    .map_err(|e| std::io::Error::other(e.to_string()))?;
                cache
            }
            None => ResponseCache::new(),
        };
        Ok(ServiceState { config, corpora: RwLock::new(HashMap::new()), cache: Arc::new(cache) })
    }

    pub fn corpus(&self, name: &str) -> Option<Arc<Corpus>> {
        self.corpora.read().expect("corpora lock").get(name).cloned()
    }

    pub fn put_corpus(&self, name: String, corpus: Corpus) {
        self.corpora.write().expect("corpora lock").insert(name, Arc::new(corpus));
    }

    pub fn corpus_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.corpora.read().expect("corpora lock").keys().cloned().collect();
        names.sort();
        names
    }

    /// Rewrite the configured cache file from memory; no-op when unset.
    pub fn persist_cache(&self) -> std::io::Result<()> {
        if let Some(path) = &self.config.cache_path {
            self.cache.export(path).map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        Ok(())
    }
}
