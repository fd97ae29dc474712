//! Turning predicted dialogue acts into natural-language utterances using
//! templates harvested from a training split.
//!
//! The store groups gold user utterances by their exact ordered act set.
//! Realization prefers an exact act-set match, then backs off to the first
//! act's single-act templates, then to a fixed per-category stub. The
//! backoff chain beyond exact matching is an engineering addition so that
//! realization is total.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionEvent, Session, SpeakerRole};
use crate::prompting::derive_query_seed;
use crate::taxonomy::{ActCategory, DialogueAct};

/// Store key for an ordered act set: comma-joined canonical names.
pub fn acts_key(acts: &[DialogueAct]) -> String {
    acts.iter().map(|a| a.canonical_name()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub text: String,
    /// How many gold turns used this exact utterance for this act set.
    pub count: usize,
}

/// Utterance templates keyed by ordered act set. Within a key, entries are
/// unique by text and sorted by text, so the store is deterministic for a
/// given split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateStore {
    entries: BTreeMap<String, Vec<TemplateEntry>>,
}

#[derive(Debug, Error)]
pub enum RealizeError {
    #[error("cannot build a template store: the split has no user speak turns")]
    EmptySplit,
    #[error("template store i/o at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("template store at {path} is not valid: {message}")]
    Format { path: PathBuf, message: String },
}

impl TemplateStore {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct act-set keys.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Total gold turns behind the store (sum of all counts).
    pub fn total_count(&self) -> usize {
        self.entries.values().flatten().map(|e| e.count).sum()
    }

    pub fn templates(&self, key: &str) -> Option<&[TemplateEntry]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<(), RealizeError> {
        let io = |source| RealizeError::Io { path: path.to_path_buf(), source };
        let json = serde_json::to_string_pretty(self).expect("store serializes");
        std::fs::write(path, json + "\n").map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, RealizeError> {
        let io = |source| RealizeError::Io { path: path.to_path_buf(), source };
        let text = std::fs::read_to_string(path).map_err(io)?;
        serde_json::from_str(&text)
            .map_err(|e| RealizeError::Format { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// Group the split's gold user utterances by exact ordered act set.
pub fn build_template_store(sessions: &[&Session]) -> Result<TemplateStore, RealizeError> {
    let mut grouped: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for session in sessions {
        for step in &session.steps {
            if step.actor != SpeakerRole::Commander {
                continue;
            }
            if let ActionEvent::Speak { utterance, acts } = &step.action {
                *grouped.entry(acts_key(acts)).or_default().entry(utterance.clone()).or_insert(0) +=
                    1;
            }
        }
    }
    if grouped.is_empty() {
        return Err(RealizeError::EmptySplit);
    }
    let entries = grouped
        .into_iter()
        .map(|(key, texts)| {
            let templates =
                texts.into_iter().map(|(text, count)| TemplateEntry { text, count }).collect();
            (key, templates)
        })
        .collect();
    Ok(TemplateStore { entries })
}

/// Fixed fallback utterance per act category, used when the store has no
/// matching templates at all.
pub fn category_stub(category: ActCategory) -> &'static str {
    match category {
        ActCategory::Instruction => "please continue the task",
        ActCategory::ObjectLocation => "check around the kitchen",
        ActCategory::Generic => "okay",
        ActCategory::Feedback => "good",
        ActCategory::Interface => "try again",
    }
}

/// Weighted draw among a key's templates: the same (templates, seed, key)
/// always picks the same text, and more frequent gold utterances are more
/// likely across seeds.
fn pick(templates: &[TemplateEntry], seed: u64, key: &str) -> String {
    let total: usize = templates.iter().map(|e| e.count.max(1)).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_query_seed(seed, key, 0));
    let mut roll = rng.random_range(0..total);
    for entry in templates {
        let weight = entry.count.max(1);
        if roll < weight {
            return entry.text.clone();
        }
        roll -= weight;
    }
    unreachable!("roll bounded by total weight")
}

/// Realize an utterance for an act set: exact key, else first act's
/// single-act key, else the first act's category stub. Total and
/// deterministic under a fixed seed.
pub fn realize(acts: &[DialogueAct], store: &TemplateStore, seed: u64) -> String {
    let Some(first) = acts.first() else {
        return category_stub(ActCategory::Generic).to_string();
    };
    let exact_key = acts_key(acts);
    if let Some(templates) = store.templates(&exact_key) {
        return pick(templates, seed, &exact_key);
    }
    let single_key = first.canonical_name();
    if let Some(templates) = store.templates(single_key) {
        return pick(templates, seed, single_key);
    }
    category_stub(first.category()).to_string()
}
