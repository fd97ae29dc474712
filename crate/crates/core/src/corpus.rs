//! Canonical corpus serialization and corpus statistics.
//!
//! On disk a corpus is UTF-8 JSONL: one session record per line, each with a
//! mandatory `schema_version`. Sessions are validated on load; in lenient
//! mode invalid sessions are kept and their violations reported alongside,
//! in strict mode any violation fails the load.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    classify_step, validate_session, ActionEvent, Session, SpeakerRole, Step, StepKind,
    StepKindCounts, Violation,
};
use crate::taxonomy::DialogueAct;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid record: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { line: usize, found: u32 },
    #[error("line {line}: record is malformed: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate session id {id:?}")]
    DuplicateId { id: String },
    #[error("unknown split {split:?}")]
    UnknownSplit { split: String },
    #[error("{failed} of {total} sessions failed validation in strict mode; first: {first}")]
    Validation { failed: usize, total: usize, first: String },
}

/// Wire form of one step in the canonical record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub actor: SpeakerRole,
    pub kind: StepRecordKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utterance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acts: Option<Vec<DialogueAct>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verb: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRecordKind {
    Speak,
    Physical,
}

/// Wire form of one session (one JSONL line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub goal: String,
    pub steps: Vec<StepRecord>,
}

impl From<&Step> for StepRecord {
    fn from(step: &Step) -> Self {
        match &step.action {
            ActionEvent::Speak { utterance, acts } => StepRecord {
                actor: step.actor,
                kind: StepRecordKind::Speak,
                utterance: Some(utterance.clone()),
                acts: Some(acts.clone()),
                verb: None,
                target: None,
            },
            ActionEvent::Physical { verb, target } => StepRecord {
                actor: step.actor,
                kind: StepRecordKind::Physical,
                utterance: None,
                acts: None,
                verb: Some(verb.clone()),
                target: target.clone(),
            },
            // Stored observes violate the model invariant; represent as an
            // empty physical so the violation survives a round trip.
            ActionEvent::Observe => StepRecord {
                actor: step.actor,
                kind: StepRecordKind::Physical,
                utterance: None,
                acts: None,
                verb: Some(String::new()),
                target: None,
            },
        }
    }
}

impl From<&Session> for SessionRecord {
    fn from(session: &Session) -> Self {
        SessionRecord {
            schema_version: SCHEMA_VERSION,
            id: session.id.clone(),
            split: session.split.clone(),
            goal: session.goal.clone(),
            steps: session.steps.iter().map(StepRecord::from).collect(),
        }
    }
}

impl SessionRecord {
    pub fn into_session(self) -> Result<Session, String> {
        let mut steps = Vec::with_capacity(self.steps.len());
        for (index, record) in self.steps.into_iter().enumerate() {
            let action = match record.kind {
                StepRecordKind::Speak => {
                    let utterance = record.utterance.unwrap_or_default();
                    let acts = record
                        .acts
                        .ok_or_else(|| format!("step {index}: speak step without acts"))?;
                    ActionEvent::Speak { utterance, acts }
                }
                StepRecordKind::Physical => {
                    let verb = record
                        .verb
                        .ok_or_else(|| format!("step {index}: physical step without verb"))?;
                    ActionEvent::Physical { verb, target: record.target }
                }
            };
            steps.push(Step::new(index, record.actor, action));
        }
        let mut session = Session::new(self.id, self.goal, steps);
        session.split = self.split;
        Ok(session)
    }
}

/// An in-memory corpus: sessions with unique ids plus a split index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sessions: Vec<Session>,
    by_id: HashMap<String, usize>,
    split_index: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    pub fn new(sessions: Vec<Session>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::new();
        let mut split_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, session) in sessions.iter().enumerate() {
            if by_id.insert(session.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { id: session.id.clone() });
            }
            if let Some(split) = &session.split {
                split_index.entry(split.clone()).or_default().push(session.id.clone());
            }
        }
        Ok(Corpus { sessions, by_id, split_index })
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn get(&self, id: &str) -> Option<&Session> {
        self.by_id.get(id).map(|&i| &self.sessions[i])
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn split_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.split_index
    }

    /// Sessions of one split, or all sessions when `split` is None.
    /// Unknown split labels are an error rather than an empty iterator, so
    /// typos surface.
    pub fn split_sessions(&self, split: Option<&str>) -> Result<Vec<&Session>, CorpusError> {
        match split {
            None => Ok(self.sessions.iter().collect()),
            Some(label) => {
                let ids = self
                    .split_index
                    .get(label)
                    .ok_or_else(|| CorpusError::UnknownSplit { split: label.to_string() })?;
                Ok(ids.iter().map(|id| self.get(id).expect("indexed id exists")).collect())
            }
        }
    }
}

/// Aggregate statistics over a corpus slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sessions: usize,
    pub n_steps: usize,
    pub frac_user_speak: f64,
    pub frac_robot_speak: f64,
    pub frac_robot_physical: f64,
}

/// Step-kind fractions over every step of the split (all splits when None).
/// Fractions are 0 for an empty slice and otherwise sum to 1.
pub fn corpus_stats(corpus: &Corpus, split: Option<&str>) -> Result<CorpusStats, CorpusError> {
    let sessions = corpus.split_sessions(split)?;
    let mut counts = StepKindCounts::default();
    for session in &sessions {
        for step in &session.steps {
            if let Ok(kind) = classify_step(step) {
                counts.add(kind);
            }
        }
    }
    let total = counts.total as f64;
    let frac = |n: usize| if counts.total == 0 { 0.0 } else { n as f64 / total };
    Ok(CorpusStats {
        n_sessions: sessions.len(),
        n_steps: counts.total,
        frac_user_speak: frac(counts.user_speak),
        frac_robot_speak: frac(counts.robot_speak),
        frac_robot_physical: frac(counts.robot_physical),
    })
}

/// Count user speak turns per act over a corpus slice. A multi-act turn
/// counts once for each of its acts.
pub fn user_act_counts(sessions: &[&Session]) -> BTreeMap<DialogueAct, usize> {
    let mut counts = BTreeMap::new();
    for session in sessions {
        for step in &session.steps {
            if classify_step(step) == Ok(StepKind::UserSpeak) {
                if let ActionEvent::Speak { acts, .. } = &step.action {
                    for act in acts {
                        *counts.entry(*act).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    counts
}

/// Validation findings for one loaded session.
#[derive(Debug)]
pub struct SessionIssue {
    pub id: String,
    pub line: usize,
    pub violations: Vec<Violation>,
}

#[derive(Debug)]
pub struct LoadOutcome {
    pub corpus: Corpus,
    /// Sessions that loaded but violated invariants (lenient mode keeps them).
    pub issues: Vec<SessionIssue>,
}

/// Load a canonical JSONL corpus. With `strict`, any validation violation
/// fails the load; otherwise violations are reported in the outcome.
pub fn load_corpus(path: impl AsRef<Path>, strict: bool) -> Result<LoadOutcome, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut sessions = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SessionRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Record { line: line_no, source })?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(CorpusError::SchemaVersion { line: line_no, found: record.schema_version });
        }
        let session = record
            .into_session()
            .map_err(|message| CorpusError::Malformed { line: line_no, message })?;
        let violations = validate_session(&session);
        if !violations.is_empty() {
            issues.push(SessionIssue { id: session.id.clone(), line: line_no, violations });
        }
        sessions.push(session);
    }

    if strict && !issues.is_empty() {
        let first = &issues[0];
        return Err(CorpusError::Validation {
            failed: issues.len(),
            total: sessions.len(),
            first: format!("{} (line {}): {}", first.id, first.line, first.violations[0]),
        });
    }

    let corpus = Corpus::new(sessions)?;
    Ok(LoadOutcome { corpus, issues })
}

/// Write a corpus in the canonical JSONL format.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let to_io = |source| CorpusError::Io { path: path.display().to_string(), source };
    let mut file = fs::File::create(path).map_err(to_io)?;
    for session in corpus.sessions() {
        let record = SessionRecord::from(session);
        let line = serde_json::to_string(&record).expect("session record serializes");
        file.write_all(line.as_bytes()).map_err(to_io)?;
        file.write_all(b"\n").map_err(to_io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::DialogueAct::*;
    use SpeakerRole::*;

    fn small_session(id: &str, split: &str) -> Session {
        let steps = vec![
            Step::new(0, Driver, ActionEvent::speak("what should i do today?", vec![RequestForInstruction])),
            Step::new(1, Commander, ActionEvent::speak("water the plant", vec![Instruction])),
            Step::new(2, Driver, ActionEvent::physical("pickup", Some("WateringCan"))),
        ];
        Session::new(id, "Water the plant.", steps).with_split(split)
    }

    #[test]
    fn canonical_round_trip_preserves_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = Corpus::new(vec![small_session("a", "train"), small_session("b", "valid-seen")]).unwrap();
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path, true).unwrap();
        assert!(loaded.issues.is_empty());
        assert_eq!(loaded.corpus.sessions(), corpus.sessions());
    }

    #[test]
    fn record_shape_matches_the_documented_format() {
        let record = SessionRecord::from(&small_session("a", "train"));
        let json = serde_json::to_value(&record).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["id"], "a");
        assert_eq!(json["split"], "train");
        assert_eq!(json["steps"][0]["actor"], "driver");
        assert_eq!(json["steps"][0]["kind"], "speak");
        assert_eq!(json["steps"][0]["acts"][0], "RequestForInstruction");
        assert_eq!(json["steps"][2]["kind"], "physical");
        assert_eq!(json["steps"][2]["verb"], "pickup");
        assert_eq!(json["steps"][2]["target"], "WateringCan");
        assert!(json["steps"][2].get("utterance").is_none());
    }

    #[test]
    fn unknown_schema_version_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        fs::write(&path, "{\"schema_version\":99,\"id\":\"x\",\"goal\":\"g\",\"steps\":[]}\n").unwrap();
        assert!(matches!(
            load_corpus(&path, false),
            Err(CorpusError::SchemaVersion { line: 1, found: 99 })
        ));
    }

    #[test]
    fn duplicate_ids_fail() {
        let result = Corpus::new(vec![small_session("dup", "train"), small_session("dup", "train")]);
        assert!(matches!(result, Err(CorpusError::DuplicateId { .. })));
    }

    #[test]
    fn corrupt_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let good = serde_json::to_string(&SessionRecord::from(&small_session("a", "train"))).unwrap();
        fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        match load_corpus(&path, false) {
            Err(CorpusError::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn lenient_load_keeps_invalid_sessions_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        // Empty goal violates validation but parses fine.
        let line = "{\"schema_version\":1,\"id\":\"bad\",\"goal\":\"\",\"steps\":[]}";
        fs::write(&path, format!("{line}\n")).unwrap();
        let outcome = load_corpus(&path, false).unwrap();
        assert_eq!(outcome.corpus.len(), 1);
        assert_eq!(outcome.issues.len(), 1);
        assert_eq!(outcome.issues[0].id, "bad");
        assert!(matches!(load_corpus(&path, true), Err(CorpusError::Validation { failed: 1, .. })));
    }

    #[test]
    fn stats_sum_to_one_and_respect_splits() {
        let corpus = Corpus::new(vec![
            small_session("a", "train"),
            small_session("b", "train"),
            small_session("c", "valid-seen"),
        ])
        .unwrap();
        let train = corpus_stats(&corpus, Some("train")).unwrap();
        assert_eq!(train.n_sessions, 2);
        assert_eq!(train.n_steps, 6);
        let sum = train.frac_user_speak + train.frac_robot_speak + train.frac_robot_physical;
        assert!((sum - 1.0).abs() < 1e-9);
        assert!((train.frac_user_speak - 1.0 / 3.0).abs() < 1e-12);

        let all = corpus_stats(&corpus, None).unwrap();
        assert_eq!(all.n_sessions, 3);
        assert_eq!(all.n_steps, 9);

        assert!(matches!(
            corpus_stats(&corpus, Some("nope")),
            Err(CorpusError::UnknownSplit { .. })
        ));
    }

    #[test]
    fn empty_split_yields_zero_fractions() {
        let empty = Session::new("empty", "nothing", vec![]).with_split("valid-seen");
        let corpus = Corpus::new(vec![empty]).unwrap();
        let stats = corpus_stats(&corpus, Some("valid-seen")).unwrap();
        assert_eq!(stats.n_steps, 0);
        assert_eq!(stats.frac_user_speak, 0.0);
        assert_eq!(stats.frac_robot_speak, 0.0);
        assert_eq!(stats.frac_robot_physical, 0.0);
    }

    #[test]
    fn user_act_counts_count_each_act_of_multi_act_turns() {
        let steps = vec![
            Step::new(0, Commander, ActionEvent::speak("hi there", vec![GreetingsSalutations, Instruction])),
            Step::new(1, Commander, ActionEvent::speak("go", vec![Instruction])),
            Step::new(2, Driver, ActionEvent::speak("ok", vec![Acknowledge])),
        ];
        let session = Session::new("s", "g", steps);
        let counts = user_act_counts(&[&session]);
        assert_eq!(counts.get(&Instruction), Some(&2));
        assert_eq!(counts.get(&GreetingsSalutations), Some(&1));
        assert_eq!(counts.get(&Acknowledge), None, "driver turns never counted");
    }
}
