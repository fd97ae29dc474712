//! Best-effort converter from raw TEACh game files plus a dialogue-act
//! annotation sidecar into the canonical corpus format.
//!
//! The reader is deliberately tolerant about the game schema (field names
//! shift between releases) but strict about the output: every produced
//! session passes model validation or is skipped with a warning.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{validate_session, ActionEvent, Session, SpeakerRole, Step};
use crate::taxonomy::parse_act;

#[derive(Debug, Error)]
pub enum TeachError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("annotation file {path} is not valid JSON: {source}")]
    Annotations {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no game files under {path}")]
    NoGames { path: PathBuf },
    #[error("duplicate game id {id:?}")]
    DuplicateGame { id: String },
}

/// Per-utterance annotation: the dialogue acts for the i-th utterance of a
/// game, in interaction order.
#[derive(Debug, Clone, Deserialize)]
struct UtteranceAnnotation {
    acts: Vec<String>,
}

type AnnotationMap = HashMap<String, Vec<UtteranceAnnotation>>;

#[derive(Debug, Deserialize)]
struct GameFile {
    #[serde(default)]
    tasks: Vec<GameTask>,
}

#[derive(Debug, Deserialize)]
struct GameTask {
    #[serde(default)]
    task_name: Option<String>,
    #[serde(default)]
    desc: Option<String>,
    #[serde(default)]
    episodes: Vec<GameEpisode>,
}

#[derive(Debug, Deserialize)]
struct GameEpisode {
    #[serde(default)]
    interactions: Vec<Interaction>,
}

#[derive(Debug, Deserialize)]
struct Interaction {
    agent_id: i64,
    #[serde(default, alias = "action_name")]
    action: Option<String>,
    #[serde(default)]
    utterance: Option<String>,
    #[serde(default, alias = "target")]
    oid: Option<String>,
}

/// TEACh driver action names that differ from the verbs the transcript
/// format uses.
fn map_verb(name: &str) -> String {
    match name {
        "Place" => "putdown".to_string(),
        "Pickup" => "pickup".to_string(),
        "ToggleOn" => "toggle on".to_string(),
        "ToggleOff" => "toggle off".to_string(),
        "Open" => "open".to_string(),
        "Close" => "close".to_string(),
        "Slice" => "slice".to_string(),
        "Pour" => "pour".to_string(),
        // Motion verbs keep their TEACh spelling; the transform layer
        // recognizes them case-insensitively.
        other => other.to_string(),
    }
}

/// Object ids look like "Mug|+00.70|+00.90|-01.30"; the display name is the
/// first segment.
fn target_from_oid(oid: &str) -> Option<String> {
    let name = oid.split('|').next().unwrap_or("").trim();
    if name.is_empty() {
        None
    } else {
        Some(name.to_string())
    }
}

fn role_of(agent_id: i64) -> Option<SpeakerRole> {
    match agent_id {
        0 => Some(SpeakerRole::Commander),
        1 => Some(SpeakerRole::Driver),
        _ => None,
    }
}

struct GameConversion {
    session: Session,
    warnings: Vec<String>,
}

fn convert_game(
    game_id: &str,
    split: Option<&str>,
    game: &GameFile,
    annotations: Option<&[UtteranceAnnotation]>,
) -> Result<GameConversion, String> {
    let task = game.tasks.first().ok_or("game has no tasks")?;
    let goal = task
        .desc
        .clone()
        .or_else(|| task.task_name.clone())
        .ok_or("task has neither desc nor task_name")?;

    let mut warnings = Vec::new();
    let mut steps: Vec<Step> = Vec::new();
    let mut utterance_index = 0usize;

    for task in &game.tasks {
        for episode in &task.episodes {
            for interaction in &episode.interactions {
                let Some(actor) = role_of(interaction.agent_id) else {
                    warnings.push(format!(
                        "{game_id}: unknown agent_id {}, interaction dropped",
                        interaction.agent_id
                    ));
                    continue;
                };
                if let Some(utterance) = &interaction.utterance {
                    let acts = match annotations.and_then(|a| a.get(utterance_index)) {
                        Some(annotation) => {
                            let mut parsed = Vec::new();
                            for name in &annotation.acts {
                                match parse_act(name) {
                                    Ok(act) => parsed.push(act),
                                    Err(e) => return Err(format!("utterance {utterance_index}: {e}")),
                                }
                            }
                            parsed
                        }
                        None => {
                            return Err(format!(
                                "utterance {utterance_index} has no act annotation"
                            ))
                        }
                    };
                    if acts.is_empty() {
                        return Err(format!("utterance {utterance_index}: empty act list"));
                    }
                    utterance_index += 1;
                    steps.push(Step::new(
                        steps.len(),
                        actor,
                        ActionEvent::Speak { utterance: utterance.clone(), acts },
                    ));
                    continue;
                }
                let Some(action) = interaction.action.as_deref() else {
                    warnings
                        .push(format!("{game_id}: interaction with no action or utterance"));
                    continue;
                };
                match actor {
                    // Commanders only speak in this model; their interface
                    // actions (progress checks, object searches) vanish.
                    SpeakerRole::Commander => continue,
                    SpeakerRole::Driver => {
                        let target =
                            interaction.oid.as_deref().and_then(target_from_oid);
                        steps.push(Step::new(
                            steps.len(),
                            SpeakerRole::Driver,
                            ActionEvent::Physical {
                                verb: map_verb(action),
                                target,
                            },
                        ));
                    }
                }
            }
        }
    }

    if let Some(annotations) = annotations {
        if annotations.len() > utterance_index {
            warnings.push(format!(
                "{game_id}: {} act annotations unused ({} utterances seen)",
                annotations.len() - utterance_index,
                utterance_index
            ));
        }
    }

    let mut session = Session::new(game_id, goal, steps);
    session.split = split.map(str::to_string);
    let violations = validate_session(&session);
    if !violations.is_empty() {
        return Err(format!("converted session invalid: {}", violations[0]));
    }
    Ok(GameConversion { session, warnings })
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub files_seen: usize,
    pub sessions: usize,
    /// Per-file conversion failures and softer anomalies. The ingest keeps
    /// going; a corrupt file costs only itself.
    pub warnings: Vec<String>,
}

fn split_of(root: &Path, file: &Path) -> Option<String> {
    let relative = file.strip_prefix(root).ok()?;
    let first = relative.components().next()?;
    let name = first.as_os_str().to_str()?;
    if name.contains('.') {
        // The file sits directly in the root; no split subdirectory.
        return None;
    }
    Some(name.replace('_', "-"))
}

fn game_id_of(file: &Path) -> String {
    let stem = file.file_name().and_then(|n| n.to_str()).unwrap_or("game");
    stem.split('.').next().unwrap_or(stem).to_string()
}

/// Walk `dir` for `*.json` game files (split = first-level subdirectory,
/// underscores to hyphens), join them with the act-annotation sidecar, and
/// build a corpus. Files that fail to convert are reported as warnings and
/// skipped.
pub fn ingest_teach_dir(
    dir: impl AsRef<Path>,
    annotations_path: Option<&Path>,
) -> Result<(Corpus, IngestReport), TeachError> {
    let dir = dir.as_ref();
    let annotations: AnnotationMap = match annotations_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| TeachError::Io { path: path.to_path_buf(), source })?;
            serde_json::from_str(&text)
                .map_err(|source| TeachError::Annotations { path: path.to_path_buf(), source })?
        }
        None => AnnotationMap::new(),
    };

    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "json")
                && annotations_path != Some(p.as_path())
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(TeachError::NoGames { path: dir.to_path_buf() });
    }

    let mut report = IngestReport::default();
    let mut sessions: BTreeMap<String, Session> = BTreeMap::new();
    for file in &files {
        report.files_seen += 1;
        let game_id = game_id_of(file);
        let text = match std::fs::read_to_string(file) {
            Ok(text) => text,
            Err(e) => {
                report.warnings.push(format!("{}: unreadable: {e}", file.display()));
                continue;
            }
        };
        let game: GameFile = match serde_json::from_str(&text) {
            Ok(game) => game,
            Err(e) => {
                report.warnings.push(format!("{}: not a game file: {e}", file.display()));
                continue;
            }
        };
        let split = split_of(dir, file);
        match convert_game(
            &game_id,
            split.as_deref(),
            &game,
            annotations.get(&game_id).map(Vec::as_slice),
        ) {
            Ok(converted) => {
                if sessions.contains_key(&converted.session.id) {
                    return Err(TeachError::DuplicateGame { id: converted.session.id });
                }
                report.warnings.extend(converted.warnings);
                sessions.insert(converted.session.id.clone(), converted.session);
                report.sessions += 1;
            }
            Err(message) => {
                report.warnings.push(format!("{}: skipped: {message}", file.display()));
            }
        }
    }

    let corpus = Corpus::new(sessions.into_values().collect())
        .expect("ids unique by construction");
    Ok((corpus, report))
}
