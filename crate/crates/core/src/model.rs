//! The session formalism: who did what at each step.
//!
//! A step stores one (actor, action) pair; the other party's `<observe>` line
//! is a rendering artifact, never stored. Commanders only speak; a commander
//! physical action is corrupt data and surfaces through validation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::DialogueAct;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerRole {
    Commander,
    Driver,
}

impl SpeakerRole {
    /// The all-caps transcript label.
    pub fn label(self) -> &'static str {
        match self {
            SpeakerRole::Commander => "COMMANDER",
            SpeakerRole::Driver => "DRIVER",
        }
    }

    pub fn other(self) -> SpeakerRole {
        match self {
            SpeakerRole::Commander => SpeakerRole::Driver,
            SpeakerRole::Driver => SpeakerRole::Commander,
        }
    }
}

impl fmt::Display for SpeakerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// What the acting party did at a step.
///
/// `Observe` never appears inside a stored `Step`; it exists for transcript
/// payloads, agent events, and decision values. (Stored sessions serialize
/// through the corpus record types, not this enum.)
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActionEvent {
    Speak { utterance: String, acts: Vec<DialogueAct> },
    Physical { verb: String, target: Option<String> },
    Observe,
}

impl ActionEvent {
    pub fn speak(utterance: impl Into<String>, acts: Vec<DialogueAct>) -> Self {
        ActionEvent::Speak { utterance: utterance.into(), acts }
    }

    pub fn physical(verb: impl Into<String>, target: Option<&str>) -> Self {
        ActionEvent::Physical { verb: verb.into(), target: target.map(str::to_string) }
    }

    pub fn is_speak(&self) -> bool {
        matches!(self, ActionEvent::Speak { .. })
    }

    pub fn is_physical(&self) -> bool {
        matches!(self, ActionEvent::Physical { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    /// 0-based position within the session; consecutive by invariant.
    pub index: usize,
    pub actor: SpeakerRole,
    pub action: ActionEvent,
}

impl Step {
    pub fn new(index: usize, actor: SpeakerRole, action: ActionEvent) -> Self {
        Step { index, actor, action }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub goal: String,
    pub steps: Vec<Step>,
    /// Corpus split label (train / valid-seen / valid-unseen / test-seen /
    /// test-unseen), when known.
    pub split: Option<String>,
}

impl Session {
    pub fn new(id: impl Into<String>, goal: impl Into<String>, steps: Vec<Step>) -> Self {
        Session { id: id.into(), goal: goal.into(), steps, split: None }
    }

    pub fn with_split(mut self, split: impl Into<String>) -> Self {
        self.split = Some(split.into());
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Exhaustive classification of valid steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    UserSpeak,
    RobotSpeak,
    RobotPhysical,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("step {index}: commander cannot perform a physical action")]
    CommanderPhysical { index: usize },
    #[error("step {index}: observe is implicit and never stored as a step action")]
    StoredObserve { index: usize },
}

/// Map a valid step onto its kind. Total over valid steps: every valid step
/// has exactly one kind.
pub fn classify_step(step: &Step) -> Result<StepKind, StepError> {
    match (step.actor, &step.action) {
        (SpeakerRole::Commander, ActionEvent::Speak { .. }) => Ok(StepKind::UserSpeak),
        (SpeakerRole::Driver, ActionEvent::Speak { .. }) => Ok(StepKind::RobotSpeak),
        (SpeakerRole::Driver, ActionEvent::Physical { .. }) => Ok(StepKind::RobotPhysical),
        (SpeakerRole::Commander, ActionEvent::Physical { .. }) => {
            Err(StepError::CommanderPhysical { index: step.index })
        }
        (_, ActionEvent::Observe) => Err(StepError::StoredObserve { index: step.index }),
    }
}

/// Per-kind step counts for a session or corpus slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepKindCounts {
    pub user_speak: usize,
    pub robot_speak: usize,
    pub robot_physical: usize,
    pub total: usize,
}

impl StepKindCounts {
    pub fn add(&mut self, kind: StepKind) {
        match kind {
            StepKind::UserSpeak => self.user_speak += 1,
            StepKind::RobotSpeak => self.robot_speak += 1,
            StepKind::RobotPhysical => self.robot_physical += 1,
        }
        self.total += 1;
    }
}

/// Count steps per kind. Callers pass valid sessions; steps that fail
/// classification are not counted (they are caught by `validate_session`).
pub fn session_stats(session: &Session) -> StepKindCounts {
    let mut counts = StepKindCounts::default();
    for step in &session.steps {
        if let Ok(kind) = classify_step(step) {
            counts.add(kind);
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    EmptyGoal,
    NonConsecutiveIndex { expected: usize, found: usize },
    StoredObserve,
    CommanderPhysical,
    EmptySpeakActs,
    DuplicateSpeakActs,
    EmptyUtteranceActs, // reserved: utterances may legitimately be empty; acts may not
    EmptyPhysicalVerb,
}

/// One violated invariant, with the offending step when applicable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub step: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = match self.step {
            Some(i) => format!("step {i}: "),
            None => String::new(),
        };
        let what = match &self.kind {
            ViolationKind::EmptyGoal => "goal is empty".to_string(),
            ViolationKind::NonConsecutiveIndex { expected, found } => {
                format!("index {found} where {expected} was expected")
            }
            ViolationKind::StoredObserve => "stored observe action".to_string(),
            ViolationKind::CommanderPhysical => "commander physical action".to_string(),
            ViolationKind::EmptySpeakActs => "speak step with no dialogue acts".to_string(),
            ViolationKind::DuplicateSpeakActs => "speak step with duplicate dialogue acts".to_string(),
            ViolationKind::EmptyUtteranceActs => "speak step with empty acts".to_string(),
            ViolationKind::EmptyPhysicalVerb => "physical step with empty verb".to_string(),
        };
        write!(f, "{at}{what}")
    }
}

/// Check every session invariant; returns all violations (empty = ok).
/// Violations are data, not failures: a corrupt session still reports fully.
pub fn validate_session(session: &Session) -> Vec<Violation> {
    let mut violations = Vec::new();
    if session.goal.trim().is_empty() {
        violations.push(Violation { step: None, kind: ViolationKind::EmptyGoal });
    }
    for (expected, step) in session.steps.iter().enumerate() {
        let at = Some(step.index);
        if step.index != expected {
            violations.push(Violation {
                step: at,
                kind: ViolationKind::NonConsecutiveIndex { expected, found: step.index },
            });
        }
        match (&step.actor, &step.action) {
            (_, ActionEvent::Observe) => {
                violations.push(Violation { step: at, kind: ViolationKind::StoredObserve });
            }
            (SpeakerRole::Commander, ActionEvent::Physical { .. }) => {
                violations.push(Violation { step: at, kind: ViolationKind::CommanderPhysical });
            }
            (_, ActionEvent::Speak { acts, .. }) => {
                if acts.is_empty() {
                    violations.push(Violation { step: at, kind: ViolationKind::EmptySpeakActs });
                } else {
                    let mut seen = std::collections::HashSet::new();
                    if !acts.iter().all(|a| seen.insert(*a)) {
                        violations
                            .push(Violation { step: at, kind: ViolationKind::DuplicateSpeakActs });
                    }
                }
            }
            (SpeakerRole::Driver, ActionEvent::Physical { verb, .. }) => {
                if verb.trim().is_empty() {
                    violations.push(Violation { step: at, kind: ViolationKind::EmptyPhysicalVerb });
                }
            }
        }
    }
    violations
}
