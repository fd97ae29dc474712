//! History transforms applied before prompting/evaluation: dropping robot
//! move steps, either wholesale or only where they shadow a robot question.
//!
//! Both transforms only ever remove Driver Physical steps whose verb is in
//! the configured move set; speak steps and manipulations always survive, in
//! order. Both are idempotent.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionEvent, Session, SpeakerRole, Step};
use crate::taxonomy::DialogueAct;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformMode {
    None,
    ExcludeMoves,
    SelectiveRemoval,
}

impl TransformMode {
    /// CLI spelling of the mode.
    pub fn flag_name(self) -> &'static str {
        match self {
            TransformMode::None => "none",
            TransformMode::ExcludeMoves => "no-moves",
            TransformMode::SelectiveRemoval => "selective",
        }
    }

    pub fn from_flag(s: &str) -> Option<Self> {
        match s {
            "none" => Some(TransformMode::None),
            "no-moves" => Some(TransformMode::ExcludeMoves),
            "selective" => Some(TransformMode::SelectiveRemoval),
            _ => None,
        }
    }
}

/// Navigation/motion verbs treated as moves, compared case-insensitively.
/// Covers corpora that keep raw motion names and ones that collapse them to
/// "move".
pub const DEFAULT_MOVE_VERBS: [&str; 11] = [
    "Forward", "Backward", "Turn Left", "Turn Right", "Look Up", "Look Down", "Pan Left",
    "Pan Right", "Stand", "Crouch", "move",
];

/// The interrogative acts: a robot Speak carrying any of these counts as a
/// question for selective removal.
pub const DEFAULT_QUESTION_ACTS: [DialogueAct; 6] = [
    DialogueAct::RequestForInstruction,
    DialogueAct::RequestOtherInfo,
    DialogueAct::RequestMore,
    DialogueAct::RequestForObjectLocationAndOtherDetails,
    DialogueAct::AlternateQuestions,
    DialogueAct::Confirm,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub mode: TransformMode,
    /// Stored lowercase; membership checks lowercase the probe.
    pub move_verbs: BTreeSet<String>,
    pub question_acts: BTreeSet<DialogueAct>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("move_verbs must be non-empty when the transform mode is {0:?}")]
    EmptyMoveVerbs(TransformMode),
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec::none()
    }
}

impl TransformSpec {
    pub fn none() -> Self {
        TransformSpec {
            mode: TransformMode::None,
            move_verbs: default_move_verbs(),
            question_acts: default_question_acts(),
        }
    }

    pub fn exclude_moves() -> Self {
        TransformSpec { mode: TransformMode::ExcludeMoves, ..TransformSpec::none() }
    }

    pub fn selective_removal() -> Self {
        TransformSpec { mode: TransformMode::SelectiveRemoval, ..TransformSpec::none() }
    }

    pub fn with_mode(mode: TransformMode) -> Self {
        TransformSpec { mode, ..TransformSpec::none() }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        if self.mode != TransformMode::None && self.move_verbs.is_empty() {
            return Err(TransformError::EmptyMoveVerbs(self.mode));
        }
        Ok(())
    }

    pub fn is_move_verb(&self, verb: &str) -> bool {
        self.move_verbs.contains(&verb.to_ascii_lowercase())
    }

    fn is_driver_move(&self, step: &Step) -> bool {
        step.actor == SpeakerRole::Driver
            && matches!(&step.action, ActionEvent::Physical { verb, .. } if self.is_move_verb(verb))
    }

    fn is_robot_question(&self, step: &Step) -> bool {
        step.actor == SpeakerRole::Driver
            && matches!(&step.action, ActionEvent::Speak { acts, .. }
                if acts.iter().any(|a| self.question_acts.contains(a)))
    }

    /// Apply whichever transform the mode selects.
    pub fn apply(&self, session: &Session) -> Session {
        match self.mode {
            TransformMode::None => session.clone(),
            TransformMode::ExcludeMoves => exclude_moves(session, self),
            TransformMode::SelectiveRemoval => selective_removal(session, self),
        }
    }
}

pub fn default_move_verbs() -> BTreeSet<String> {
    DEFAULT_MOVE_VERBS.iter().map(|v| v.to_ascii_lowercase()).collect()
}

pub fn default_question_acts() -> BTreeSet<DialogueAct> {
    DEFAULT_QUESTION_ACTS.into_iter().collect()
}

fn reindex(mut steps: Vec<Step>) -> Vec<Step> {
    for (i, step) in steps.iter_mut().enumerate() {
        step.index = i;
    }
    steps
}

/// Drop every Driver move step; keep everything else in order.
pub fn exclude_moves(session: &Session, spec: &TransformSpec) -> Session {
    let steps: Vec<Step> =
        session.steps.iter().filter(|s| !spec.is_driver_move(s)).cloned().collect();
    Session { steps: reindex(steps), ..session.clone() }
}

/// Drop Driver move steps that directly follow a robot question, where
/// "directly follow" is judged against the sequence being built: a run of
/// consecutive moves after a question is removed entirely (which is what
/// makes the transform idempotent).
pub fn selective_removal(session: &Session, spec: &TransformSpec) -> Session {
    let mut steps: Vec<Step> = Vec::with_capacity(session.steps.len());
    let mut i = 0;
    while i < session.steps.len() {
        let step = &session.steps[i];
        steps.push(step.clone());
        if spec.is_robot_question(step) {
            while i + 1 < session.steps.len() && spec.is_driver_move(&session.steps[i + 1]) {
                i += 1;
            }
        }
        i += 1;
    }
    Session { steps: reindex(steps), ..session.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_session;
    use crate::taxonomy::DialogueAct::*;
    use SpeakerRole::*;

    fn step(index: usize, actor: SpeakerRole, action: ActionEvent) -> Step {
        Step::new(index, actor, action)
    }

    fn move_step(index: usize) -> Step {
        step(index, Driver, ActionEvent::physical("move", None))
    }

    fn session(steps: Vec<Step>) -> Session {
        Session::new("s", "Put all Book on any Furniture.", steps)
    }

    #[test]
    fn exclude_moves_drops_moves_and_keeps_manipulations() {
        let s = session(vec![
            step(0, Driver, ActionEvent::speak("hello how may i help", vec![GreetingsSalutations, RequestForInstruction])),
            step(1, Commander, ActionEvent::speak("put the book on furniture", vec![Instruction])),
            move_step(2),
            move_step(3),
            step(4, Driver, ActionEvent::physical("pickup", Some("Book"))),
            move_step(5),
            step(6, Driver, ActionEvent::physical("putdown", Some("Desk"))),
            move_step(7),
            step(8, Driver, ActionEvent::speak("done", vec![Acknowledge])),
        ]);
        let spec = TransformSpec::exclude_moves();
        let out = exclude_moves(&s, &spec);
        // 4 moves and 3 manipulations (2 manipulations + 2 speaks kept... the
        // point: output length = input - number of moves).
        assert_eq!(out.steps.len(), s.steps.len() - 4);
        assert!(out.steps.iter().all(|st| !spec.is_driver_move(st)));
        let verbs: Vec<_> = out
            .steps
            .iter()
            .filter_map(|st| match &st.action {
                ActionEvent::Physical { verb, .. } => Some(verb.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(verbs, vec!["pickup", "putdown"]);
        // Indices renumbered consecutively.
        assert!(validate_session(&out).is_empty());
    }

    #[test]
    fn exclude_moves_is_identity_without_moves() {
        let s = session(vec![
            step(0, Driver, ActionEvent::physical("pickup", Some("Book"))),
            step(1, Commander, ActionEvent::speak("good", vec![FeedbackPositive])),
        ]);
        let out = exclude_moves(&s, &TransformSpec::exclude_moves());
        assert_eq!(out, s);
    }

    #[test]
    fn move_verbs_match_case_insensitively() {
        let spec = TransformSpec::exclude_moves();
        for verb in ["Turn Left", "turn left", "TURN LEFT", "Forward", "move", "Crouch"] {
            assert!(spec.is_move_verb(verb), "{verb}");
        }
        assert!(!spec.is_move_verb("pickup"));
        assert!(!spec.is_move_verb("toggle on"));
    }

    #[test]
    fn selective_removal_fires_only_after_robot_questions() {
        let s = session(vec![
            step(0, Driver, ActionEvent::speak("should i rinse the mug or not?", vec![AlternateQuestions])),
            move_step(1),
            step(2, Commander, ActionEvent::speak("dont", vec![Deny])),
            step(3, Driver, ActionEvent::physical("pickup", Some("Mug"))),
            move_step(4),
            step(5, Driver, ActionEvent::speak("done", vec![Acknowledge])),
            move_step(6),
        ]);
        let spec = TransformSpec::selective_removal();
        let out = selective_removal(&s, &spec);
        // Only the move after the question goes; the ones after pickup (a
        // non-question) and after a non-question speak stay.
        assert_eq!(out.steps.len(), 6);
        let shapes: Vec<String> = out
            .steps
            .iter()
            .map(|st| match &st.action {
                ActionEvent::Speak { .. } => "speak".to_string(),
                ActionEvent::Physical { verb, .. } => verb.clone(),
                ActionEvent::Observe => "observe".to_string(),
            })
            .collect();
        assert_eq!(shapes, vec!["speak", "speak", "pickup", "move", "speak", "move"]);
    }

    #[test]
    fn selective_removal_takes_whole_move_runs() {
        let s = session(vec![
            step(0, Driver, ActionEvent::speak("where is the mug?", vec![RequestForObjectLocationAndOtherDetails])),
            move_step(1),
            move_step(2),
            move_step(3),
            step(4, Commander, ActionEvent::speak("in the sink", vec![InformationOnObjectDetails])),
        ]);
        let spec = TransformSpec::selective_removal();
        let out = selective_removal(&s, &spec);
        assert_eq!(out.steps.len(), 2);
        let again = selective_removal(&out, &spec);
        assert_eq!(again, out, "idempotent on move runs");
    }

    #[test]
    fn selective_removal_identity_without_questions() {
        let s = session(vec![
            step(0, Commander, ActionEvent::speak("go", vec![Instruction])),
            move_step(1),
            move_step(2),
        ]);
        let out = selective_removal(&s, &TransformSpec::selective_removal());
        assert_eq!(out, s);
    }

    #[test]
    fn commander_questions_do_not_fire_the_rule() {
        let s = session(vec![
            step(0, Commander, ActionEvent::speak("should i help?", vec![Confirm])),
            move_step(1),
        ]);
        let out = selective_removal(&s, &TransformSpec::selective_removal());
        assert_eq!(out, s, "only robot questions count");
    }

    #[test]
    fn transforms_are_idempotent_and_nested() {
        let s = session(vec![
            step(0, Driver, ActionEvent::speak("what should i do today?", vec![RequestForInstruction])),
            move_step(1),
            step(2, Commander, ActionEvent::speak("make coffee", vec![Instruction])),
            move_step(3),
            step(4, Driver, ActionEvent::physical("pickup", Some("Mug"))),
        ]);
        let ex = TransformSpec::exclude_moves();
        let sel = TransformSpec::selective_removal();
        let once = exclude_moves(&s, &ex);
        assert_eq!(exclude_moves(&once, &ex), once);
        let once = selective_removal(&s, &sel);
        assert_eq!(selective_removal(&once, &sel), once);
        // Selective removal removes a subset of what exclude_moves removes.
        let excluded = exclude_moves(&s, &ex);
        let selected = selective_removal(&s, &sel);
        assert!(excluded.steps.len() <= selected.steps.len());
    }

    #[test]
    fn validate_rejects_empty_move_set_for_active_modes() {
        let mut spec = TransformSpec::exclude_moves();
        spec.move_verbs.clear();
        assert_eq!(spec.validate(), Err(TransformError::EmptyMoveVerbs(TransformMode::ExcludeMoves)));
        let mut spec = TransformSpec::none();
        spec.move_verbs.clear();
        assert!(spec.validate().is_ok(), "mode none never needs the verb set");
    }

    #[test]
    fn apply_dispatches_on_mode() {
        let s = session(vec![
            step(0, Driver, ActionEvent::speak("anything else?", vec![RequestMore])),
            move_step(1),
        ]);
        assert_eq!(TransformSpec::none().apply(&s), s);
        assert_eq!(TransformSpec::exclude_moves().apply(&s).steps.len(), 1);
        assert_eq!(TransformSpec::selective_removal().apply(&s).steps.len(), 1);
    }

    #[test]
    fn mode_flag_names_round_trip() {
        for mode in [TransformMode::None, TransformMode::ExcludeMoves, TransformMode::SelectiveRemoval] {
            assert_eq!(TransformMode::from_flag(mode.flag_name()), Some(mode));
        }
        assert_eq!(TransformMode::from_flag("bogus"), None);
    }
}
