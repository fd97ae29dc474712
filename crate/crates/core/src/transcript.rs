//! Plain-text transcript format.
//!
//! ```text
//! Goal: Prepare coffee in a clean mug.
//! COMMANDER: <observe>
//! DRIVER: hi,what should i do today? <<Greetings/Salutations,RequestForInstruction>>
//! COMMANDER: Add coffee to a mug <<Instruction>>
//! DRIVER: <observe>
//! ```
//!
//! Every step prints as a COMMANDER/DRIVER line pair; the non-acting party
//! shows `<observe>`. Non-dialogue actions sit in single angle brackets with
//! the target as the trailing capitalized token run (`<pickup Mug>`,
//! `<toggle on CoffeeMachine>`). Utterances are plain text followed by their
//! act list in doubled angle brackets, comma-separated without spaces.
//!
//! Rendering always puts one space before `<<`; the parser also accepts none
//! (both spacings occur in real transcripts). Round-tripping is on sessions:
//! `parse_transcript(render_transcript(s)) == s` for every valid session.

use thiserror::Error;

use crate::model::{ActionEvent, Session, SpeakerRole, Step};
use crate::taxonomy::{parse_act, UnknownActError};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: expected goal line starting with \"Goal:\"")]
    MissingGoal { line: usize },
    #[error("line {line}: expected a line starting with \"{expected}: \"")]
    MissingRole { line: usize, expected: &'static str },
    #[error("line {line}: both parties observe; every pair needs exactly one action")]
    BothObserve { line: usize },
    #[error("line {line}: both parties act; every pair needs exactly one action")]
    BothActing { line: usize },
    #[error("line {line}: {source}")]
    UnknownAct {
        line: usize,
        #[source]
        source: UnknownActError,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Render one payload (the part after `ROLE: `).
pub fn render_payload(event: &ActionEvent) -> String {
    match event {
        ActionEvent::Observe => "<observe>".to_string(),
        ActionEvent::Physical { verb, target } => match target {
            Some(target) => format!("<{verb} {target}>"),
            None => format!("<{verb}>"),
        },
        ActionEvent::Speak { utterance, acts } => {
            let names: Vec<&str> = acts.iter().map(|a| a.canonical_name()).collect();
            format!("{utterance} <<{}>>", names.join(","))
        }
    }
}

/// Render a full `ROLE: payload` line.
pub fn render_event_line(role: SpeakerRole, event: &ActionEvent) -> String {
    format!("{}: {}", role.label(), render_payload(event))
}

/// Render one step as its COMMANDER/DRIVER line pair (commander line first).
pub fn render_step_pair(step: &Step) -> [String; 2] {
    let commander = match step.actor {
        SpeakerRole::Commander => render_event_line(SpeakerRole::Commander, &step.action),
        SpeakerRole::Driver => render_event_line(SpeakerRole::Commander, &ActionEvent::Observe),
    };
    let driver = match step.actor {
        SpeakerRole::Driver => render_event_line(SpeakerRole::Driver, &step.action),
        SpeakerRole::Commander => render_event_line(SpeakerRole::Driver, &ActionEvent::Observe),
    };
    [commander, driver]
}

/// Render the pair lines for a history slice, without a goal line.
pub fn render_history(steps: &[Step]) -> String {
    let mut lines = Vec::with_capacity(steps.len() * 2);
    for step in steps {
        let [c, d] = render_step_pair(step);
        lines.push(c);
        lines.push(d);
    }
    lines.join("\n")
}

/// Render a whole session: goal line, then pair lines, trailing newline.
pub fn render_transcript(session: &Session) -> String {
    let mut out = format!("Goal: {}\n", session.goal);
    for step in &session.steps {
        let [c, d] = render_step_pair(step);
        out.push_str(&c);
        out.push('\n');
        out.push_str(&d);
        out.push('\n');
    }
    out
}

/// Parse a payload string (everything after `ROLE: `).
pub fn parse_payload(payload: &str, line: usize) -> Result<ActionEvent, TranscriptError> {
    if payload == "<observe>" {
        return Ok(ActionEvent::Observe);
    }
    // Speak: the act list is the trailing <<...>> block.
    if payload.ends_with(">>") {
        if let Some(open) = payload.rfind("<<") {
            let acts_text = &payload[open + 2..payload.len() - 2];
            if acts_text.contains('<') || acts_text.contains('>') {
                return Err(TranscriptError::Malformed {
                    line,
                    message: "nested angle brackets inside act list".to_string(),
                });
            }
            let mut acts = Vec::new();
            for part in acts_text.split(',') {
                if part.trim().is_empty() {
                    return Err(TranscriptError::Malformed {
                        line,
                        message: "empty act name in act list".to_string(),
                    });
                }
                let act = parse_act(part).map_err(|source| TranscriptError::UnknownAct { line, source })?;
                acts.push(act);
            }
            // Rendering adds exactly one space before "<<"; strip exactly one.
            let raw = &payload[..open];
            let utterance = raw.strip_suffix(' ').unwrap_or(raw);
            return Ok(ActionEvent::Speak { utterance: utterance.to_string(), acts });
        }
    }
    // Physical: single angle brackets around `verb [Target]`.
    if let Some(inner) = payload.strip_prefix('<').and_then(|p| p.strip_suffix('>')) {
        if inner.contains('<') || inner.contains('>') {
            return Err(TranscriptError::Malformed {
                line,
                message: "nested angle brackets in action".to_string(),
            });
        }
        let tokens: Vec<&str> = inner.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(TranscriptError::Malformed { line, message: "empty action".to_string() });
        }
        // Target = maximal trailing run of capitalized tokens. When every
        // token is capitalized there is no verb left, so the whole content is
        // the verb (corpora with capitalized motion verbs like "Turn Left").
        let is_capitalized = |t: &&str| t.chars().next().is_some_and(|c| c.is_ascii_uppercase());
        let target_len = tokens.iter().rev().copied().take_while(is_capitalized).count();
        if target_len == 0 || target_len == tokens.len() {
            return Ok(ActionEvent::Physical { verb: tokens.join(" "), target: None });
        }
        let split = tokens.len() - target_len;
        return Ok(ActionEvent::Physical {
            verb: tokens[..split].join(" "),
            target: Some(tokens[split..].join(" ")),
        });
    }
    Err(TranscriptError::Malformed {
        line,
        message: "expected <observe>, <action>, or an utterance ending in <<Act,...>>".to_string(),
    })
}

fn strip_role_prefix<'a>(
    content: &'a str,
    role: SpeakerRole,
    line: usize,
) -> Result<&'a str, TranscriptError> {
    let with_space = format!("{}: ", role.label());
    if let Some(rest) = content.strip_prefix(&with_space) {
        return Ok(rest);
    }
    // A bare "ROLE:" line (payload empty) is malformed, not a missing role.
    if content == format!("{}:", role.label()) {
        return Err(TranscriptError::Malformed { line, message: "empty payload".to_string() });
    }
    Err(TranscriptError::MissingRole { line, expected: role.label() })
}

/// Parse a transcript. The returned session has an empty id and no split;
/// callers attach those. Blank lines are skipped anywhere.
pub fn parse_transcript(text: &str) -> Result<Session, TranscriptError> {
    // (1-based line number, content) for non-blank lines.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    let (goal_line, goal_content) = lines.next().ok_or(TranscriptError::MissingGoal { line: 1 })?;
    let goal = match goal_content.strip_prefix("Goal:") {
        Some(rest) => rest.strip_prefix(' ').unwrap_or(rest).to_string(),
        None => return Err(TranscriptError::MissingGoal { line: goal_line }),
    };

    let mut steps = Vec::new();
    loop {
        let Some((c_line, c_content)) = lines.next() else { break };
        let c_payload = strip_role_prefix(c_content, SpeakerRole::Commander, c_line)?;
        let commander = parse_payload(c_payload, c_line)?;

        let (d_line, d_content) = lines.next().ok_or(TranscriptError::MissingRole {
            line: c_line + 1,
            expected: SpeakerRole::Driver.label(),
        })?;
        let d_payload = strip_role_prefix(d_content, SpeakerRole::Driver, d_line)?;
        let driver = parse_payload(d_payload, d_line)?;

        let index = steps.len();
        let step = match (commander, driver) {
            (ActionEvent::Observe, ActionEvent::Observe) => {
                return Err(TranscriptError::BothObserve { line: c_line })
            }
            (ActionEvent::Observe, action) => Step::new(index, SpeakerRole::Driver, action),
            (action, ActionEvent::Observe) => Step::new(index, SpeakerRole::Commander, action),
            (_, _) => return Err(TranscriptError::BothActing { line: c_line }),
        };
        steps.push(step);
    }

    Ok(Session::new(String::new(), goal, steps))
}
