//! Prompt assembly for the observe-or-speak prediction task.
//!
//! A prompt is, in order, separated by blank lines:
//!
//! 1. the role description (who the COMMANDER is),
//! 2. "These are the possible dialogue acts:" + the 18 explanation lines,
//! 3. few-shot only: the example blocks, each headed "Example :",
//! 4. the task description (answer with one dialogue act or OBSERVE),
//! 5. the scenario: goal line, history pair lines, final "COMMANDER response:".
//!
//! The prompt ends at "COMMANDER response:" with no trailing newline; the
//! model's continuation is the answer. Construction is a pure function of
//! (spec, seed, example corpus snapshot, goal, history): identical inputs
//! yield identical bytes.
//!
//! Few-shot examples are prefixes of corpus sessions, always starting at the
//! session's first step, with the commander's gold behavior at the following
//! step as the answer. Draws are redrawn while an example's observe share
//! exceeds the configured fraction or the batch already has its quota of
//! OBSERVE answers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::model::{Session, SpeakerRole, Step};
use crate::taxonomy::{explanation_block, DialogueAct};
use crate::transcript::render_history;

/// Role description shown first in every prompt.
pub const ROLE_TEXT: &str = include_str!("templates/role.txt");
/// Task description: how to answer.
pub const TASK_TEXT: &str = include_str!("templates/task.txt");
/// Header introducing the act explanations.
pub const ACTS_HEADER: &str = "These are the possible dialogue acts:";
/// The line a response must continue.
pub const RESPONSE_CUE: &str = "COMMANDER response:";
/// Header line opening each few-shot example block.
pub const EXAMPLE_HEADER: &str = "Example :";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

/// Whether the observe-share constraint is checked per example or across the
/// whole batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FractionScope {
    PerExample,
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub n_examples: usize,
    /// At most this many examples may have OBSERVE as their answer.
    pub max_observe_answer_examples: usize,
    /// Maximum share of commander decision positions (prefix + answer) that
    /// are observes.
    pub max_observe_turn_fraction: f64,
    pub rng_seed: u64,
    /// Rejected draws allowed before selection gives up.
    pub redraw_limit: usize,
    pub fraction_scope: FractionScope,
}

impl PromptSpec {
    pub fn zero_shot() -> Self {
        PromptSpec {
            mode: PromptMode::ZeroShot,
            n_examples: 5,
            max_observe_answer_examples: 2,
            max_observe_turn_fraction: 0.35,
            rng_seed: 0,
            redraw_limit: 1000,
            fraction_scope: FractionScope::PerExample,
        }
    }

    pub fn few_shot(rng_seed: u64) -> Self {
        PromptSpec { mode: PromptMode::FewShot, rng_seed, ..PromptSpec::zero_shot() }
    }
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec::zero_shot()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExampleAnswer {
    Observe,
    Acts(Vec<DialogueAct>),
}

impl ExampleAnswer {
    /// The answer token(s): "OBSERVE" or comma-joined act names.
    pub fn render(&self) -> String {
        match self {
            ExampleAnswer::Observe => "OBSERVE".to_string(),
            ExampleAnswer::Acts(acts) => {
                acts.iter().map(|a| a.canonical_name()).collect::<Vec<_>>().join(",")
            }
        }
    }

    pub fn is_observe(&self) -> bool {
        matches!(self, ExampleAnswer::Observe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub source_session_id: String,
    /// Number of steps shown; the prefix always starts at step 0.
    pub prefix_length: usize,
    pub answer: ExampleAnswer,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("few-shot prompting requires a source corpus")]
    MissingCorpus,
    #[error("no session in the corpus is usable as an example source")]
    NoEligibleSessions,
    #[error(
        "example selection infeasible: {rejected} draws rejected (limit {limit}); \
         the corpus cannot satisfy the observe constraints"
    )]
    SelectionInfeasible { rejected: usize, limit: usize },
    #[error("example references unknown session {id:?}")]
    UnknownSession { id: String },
    #[error("example prefix {prefix_length} out of bounds for session {id:?} of length {len}")]
    PrefixOutOfBounds { id: String, prefix_length: usize, len: usize },
}

/// The commander's gold behavior at `step`: their speak acts, or OBSERVE when
/// the robot acted.
fn answer_at(step: &Step) -> ExampleAnswer {
    match (&step.actor, &step.action) {
        (SpeakerRole::Commander, crate::model::ActionEvent::Speak { acts, .. }) => {
            ExampleAnswer::Acts(acts.clone())
        }
        _ => ExampleAnswer::Observe,
    }
}

/// Observe share over the example's commander decision positions: each of the
/// `prefix_length` steps plus the answer position. The commander observes at
/// every Driver step and at the answer when it is OBSERVE.
fn observe_stats(session: &Session, prefix_length: usize, answer: &ExampleAnswer) -> (usize, usize) {
    let observes = session.steps[..prefix_length]
        .iter()
        .filter(|s| s.actor == SpeakerRole::Driver)
        .count()
        + usize::from(answer.is_observe());
    (observes, prefix_length + 1)
}

fn example_fraction_ok(spec: &PromptSpec, session: &Session, example: &FewShotExample) -> bool {
    let (observes, positions) = observe_stats(session, example.prefix_length, &example.answer);
    observes as f64 / positions as f64 <= spec.max_observe_turn_fraction
}

/// Draw `spec.n_examples` examples from the corpus. Deterministic for a given
/// (corpus, spec) pair. Fails when the corpus has no eligible sessions or the
/// redraw budget runs out.
pub fn select_examples(corpus: &Corpus, spec: &PromptSpec) -> Result<Vec<FewShotExample>, PromptError> {
    // Eligible sessions need at least 2 steps: one to show, one to answer.
    let eligible: Vec<&Session> = corpus.sessions().iter().filter(|s| s.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(PromptError::NoEligibleSessions);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut rejected = 0usize;
    let mut examples: Vec<FewShotExample> = Vec::with_capacity(spec.n_examples);

    while examples.len() < spec.n_examples {
        let session = eligible[rng.random_range(0..eligible.len())];
        let prefix_length = rng.random_range(1..session.len());
        let answer = answer_at(&session.steps[prefix_length]);
        let example = FewShotExample {
            source_session_id: session.id.clone(),
            prefix_length,
            answer,
        };

        let observe_answers =
            examples.iter().filter(|e| e.answer.is_observe()).count()
                + usize::from(example.answer.is_observe());
        let mut ok = observe_answers <= spec.max_observe_answer_examples;
        if ok && spec.fraction_scope == FractionScope::PerExample {
            ok = example_fraction_ok(spec, session, &example);
        }
        if ok && spec.fraction_scope == FractionScope::Aggregate && examples.len() + 1 == spec.n_examples {
            // Check the whole batch once it is complete; on failure drop it
            // and start over.
            let mut observes = 0usize;
            let mut positions = 0usize;
            for e in examples.iter().chain(std::iter::once(&example)) {
                let s = corpus.get(&e.source_session_id).expect("drawn from corpus");
                let (o, p) = observe_stats(s, e.prefix_length, &e.answer);
                observes += o;
                positions += p;
            }
            if observes as f64 / positions as f64 > spec.max_observe_turn_fraction {
                rejected += 1;
                if rejected >= spec.redraw_limit {
                    return Err(PromptError::SelectionInfeasible { rejected, limit: spec.redraw_limit });
                }
                examples.clear();
                continue;
            }
        }

        if ok {
            examples.push(example);
        } else {
            rejected += 1;
            if rejected >= spec.redraw_limit {
                return Err(PromptError::SelectionInfeasible { rejected, limit: spec.redraw_limit });
            }
        }
    }
    Ok(examples)
}

/// Render one example block body: goal, prefix pairs, response cue, answer.
pub fn render_example(example: &FewShotExample, corpus: &Corpus) -> Result<String, PromptError> {
    let session = corpus
        .get(&example.source_session_id)
        .ok_or_else(|| PromptError::UnknownSession { id: example.source_session_id.clone() })?;
    if example.prefix_length >= session.len() {
        return Err(PromptError::PrefixOutOfBounds {
            id: session.id.clone(),
            prefix_length: example.prefix_length,
            len: session.len(),
        });
    }
    Ok(format!(
        "{}\n{}",
        render_scenario(&session.goal, &session.steps[..example.prefix_length]),
        example.answer.render()
    ))
}

/// Goal line + history pairs + response cue (no answer).
fn render_scenario(goal: &str, history: &[Step]) -> String {
    if history.is_empty() {
        format!("Goal: {goal}\n{RESPONSE_CUE}")
    } else {
        format!("Goal: {goal}\n{}\n{RESPONSE_CUE}", render_history(history))
    }
}

/// A reusable prompt builder. For few-shot mode the examples are selected and
/// rendered once at construction and shared by every prompt built from it.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    spec: PromptSpec,
    examples: Vec<FewShotExample>,
    example_blocks: Vec<String>,
}

impl PromptBuilder {
    pub fn new(spec: PromptSpec, example_corpus: Option<&Corpus>) -> Result<Self, PromptError> {
        let (examples, example_blocks) = match spec.mode {
            PromptMode::ZeroShot => (Vec::new(), Vec::new()),
            PromptMode::FewShot => {
                let corpus = example_corpus.ok_or(PromptError::MissingCorpus)?;
                let examples = select_examples(corpus, &spec)?;
                let blocks = examples
                    .iter()
                    .map(|e| render_example(e, corpus))
                    .collect::<Result<Vec<_>, _>>()?;
                (examples, blocks)
            }
        };
        Ok(PromptBuilder { spec, examples, example_blocks })
    }

    pub fn spec(&self) -> &PromptSpec {
        &self.spec
    }

    pub fn examples(&self) -> &[FewShotExample] {
        &self.examples
    }

    /// Assemble the full prompt for a scenario.
    pub fn build(&self, goal: &str, history: &[Step]) -> String {
        let mut sections: Vec<String> = Vec::with_capacity(4 + self.example_blocks.len());
        sections.push(ROLE_TEXT.trim_end().to_string());
        sections.push(format!("{ACTS_HEADER}\n{}", explanation_block()));
        for block in &self.example_blocks {
            sections.push(format!("{EXAMPLE_HEADER}\n{block}"));
        }
        sections.push(TASK_TEXT.trim_end().to_string());
        sections.push(render_scenario(goal, history));
        sections.join("\n\n")
    }
}

/// One-shot convenience: build a single prompt.
pub fn build_prompt(
    spec: &PromptSpec,
    goal: &str,
    history: &[Step],
    example_corpus: Option<&Corpus>,
) -> Result<String, PromptError> {
    Ok(PromptBuilder::new(spec.clone(), example_corpus)?.build(goal, history))
}

/// Rewrite a prompt for a parse-failure retry: the clarifying reminder is
/// inserted directly above the final response cue.
pub fn clarified_prompt(prompt: &str) -> String {
    match prompt.strip_suffix(RESPONSE_CUE) {
        Some(prefix) => format!("{prefix}Return only one word/phrase.\n{RESPONSE_CUE}"),
        None => format!("{prompt}\nReturn only one word/phrase."),
    }
}

/// Hex SHA-256 of a prompt, used to correlate logs, caches, and reports.
pub fn prompt_sha256(prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Derive a per-query seed for resample-per-query mode: stable mix of the run
/// seed with the query's identity.
pub fn derive_query_seed(base_seed: u64, session_id: &str, step_index: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_be_bytes());
    hasher.update(session_id.as_bytes());
    hasher.update((step_index as u64).to_be_bytes());
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 8+ bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActionEvent;
    use crate::taxonomy::DialogueAct::*;
    use SpeakerRole::*;

    fn step(index: usize, actor: SpeakerRole, action: ActionEvent) -> Step {
        Step::new(index, actor, action)
    }

    /// Dialogue-dense session: driver asks, commander speaks three times,
    /// then the driver acts twice.
    fn dense_session(id: &str) -> Session {
        Session::new(
            id,
            "make me a sandwich",
            vec![
                step(0, Driver, ActionEvent::speak("what should I do today?", vec![RequestForInstruction])),
                step(1, Commander, ActionEvent::speak("make a sandwich", vec![Instruction])),
                step(2, Commander, ActionEvent::speak("bread is by the toaster", vec![InformationOnObjectDetails])),
                step(3, Commander, ActionEvent::speak("toast two slices", vec![Instruction])),
                step(4, Driver, ActionEvent::physical("pickup", Some("Bread"))),
                step(5, Driver, ActionEvent::physical("putdown", Some("Toaster"))),
            ],
        )
        .with_split("train")
    }

    fn example_corpus() -> Corpus {
        Corpus::new(vec![dense_session("a"), dense_session("b"), dense_session("c")]).unwrap()
    }

    #[test]
    fn zero_shot_prompt_has_the_five_parts_in_order() {
        let spec = PromptSpec::zero_shot();
        let history = dense_session("x").steps;
        let prompt = build_prompt(&spec, "make me a sandwich", &history[..1], None).unwrap();

        let role_at = prompt.find(ROLE_TEXT.trim_end()).unwrap();
        let acts_at = prompt.find(ACTS_HEADER).unwrap();
        let task_at = prompt.find(TASK_TEXT.trim_end()).unwrap();
        let goal_at = prompt.find("Goal: make me a sandwich").unwrap();
        assert!(role_at < acts_at && acts_at < task_at && task_at < goal_at);
        assert!(!prompt.contains(EXAMPLE_HEADER));
        assert!(prompt.ends_with(RESPONSE_CUE));
        assert!(!prompt.ends_with('\n'));
        assert!(prompt.contains("COMMANDER: <observe>\nDRIVER: what should I do today? <<RequestForInstruction>>"));
    }

    #[test]
    fn empty_history_scenario_is_goal_plus_cue() {
        let spec = PromptSpec::zero_shot();
        let prompt = build_prompt(&spec, "water the plant", &[], None).unwrap();
        assert!(prompt.ends_with(&format!("Goal: water the plant\n{RESPONSE_CUE}")));
    }

    #[test]
    fn few_shot_prompt_contains_exactly_n_example_blocks() {
        let corpus = example_corpus();
        let spec = PromptSpec::few_shot(7);
        let prompt = build_prompt(&spec, "goal", &[], Some(&corpus)).unwrap();
        assert_eq!(prompt.matches(EXAMPLE_HEADER).count(), 5);
        // Examples sit between the explanations and the task text.
        let first_example = prompt.find(EXAMPLE_HEADER).unwrap();
        let task_at = prompt.find(TASK_TEXT.trim_end()).unwrap();
        let acts_at = prompt.find(ACTS_HEADER).unwrap();
        assert!(acts_at < first_example && first_example < task_at);
    }

    #[test]
    fn few_shot_requires_a_corpus() {
        let spec = PromptSpec::few_shot(7);
        assert!(matches!(build_prompt(&spec, "g", &[], None), Err(PromptError::MissingCorpus)));
    }

    #[test]
    fn identical_inputs_build_identical_bytes() {
        let corpus = example_corpus();
        let spec = PromptSpec::few_shot(42);
        let a = build_prompt(&spec, "goal", &[], Some(&corpus)).unwrap();
        let b = build_prompt(&spec, "goal", &[], Some(&corpus)).unwrap();
        assert_eq!(a, b);
        let other_seed = PromptSpec::few_shot(43);
        let c = build_prompt(&other_seed, "goal", &[], Some(&corpus)).unwrap();
        // Different seed may select differently; determinism is per-seed.
        let _ = c;
    }

    #[test]
    fn selection_is_deterministic_per_seed() {
        let corpus = example_corpus();
        let spec = PromptSpec::few_shot(123);
        let a = select_examples(&corpus, &spec).unwrap();
        let b = select_examples(&corpus, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selection_enforces_both_observe_constraints() {
        let corpus = example_corpus();
        for seed in 0..200 {
            let spec = PromptSpec::few_shot(seed);
            let examples = select_examples(&corpus, &spec).unwrap();
            assert_eq!(examples.len(), 5);
            let observe_answers = examples.iter().filter(|e| e.answer.is_observe()).count();
            assert!(observe_answers <= 2, "seed {seed}");
            for e in &examples {
                let s = corpus.get(&e.source_session_id).unwrap();
                let (observes, positions) = observe_stats(s, e.prefix_length, &e.answer);
                assert!(
                    observes as f64 / positions as f64 <= 0.35,
                    "seed {seed}: {observes}/{positions}"
                );
            }
        }
    }

    #[test]
    fn selection_fails_cleanly_when_constraints_are_unsatisfiable() {
        // Every commander position observes: sessions of pure robot actions.
        let robot_only = Session::new(
            "r",
            "g",
            vec![
                step(0, Driver, ActionEvent::physical("pickup", Some("Mug"))),
                step(1, Driver, ActionEvent::physical("putdown", Some("Sink"))),
                step(2, Driver, ActionEvent::physical("toggle on", Some("Faucet"))),
            ],
        );
        let corpus = Corpus::new(vec![robot_only]).unwrap();
        let spec = PromptSpec::few_shot(1);
        match select_examples(&corpus, &spec) {
            Err(PromptError::SelectionInfeasible { rejected, limit }) => {
                assert_eq!(rejected, limit);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn selection_errors_on_empty_or_tiny_corpora() {
        let corpus = Corpus::new(vec![]).unwrap();
        assert!(matches!(
            select_examples(&corpus, &PromptSpec::few_shot(1)),
            Err(PromptError::NoEligibleSessions)
        ));
        // One-step sessions have no answer position.
        let one = Session::new(
            "one",
            "g",
            vec![step(0, Driver, ActionEvent::speak("hello", vec![GreetingsSalutations]))],
        );
        let corpus = Corpus::new(vec![one]).unwrap();
        assert!(matches!(
            select_examples(&corpus, &PromptSpec::few_shot(1)),
            Err(PromptError::NoEligibleSessions)
        ));
    }

    #[test]
    fn rendered_example_ends_with_cue_then_answer() {
        let corpus = example_corpus();
        let example = FewShotExample {
            source_session_id: "a".to_string(),
            prefix_length: 2,
            answer: ExampleAnswer::Acts(vec![InformationOnObjectDetails]),
        };
        let block = render_example(&example, &corpus).unwrap();
        assert!(block.starts_with("Goal: make me a sandwich\n"));
        assert!(block.ends_with(&format!("{RESPONSE_CUE}\nInformationOnObjectDetails")));
        // Prefix of 2 steps = 4 pair lines.
        assert_eq!(block.lines().count(), 1 + 4 + 2);
    }

    #[test]
    fn observe_answers_render_the_keyword() {
        assert_eq!(ExampleAnswer::Observe.render(), "OBSERVE");
        assert_eq!(
            ExampleAnswer::Acts(vec![GreetingsSalutations, RequestForInstruction]).render(),
            "Greetings/Salutations,RequestForInstruction"
        );
    }

    #[test]
    fn render_example_checks_bounds() {
        let corpus = example_corpus();
        let example = FewShotExample {
            source_session_id: "a".to_string(),
            prefix_length: 99,
            answer: ExampleAnswer::Observe,
        };
        assert!(matches!(render_example(&example, &corpus), Err(PromptError::PrefixOutOfBounds { .. })));
        let example = FewShotExample {
            source_session_id: "missing".to_string(),
            prefix_length: 1,
            answer: ExampleAnswer::Observe,
        };
        assert!(matches!(render_example(&example, &corpus), Err(PromptError::UnknownSession { .. })));
    }

    #[test]
    fn every_act_name_in_a_prompt_parses_back() {
        let corpus = example_corpus();
        let spec = PromptSpec::few_shot(11);
        let history = dense_session("x").steps;
        let prompt = build_prompt(&spec, "g", &history[..4], Some(&corpus)).unwrap();
        for piece in prompt.split("<<").skip(1) {
            let acts = piece.split(">>").next().unwrap();
            for name in acts.split(',') {
                assert!(crate::taxonomy::parse_act(name).is_ok(), "{name}");
            }
        }
    }

    #[test]
    fn clarified_prompt_inserts_the_reminder_before_the_cue() {
        let prompt = format!("stuff\n\nGoal: g\n{RESPONSE_CUE}");
        let clarified = clarified_prompt(&prompt);
        assert!(clarified.ends_with(&format!("Goal: g\nReturn only one word/phrase.\n{RESPONSE_CUE}")));
        // Stable under repetition in the sense of appending one line each time.
        let twice = clarified_prompt(&clarified);
        assert!(twice.contains("Return only one word/phrase.\nReturn only one word/phrase."));
    }

    #[test]
    fn prompt_hash_is_stable_and_hex() {
        let h = prompt_sha256("hello");
        assert_eq!(h.len(), 64);
        assert_eq!(h, prompt_sha256("hello"));
        assert_ne!(h, prompt_sha256("hello!"));
    }

    #[test]
    fn query_seed_depends_on_all_inputs() {
        let a = derive_query_seed(1, "s", 0);
        assert_eq!(a, derive_query_seed(1, "s", 0));
        assert_ne!(a, derive_query_seed(2, "s", 0));
        assert_ne!(a, derive_query_seed(1, "t", 0));
        assert_ne!(a, derive_query_seed(1, "s", 1));
    }

    #[test]
    fn aggregate_scope_checks_the_batch() {
        let corpus = example_corpus();
        let mut spec = PromptSpec::few_shot(5);
        spec.fraction_scope = FractionScope::Aggregate;
        let examples = select_examples(&corpus, &spec).unwrap();
        assert_eq!(examples.len(), 5);
        let mut observes = 0;
        let mut positions = 0;
        for e in &examples {
            let s = corpus.get(&e.source_session_id).unwrap();
            let (o, p) = observe_stats(s, e.prefix_length, &e.answer);
            observes += o;
            positions += p;
        }
        assert!(observes as f64 / positions as f64 <= 0.35);
    }
}
