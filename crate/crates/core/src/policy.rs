//! User-decision policies: at each step the simulated user either observes
//! or speaks with one or more dialogue acts.
//!
//! Three families: the reactive baseline (speaks only when the robot just
//! spoke, always with Instruction), the majority-act variant (same timing,
//! data-derived act), and the LLM-backed policy (prompt, complete, parse,
//! retry, fallback). Test and harness policies (constant, oracle, gold
//! replay) live here too since they implement the same trait.

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{user_act_counts, Corpus};
use crate::llm::{ClientError, CompletionClient, CompletionRequest};
use crate::model::{ActionEvent, Session, SpeakerRole, Step};
use crate::prompting::{
    clarified_prompt, derive_query_seed, prompt_sha256, PromptBuilder, PromptError, PromptMode,
    PromptSpec,
};
use crate::taxonomy::{parse_act, DialogueAct};

/// What the simulated user does at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UserDecision {
    Observe,
    Speak {
        acts: Vec<DialogueAct>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        utterance: Option<String>,
    },
}

impl UserDecision {
    /// A speak decision; duplicate acts are dropped, order preserved.
    pub fn speak(acts: Vec<DialogueAct>) -> UserDecision {
        let mut unique: Vec<DialogueAct> = Vec::with_capacity(acts.len());
        for act in acts {
            if !unique.contains(&act) {
                unique.push(act);
            }
        }
        assert!(!unique.is_empty(), "a speak decision needs at least one act");
        UserDecision::Speak { acts: unique, utterance: None }
    }

    pub fn speak_with(acts: Vec<DialogueAct>, utterance: impl Into<String>) -> UserDecision {
        match UserDecision::speak(acts) {
            UserDecision::Speak { acts, .. } => {
                UserDecision::Speak { acts, utterance: Some(utterance.into()) }
            }
            UserDecision::Observe => unreachable!(),
        }
    }

    pub fn is_speak(&self) -> bool {
        matches!(self, UserDecision::Speak { .. })
    }

    pub fn acts(&self) -> Option<&[DialogueAct]> {
        match self {
            UserDecision::Observe => None,
            UserDecision::Speak { acts, .. } => Some(acts),
        }
    }

    /// The answer-token rendering: "OBSERVE" or comma-joined act names.
    pub fn render_acts(&self) -> String {
        match self {
            UserDecision::Observe => "OBSERVE".to_string(),
            UserDecision::Speak { acts, .. } => {
                acts.iter().map(|a| a.canonical_name()).collect::<Vec<_>>().join(",")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicyConstraints {
    /// When set the policy must speak; used by the forced-speak rule and by
    /// dialogue-act evaluation at gold speaking turns.
    pub forbid_observe: bool,
}

impl PolicyConstraints {
    pub fn none() -> Self {
        PolicyConstraints { forbid_observe: false }
    }

    pub fn forced() -> Self {
        PolicyConstraints { forbid_observe: true }
    }
}

/// Everything a policy may look at when deciding: the goal and the full
/// interaction history so far, plus identifiers for logging and seeding.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub goal: &'a str,
    pub history: &'a [Step],
    pub session_id: &'a str,
    pub step_index: usize,
}

/// A decision plus how it was reached. `prompt_sha256` is set only for
/// LLM-backed decisions; `attempts` counts completion calls (0 for
/// closed-form policies); `fallback` marks decisions produced by the
/// deterministic fallback after retries failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub decision: UserDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    pub attempts: u32,
    pub fallback: bool,
}

impl PolicyDecision {
    pub fn closed_form(decision: UserDecision) -> Self {
        PolicyDecision { decision, prompt_sha256: None, attempts: 0, fallback: false }
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("completion failed at {session_id}[{step_index}] (prompt {prompt_sha256}): {source}")]
    Client {
        session_id: String,
        step_index: usize,
        prompt_sha256: String,
        #[source]
        source: ClientError,
    },
    #[error("prompt construction failed: {0}")]
    Prompt(#[from] PromptError),
    #[error("majority act undefined: the split has no user speak turns")]
    EmptyMajoritySplit,
    #[error("oracle has no gold step for {session_id}[{step_index}]")]
    OracleMiss { session_id: String, step_index: usize },
}

#[async_trait]
pub trait UserPolicy: Send + Sync {
    async fn decide(
        &self,
        ctx: &DecisionContext<'_>,
        constraints: &PolicyConstraints,
    ) -> Result<PolicyDecision, PolicyError>;

    fn name(&self) -> &'static str;
}

/// Did the robot speak in the immediately preceding turn? A trailing
/// Commander step means the robot's half of that exchange was an observe.
fn robot_just_spoke(history: &[Step]) -> bool {
    matches!(
        history.last(),
        Some(Step { actor: SpeakerRole::Driver, action: ActionEvent::Speak { .. }, .. })
    )
}

/// The "only speaks when spoken to" baseline: Speak[Instruction] right after
/// a robot utterance, Observe otherwise.
pub fn reactive_predict(history: &[Step], constraints: &PolicyConstraints) -> UserDecision {
    if constraints.forbid_observe || robot_just_spoke(history) {
        UserDecision::speak(vec![DialogueAct::Instruction])
    } else {
        UserDecision::Observe
    }
}

/// Most frequent act over the split's user speak turns (each act of a
/// multi-act turn counts once). Ties break to the lexicographically smaller
/// canonical name.
pub fn majority_act(sessions: &[&Session]) -> Result<DialogueAct, PolicyError> {
    let counts = user_act_counts(sessions);
    let mut ranked: Vec<(DialogueAct, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1).then_with(|| a.0.canonical_name().cmp(b.0.canonical_name()))
    });
    ranked.first().map(|(act, _)| *act).ok_or(PolicyError::EmptyMajoritySplit)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unrecognized model response {text:?}")]
pub struct ResponseParseError {
    pub text: String,
}

/// Strip decoration a model may wrap around its answer: whitespace, quote or
/// bracket pairs, trailing punctuation.
fn normalize_response(text: &str) -> &str {
    let mut s = text.trim();
    loop {
        let before = s;
        for (open, close) in
            [('"', '"'), ('\'', '\''), ('`', '`'), ('<', '>'), ('[', ']'), ('(', ')'), ('{', '}')]
        {
            while s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
                s = s[1..s.len() - 1].trim();
            }
        }
        s = s.trim_end_matches(['.', '!', '?', ',', ';', ':']).trim();
        if s == before {
            return s;
        }
    }
}

/// Interpret a completion as a decision: the word OBSERVE (any case, any
/// wrapping) means observe; otherwise the text must be comma-separated act
/// names. Anything else is a parse error and the caller retries or falls
/// back.
pub fn parse_llm_response(text: &str) -> Result<UserDecision, ResponseParseError> {
    let normalized = normalize_response(text);
    if normalized.is_empty() {
        return Err(ResponseParseError { text: text.to_string() });
    }
    if normalized.eq_ignore_ascii_case("observe") {
        return Ok(UserDecision::Observe);
    }
    let mut acts: Vec<DialogueAct> = Vec::new();
    for part in normalized.split(',') {
        let act = parse_act(part).map_err(|_| ResponseParseError { text: text.to_string() })?;
        if !acts.contains(&act) {
            acts.push(act);
        }
    }
    Ok(UserDecision::speak(acts))
}

/// Request parameters for LLM-backed prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmOptions {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Additional attempts (with the clarified prompt) after a bad first
    /// answer.
    pub retries: u32,
    /// Act spoken when every attempt failed and observing is forbidden.
    pub fallback_act: DialogueAct,
}

impl Default for LlmOptions {
    fn default() -> Self {
        LlmOptions {
            model_id: "gpt-4".to_string(),
            temperature: 0.0,
            max_tokens: 32,
            retries: 2,
            fallback_act: DialogueAct::Instruction,
        }
    }
}

/// One LLM-backed decision: build the prompt, complete, parse; on a bad
/// answer (unparseable, or OBSERVE while forbidden) retry with the clarified
/// prompt; after the retry budget fall back to Observe when allowed, else to
/// Speak[fallback_act]. Client failures abort with full context.
pub async fn llm_predict(
    ctx: &DecisionContext<'_>,
    builder: &PromptBuilder,
    options: &LlmOptions,
    constraints: &PolicyConstraints,
    client: &dyn CompletionClient,
) -> Result<PolicyDecision, PolicyError> {
    let prompt = builder.build(ctx.goal, ctx.history);
    let hash = prompt_sha256(&prompt);
    let clarified = clarified_prompt(&prompt);

    let mut attempts = 0u32;
    let mut parsed: Option<UserDecision> = None;
    for attempt in 0..=options.retries {
        let text = if attempt == 0 { &prompt } else { &clarified };
        let mut request = CompletionRequest::new(text.clone(), options.model_id.clone());
        request.temperature = options.temperature;
        request.max_tokens = options.max_tokens;

        attempts += 1;
        let response = client.complete(&request).await.map_err(|source| PolicyError::Client {
            session_id: ctx.session_id.to_string(),
            step_index: ctx.step_index,
            prompt_sha256: hash.clone(),
            source,
        })?;
        match parse_llm_response(&response) {
            Ok(UserDecision::Observe) if constraints.forbid_observe => continue,
            Ok(decision) => {
                parsed = Some(decision);
                break;
            }
            Err(_) => continue,
        }
    }

    let (decision, fallback) = match parsed {
        Some(decision) => (decision, false),
        None if constraints.forbid_observe => {
            (UserDecision::speak(vec![options.fallback_act]), true)
        }
        None => (UserDecision::Observe, true),
    };
    Ok(PolicyDecision { decision, prompt_sha256: Some(hash), attempts, fallback })
}

/// Table 1's baseline: reacts to robot speech with Speak[Instruction].
pub struct ReactiveBaseline;

#[async_trait]
impl UserPolicy for ReactiveBaseline {
    async fn decide(
        &self,
        ctx: &DecisionContext<'_>,
        constraints: &PolicyConstraints,
    ) -> Result<PolicyDecision, PolicyError> {
        Ok(PolicyDecision::closed_form(reactive_predict(ctx.history, constraints)))
    }

    fn name(&self) -> &'static str {
        "reactive"
    }
}

/// Reactive timing with a data-derived act instead of the hardcoded
/// Instruction. On TEACh-like data the majority act is Instruction, making
/// this coincide with [`ReactiveBaseline`].
pub struct MajorityPolicy {
    pub act: DialogueAct,
}

impl MajorityPolicy {
    pub fn from_split(sessions: &[&Session]) -> Result<Self, PolicyError> {
        Ok(MajorityPolicy { act: majority_act(sessions)? })
    }
}

#[async_trait]
impl UserPolicy for MajorityPolicy {
    async fn decide(
        &self,
        ctx: &DecisionContext<'_>,
        constraints: &PolicyConstraints,
    ) -> Result<PolicyDecision, PolicyError> {
        let decision = if constraints.forbid_observe || robot_just_spoke(ctx.history) {
            UserDecision::speak(vec![self.act])
        } else {
            UserDecision::Observe
        };
        Ok(PolicyDecision::closed_form(decision))
    }

    fn name(&self) -> &'static str {
        "majority"
    }
}

/// Always answers with a fixed decision (honoring forbid_observe).
pub struct ConstantPolicy {
    pub decision: UserDecision,
}

impl ConstantPolicy {
    pub fn observe() -> Self {
        ConstantPolicy { decision: UserDecision::Observe }
    }
}

#[async_trait]
impl UserPolicy for ConstantPolicy {
    async fn decide(
        &self,
        _ctx: &DecisionContext<'_>,
        constraints: &PolicyConstraints,
    ) -> Result<PolicyDecision, PolicyError> {
        let decision = match (&self.decision, constraints.forbid_observe) {
            (UserDecision::Observe, true) => UserDecision::speak(vec![DialogueAct::Instruction]),
            (decision, _) => decision.clone(),
        };
        Ok(PolicyDecision::closed_form(decision))
    }

    fn name(&self) -> &'static str {
        "constant"
    }
}

/// Answers with the gold commander behavior looked up by (session id, step
/// index). A harness calibration policy: replay evaluation against the same
/// corpus scores 1.0 everywhere.
pub struct OraclePolicy {
    corpus: Arc<Corpus>,
}

impl OraclePolicy {
    pub fn new(corpus: Arc<Corpus>) -> Self {
        OraclePolicy { corpus }
    }
}

/// The gold decision at a step: the commander's speak, or Observe.
pub fn gold_decision(step: &Step) -> UserDecision {
    match (&step.actor, &step.action) {
        (SpeakerRole::Commander, ActionEvent::Speak { utterance, acts }) => {
            UserDecision::speak_with(acts.clone(), utterance.clone())
        }
        _ => UserDecision::Observe,
    }
}

#[async_trait]
impl UserPolicy for OraclePolicy {
    async fn decide(
        &self,
        ctx: &DecisionContext<'_>,
        constraints: &PolicyConstraints,
    ) -> Result<PolicyDecision, PolicyError> {
        let step = self
            .corpus
            .get(ctx.session_id)
            .and_then(|s| s.steps.get(ctx.step_index))
            .ok_or_else(|| PolicyError::OracleMiss {
                session_id: ctx.session_id.to_string(),
                step_index: ctx.step_index,
            })?;
        let decision = match gold_decision(step) {
            UserDecision::Observe if constraints.forbid_observe => {
                UserDecision::speak(vec![DialogueAct::Instruction])
            }
            decision => decision,
        };
        Ok(PolicyDecision::closed_form(decision))
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Replays one gold session's commander behavior by history position; used
/// to drive closed-loop simulations that reconstruct a recorded session.
pub struct GoldReplayPolicy {
    gold: Session,
}

impl GoldReplayPolicy {
    pub fn new(gold: Session) -> Self {
        GoldReplayPolicy { gold }
    }
}

#[async_trait]
impl UserPolicy for GoldReplayPolicy {
    async fn decide(
        &self,
        ctx: &DecisionContext<'_>,
        constraints: &PolicyConstraints,
    ) -> Result<PolicyDecision, PolicyError> {
        let decision = match self.gold.steps.get(ctx.history.len()).map(gold_decision) {
            Some(UserDecision::Observe) | None if constraints.forbid_observe => {
                UserDecision::speak(vec![DialogueAct::Instruction])
            }
            Some(decision) => decision,
            None => UserDecision::Observe,
        };
        Ok(PolicyDecision::closed_form(decision))
    }

    fn name(&self) -> &'static str {
        "gold-replay"
    }
}

/// The LLM-backed policy: one prompt builder per run (or one per query under
/// resample-per-query), a shared completion client, retry and fallback.
pub struct LlmPolicy {
    spec: PromptSpec,
    base_builder: PromptBuilder,
    example_corpus: Option<Corpus>,
    resample_per_query: bool,
    options: LlmOptions,
    client: Arc<dyn CompletionClient>,
}

impl LlmPolicy {
    pub fn new(
        spec: PromptSpec,
        example_corpus: Option<&Corpus>,
        client: Arc<dyn CompletionClient>,
        options: LlmOptions,
    ) -> Result<Self, PromptError> {
        let base_builder = PromptBuilder::new(spec.clone(), example_corpus)?;
        Ok(LlmPolicy {
            spec,
            base_builder,
            example_corpus: example_corpus.cloned(),
            resample_per_query: false,
            options,
            client,
        })
    }

    /// Redraw few-shot examples for every query, seeded from (run seed,
    /// session id, step index).
    pub fn with_resample_per_query(mut self, on: bool) -> Self {
        self.resample_per_query = on;
        self
    }

    pub fn options(&self) -> &LlmOptions {
        &self.options
    }

    pub fn builder(&self) -> &PromptBuilder {
        &self.base_builder
    }
}

#[async_trait]
impl UserPolicy for LlmPolicy {
    async fn decide(
        &self,
        ctx: &DecisionContext<'_>,
        constraints: &PolicyConstraints,
    ) -> Result<PolicyDecision, PolicyError> {
        if self.resample_per_query && self.spec.mode == PromptMode::FewShot {
            let mut spec = self.spec.clone();
            spec.rng_seed = derive_query_seed(self.spec.rng_seed, ctx.session_id, ctx.step_index);
            let builder = PromptBuilder::new(spec, self.example_corpus.as_ref())?;
            llm_predict(ctx, &builder, &self.options, constraints, self.client.as_ref()).await
        } else {
            llm_predict(ctx, &self.base_builder, &self.options, constraints, self.client.as_ref())
                .await
        }
    }

    fn name(&self) -> &'static str {
        "llm"
    }
}
