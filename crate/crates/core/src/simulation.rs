//! The live interaction loop: a user policy facing an embodied agent.
//!
//! Each round the policy decides first. A Speak appends a Commander step.
//! An Observe hands the turn to the agent, which acts (Driver step), idles,
//! or finishes. Because the engine is turn-based, the "maximum time to
//! observe" rule is discretized: after k consecutive observe decisions with
//! an idle agent, the policy is re-queried with observing forbidden and the
//! forced utterance is appended.

use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SessionRecord;
use crate::model::{ActionEvent, Session, SpeakerRole, Step};
use crate::policy::{DecisionContext, PolicyConstraints, PolicyError, UserDecision, UserPolicy};
use crate::prompting::derive_query_seed;
use crate::realization::{realize, TemplateStore};

/// What the agent did when given the turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AgentEvent {
    /// A visible robot action: speech or a physical act, never Observe.
    Act { event: ActionEvent },
    Idle,
    Done { success: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimLimits {
    /// Maximum rounds before the run is cut off.
    pub max_steps: usize,
    /// Consecutive observe decisions (over an idle agent) that trigger a
    /// forced speak.
    pub max_consecutive_observes: usize,
}

impl Default for SimLimits {
    fn default() -> Self {
        SimLimits { max_steps: 500, max_consecutive_observes: 10 }
    }
}

impl SimLimits {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_steps == 0 || self.max_consecutive_observes == 0 {
            return Err(SimError::InvalidLimits(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionSource {
    /// The policy spoke of its own accord.
    Policy,
    /// The policy spoke because observing was forbidden.
    ForcedPolicy,
    /// The agent acted.
    Agent,
}

/// One record per session step, aligned 1:1 with `session.steps`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStepRecord {
    pub source: DecisionSource,
    pub forced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    /// Wall-clock decision time; recorded only for LLM-backed decisions so
    /// closed-form runs serialize identically across reruns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

/// Round-level trace, one entry per round (steps are a subset of rounds
/// because idle rounds append nothing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundOutcome {
    Speak,
    AgentAct,
    Idle,
    /// The k-th consecutive idle: a forced speak happened this round.
    IdleForced,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    AgentDone { success: bool },
    StepCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub session: Session,
    pub records: Vec<SimStepRecord>,
    pub trace: Vec<RoundOutcome>,
    pub termination: Termination,
    pub rounds: usize,
    pub forced_speaks: usize,
    pub seed: u64,
    pub policy: String,
}

/// Serialization shape: the session travels in the canonical corpus record
/// form, everything else inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimLogWire {
    pub session: SessionRecord,
    pub records: Vec<SimStepRecord>,
    pub trace: Vec<RoundOutcome>,
    pub termination: Termination,
    pub rounds: usize,
    pub forced_speaks: usize,
    pub seed: u64,
    pub policy: String,
}

impl SimLog {
    pub fn to_wire(&self) -> SimLogWire {
        SimLogWire {
            session: SessionRecord::from(&self.session),
            records: self.records.clone(),
            trace: self.trace.clone(),
            termination: self.termination,
            rounds: self.rounds,
            forced_speaks: self.forced_speaks,
            seed: self.seed,
            policy: self.policy.clone(),
        }
    }

    pub fn from_wire(wire: SimLogWire) -> Result<SimLog, crate::corpus::CorpusError> {
        Ok(SimLog {
            session: wire
                .session
                .into_session()
                .map_err(|message| crate::corpus::CorpusError::Malformed { line: 0, message })?,
            records: wire.records,
            trace: wire.trace,
            termination: wire.termination,
            rounds: wire.rounds,
            forced_speaks: wire.forced_speaks,
            seed: wire.seed,
            policy: wire.policy,
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid limits {0:?}: both bounds must be >= 1")]
    InvalidLimits(SimLimits),
    #[error("policy failed in round {round}: {source}")]
    Policy {
        round: usize,
        #[source]
        source: PolicyError,
    },
    #[error("agent returned an Observe event in round {round}; agents act, idle, or finish")]
    AgentObserve { round: usize },
    #[error("policy observed under forbid_observe in round {round}")]
    ForbiddenObserve { round: usize },
}

/// A failed run with everything produced up to the failure.
#[derive(Debug, Error)]
#[error("simulation aborted after {rounds} rounds with {} steps: {error}", session.len())]
pub struct SimFailure {
    pub session: Session,
    pub records: Vec<SimStepRecord>,
    pub trace: Vec<RoundOutcome>,
    pub rounds: usize,
    pub error: SimError,
}

/// The embodied-agent side of the loop. Stateful by design (replay cursors,
/// task progress); one loop drives one agent sequentially.
#[async_trait]
pub trait EmbodiedAgent: Send {
    async fn next_event(&mut self, history: &[Step]) -> AgentEvent;
}

/// Replays a recorded session's Driver events in order, idling once per gold
/// Commander step, then reports Done.
pub struct ReplayAgent {
    steps: Vec<Step>,
    cursor: usize,
    success: bool,
}

impl ReplayAgent {
    pub fn new(gold: &Session) -> Self {
        ReplayAgent { steps: gold.steps.clone(), cursor: 0, success: true }
    }

    pub fn with_success(mut self, success: bool) -> Self {
        self.success = success;
        self
    }
}

#[async_trait]
impl EmbodiedAgent for ReplayAgent {
    async fn next_event(&mut self, _history: &[Step]) -> AgentEvent {
        loop {
            let Some(step) = self.steps.get(self.cursor) else {
                return AgentEvent::Done { success: self.success };
            };
            self.cursor += 1;
            match (&step.actor, &step.action) {
                (SpeakerRole::Driver, ActionEvent::Observe) => continue,
                (SpeakerRole::Driver, action) => {
                    return AgentEvent::Act { event: action.clone() };
                }
                (SpeakerRole::Commander, _) => return AgentEvent::Idle,
            }
        }
    }
}

/// Never acts, never finishes.
pub struct IdleAgent;

#[async_trait]
impl EmbodiedAgent for IdleAgent {
    async fn next_event(&mut self, _history: &[Step]) -> AgentEvent {
        AgentEvent::Idle
    }
}

/// Emits a fixed event list, then Done.
pub struct ScriptedAgent {
    events: std::collections::VecDeque<AgentEvent>,
    exhausted_success: bool,
}

impl ScriptedAgent {
    pub fn new(events: impl IntoIterator<Item = AgentEvent>) -> Self {
        ScriptedAgent { events: events.into_iter().collect(), exhausted_success: true }
    }
}

#[async_trait]
impl EmbodiedAgent for ScriptedAgent {
    async fn next_event(&mut self, _history: &[Step]) -> AgentEvent {
        self.events
            .pop_front()
            .unwrap_or(AgentEvent::Done { success: self.exhausted_success })
    }
}

/// Run one interaction loop to termination. Deterministic given the policy,
/// agent, and seed (the seed drives utterance realization for acts the
/// policy did not verbalize itself).
pub async fn run_session(
    goal: &str,
    policy: &dyn UserPolicy,
    agent: &mut dyn EmbodiedAgent,
    limits: &SimLimits,
    store: Option<&TemplateStore>,
    seed: u64,
) -> Result<SimLog, Box<SimFailure>> {
    let session_id = format!("sim-{seed}");
    let empty_store = TemplateStore::default();
    let store = store.unwrap_or(&empty_store);

    let mut steps: Vec<Step> = Vec::new();
    let mut records: Vec<SimStepRecord> = Vec::new();
    let mut trace: Vec<RoundOutcome> = Vec::new();
    let mut observe_streak = 0usize;
    let mut forced_speaks = 0usize;
    let mut rounds = 0usize;

    macro_rules! fail {
        ($error:expr) => {
            return Err(Box::new(SimFailure {
                session: Session::new(&session_id, goal, steps),
                records,
                trace,
                rounds,
                error: $error,
            }))
        };
    }

    if let Err(error) = limits.validate() {
        fail!(error);
    }

    let termination = loop {
        if rounds >= limits.max_steps {
            break Termination::StepCap;
        }
        rounds += 1;

        let ctx = DecisionContext {
            goal,
            history: &steps,
            session_id: &session_id,
            step_index: steps.len(),
        };
        let started = Instant::now();
        let decided = match policy.decide(&ctx, &PolicyConstraints::none()).await {
            Ok(decided) => decided,
            Err(source) => fail!(SimError::Policy { round: rounds, source }),
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        match decided.decision {
            UserDecision::Speak { acts, utterance } => {
                let utterance = utterance.unwrap_or_else(|| {
                    realize(&acts, store, derive_query_seed(seed, &session_id, steps.len()))
                });
                steps.push(Step::new(
                    steps.len(),
                    SpeakerRole::Commander,
                    ActionEvent::Speak { utterance, acts },
                ));
                records.push(SimStepRecord {
                    source: DecisionSource::Policy,
                    forced: false,
                    latency_ms: decided.prompt_sha256.as_ref().map(|_| latency_ms),
                    prompt_sha256: decided.prompt_sha256,
                });
                trace.push(RoundOutcome::Speak);
                observe_streak = 0;
            }
            UserDecision::Observe => match agent.next_event(&steps).await {
                AgentEvent::Act { event: ActionEvent::Observe } => {
                    fail!(SimError::AgentObserve { round: rounds })
                }
                AgentEvent::Act { event } => {
                    steps.push(Step::new(steps.len(), SpeakerRole::Driver, event));
                    records.push(SimStepRecord {
                        source: DecisionSource::Agent,
                        forced: false,
                        prompt_sha256: None,
                        latency_ms: None,
                    });
                    trace.push(RoundOutcome::AgentAct);
                    observe_streak = 0;
                }
                AgentEvent::Idle => {
                    observe_streak += 1;
                    if observe_streak < limits.max_consecutive_observes {
                        trace.push(RoundOutcome::Idle);
                        continue;
                    }
                    // Timeout reached: the policy must speak now.
                    let ctx = DecisionContext {
                        goal,
                        history: &steps,
                        session_id: &session_id,
                        step_index: steps.len(),
                    };
                    let started = Instant::now();
                    let forced = match policy.decide(&ctx, &PolicyConstraints::forced()).await {
                        Ok(forced) => forced,
                        Err(source) => fail!(SimError::Policy { round: rounds, source }),
                    };
                    let latency_ms = started.elapsed().as_millis() as u64;
                    let UserDecision::Speak { acts, utterance } = forced.decision else {
                        fail!(SimError::ForbiddenObserve { round: rounds });
                    };
                    let utterance = utterance.unwrap_or_else(|| {
                        realize(&acts, store, derive_query_seed(seed, &session_id, steps.len()))
                    });
                    steps.push(Step::new(
                        steps.len(),
                        SpeakerRole::Commander,
                        ActionEvent::Speak { utterance, acts },
                    ));
                    records.push(SimStepRecord {
                        source: DecisionSource::ForcedPolicy,
                        forced: true,
                        latency_ms: forced.prompt_sha256.as_ref().map(|_| latency_ms),
                        prompt_sha256: forced.prompt_sha256,
                    });
                    trace.push(RoundOutcome::IdleForced);
                    observe_streak = 0;
                    forced_speaks += 1;
                }
                AgentEvent::Done { success } => {
                    trace.push(RoundOutcome::Done);
                    break Termination::AgentDone { success };
                }
            },
        }
    };

    Ok(SimLog {
        session: Session::new(&session_id, goal, steps),
        records,
        trace,
        termination,
        rounds,
        forced_speaks,
        seed,
        policy: policy.name().to_string(),
    })
}
