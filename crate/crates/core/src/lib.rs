//! Core engine for simulating the user side of embodied task dialogues.
//!
//! A session is an alternating record of what the user (the COMMANDER) and
//! the robot (the DRIVER) did: the user either observes silently or speaks
//! with one or more dialogue acts, while the robot acts in the world or asks
//! questions back. This crate holds everything needed to model, replay, and
//! evaluate that interaction:
//!
//! * [`taxonomy`]: the closed set of 18 dialogue acts and their metadata.
//! * [`model`]: sessions, steps, speaker roles, and validation.
//! * [`transcript`]: the plain-text turn-pair rendering and its parser.
//! * [`corpus`]: JSONL corpora, loading, saving, and split statistics.
//! * [`teach`]: best-effort ingestion of raw TEACh-style game files.
//! * [`transforms`]: move filtering applied before evaluation.
//! * [`prompting`]: zero-shot and few-shot prompt assembly.
//! * [`llm`]: chat-completion clients, retries, and the response cache.
//! * [`policy`]: user policies (rule baselines and the LLM-backed policy).
//! * [`realization`]: turning predicted acts back into surface utterances.
//! * [`simulation`]: the live loop that pairs a policy with an agent.
//! * [`evaluation`]: replay evaluation, Speak-F1 and dialogue-act metrics.
//! * [`report`]: rendering evaluation reports as text or JSON.
//! * [`api`]: wire types shared by the HTTP service and its clients.

pub mod api;
pub mod corpus;
pub mod evaluation;
pub mod llm;
pub mod model;
pub mod policy;
pub mod prompting;
pub mod realization;
pub mod report;
pub mod simulation;
pub mod taxonomy;
pub mod teach;
pub mod transcript;
pub mod transforms;
