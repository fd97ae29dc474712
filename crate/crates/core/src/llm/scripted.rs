//! Offline backends: scripted queues for tests, a prompt-keyed variant for
//! concurrent runs, a deterministic rule-based responder, and the explicit
//! no-backend stub.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{ClientError, CompletionClient, CompletionRequest};
use crate::taxonomy::{ALL_ACTS, ACT_COUNT};

/// Pops canned responses in order. Pop order is only deterministic under
/// sequential use; concurrent runs should use [`KeyedScriptedClient`].
pub struct ScriptedClient {
    queue: Mutex<VecDeque<String>>,
    calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedClient {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Total completed calls, successful or not.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("queue lock").len()
    }
}

#[async_trait]
impl CompletionClient for ScriptedClient {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        request.validate()?;
        let served = self.calls.fetch_add(1, Ordering::SeqCst);
        match self.queue.lock().expect("queue lock").pop_front() {
            Some(response) => Ok(response),
            None => Err(ClientError::QueueExhausted { served }),
        }
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

/// Scripted responses keyed by the exact prompt, safe under concurrency: the
/// response depends on the request, never on arrival order.
pub struct KeyedScriptedClient {
    responses: HashMap<String, String>,
    default: Option<String>,
    calls: AtomicUsize,
}

impl KeyedScriptedClient {
    pub fn new() -> Self {
        KeyedScriptedClient { responses: HashMap::new(), default: None, calls: AtomicUsize::new(0) }
    }

    pub fn insert(&mut self, prompt: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(prompt.into(), response.into());
    }

    /// Response returned for prompts with no exact entry.
    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Default for KeyedScriptedClient {
    fn default() -> Self {
        KeyedScriptedClient::new()
    }
}

#[async_trait]
impl CompletionClient for KeyedScriptedClient {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(response) = self.responses.get(&request.prompt) {
            return Ok(response.clone());
        }
        if let Some(default) = &self.default {
            return Ok(default.clone());
        }
        Err(ClientError::MissingScript { hash: crate::prompting::prompt_sha256(&request.prompt) })
    }

    fn name(&self) -> &'static str {
        "keyed-scripted"
    }
}

/// Deterministic stand-in model: the response is a pure function of the
/// prompt bytes. Roughly 40% of prompts get "OBSERVE", the rest get a single
/// act name. Useful for populating caches and exercising the full pipeline
/// without a model.
pub struct RuleClient {
    calls: AtomicUsize,
}

impl RuleClient {
    pub fn new() -> Self {
        RuleClient { calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// The response this client gives for a prompt.
    pub fn response_for(prompt: &str) -> String {
        let digest = Sha256::digest(prompt.as_bytes());
        if digest[0] % 5 < 2 {
            "OBSERVE".to_string()
        } else {
            let act = ALL_ACTS[digest[1] as usize % ACT_COUNT];
            act.canonical_name().to_string()
        }
    }
}

impl Default for RuleClient {
    fn default() -> Self {
        RuleClient::new()
    }
}

#[async_trait]
impl CompletionClient for RuleClient {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(RuleClient::response_for(&request.prompt))
    }

    fn name(&self) -> &'static str {
        "rule"
    }
}

/// Always fails with [`ClientError::NoBackend`]; used where configuration
/// requires a client slot but none was set up.
pub struct NoBackendClient;

#[async_trait]
impl CompletionClient for NoBackendClient {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        request.validate()?;
        Err(ClientError::NoBackend)
    }

    fn name(&self) -> &'static str {
        "none"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest::new(prompt, "m")
    }

    #[tokio::test]
    async fn scripted_pops_in_order_then_exhausts() {
        let client = ScriptedClient::new(["a", "b"]);
        assert_eq!(client.complete(&request("x")).await.unwrap(), "a");
        assert_eq!(client.complete(&request("y")).await.unwrap(), "b");
        let err = client.complete(&request("z")).await.unwrap_err();
        assert!(matches!(err, ClientError::QueueExhausted { served: 2 }));
        assert_eq!(client.calls(), 3);
    }

    #[tokio::test]
    async fn keyed_client_answers_by_prompt_not_order() {
        let mut client = KeyedScriptedClient::new();
        client.insert("p1", "r1");
        client.insert("p2", "r2");
        assert_eq!(client.complete(&request("p2")).await.unwrap(), "r2");
        assert_eq!(client.complete(&request("p1")).await.unwrap(), "r1");
        assert!(matches!(
            client.complete(&request("p3")).await.unwrap_err(),
            ClientError::MissingScript { .. }
        ));
        let with_default = KeyedScriptedClient::new().with_default("fallback");
        assert_eq!(with_default.complete(&request("anything")).await.unwrap(), "fallback");
    }

    #[tokio::test]
    async fn rule_client_is_a_pure_function_of_the_prompt() {
        let client = RuleClient::new();
        let a = client.complete(&request("prompt one")).await.unwrap();
        let b = client.complete(&request("prompt one")).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(a, RuleClient::response_for("prompt one"));
        // Every response is parseable as OBSERVE or an act name.
        for i in 0..64 {
            let response = RuleClient::response_for(&format!("prompt {i}"));
            assert!(
                response == "OBSERVE" || crate::taxonomy::parse_act(&response).is_ok(),
                "{response}"
            );
        }
        // Both branches occur in practice.
        let outputs: Vec<String> = (0..64).map(|i| RuleClient::response_for(&format!("p{i}"))).collect();
        assert!(outputs.iter().any(|o| o == "OBSERVE"));
        assert!(outputs.iter().any(|o| o != "OBSERVE"));
    }

    #[tokio::test]
    async fn no_backend_always_errors() {
        let err = NoBackendClient.complete(&request("p")).await.unwrap_err();
        assert!(matches!(err, ClientError::NoBackend));
    }
}
