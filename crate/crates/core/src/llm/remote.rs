//! HTTP client for chat-completion-style endpoints.
//!
//! The request body is the ubiquitous chat shape: a messages array with one
//! system and one user message, plus model/temperature/max_tokens. The full
//! prompt travels as the user message; the system message is a fixed framing
//! line. The response text is the first choice's message content.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::{ClientError, CompletionClient, CompletionRequest, API_KEY_ENV};

/// System message sent with every request.
pub const SYSTEM_TEXT: &str = "You are a helpful assistant.";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Endpoint base, e.g. `http://localhost:8080/v1`; the client appends
    /// `/chat/completions`.
    pub base_url: String,
    pub model_id: String,
    pub api_key: Option<String>,
    pub system_text: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_factor: u32,
    /// Maximum in-flight requests.
    pub max_concurrency: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key: None,
            system_text: SYSTEM_TEXT.to_string(),
            timeout: Duration::from_secs(60),
            max_attempts: 5,
            backoff_base: Duration::from_secs(1),
            backoff_factor: 2,
            max_concurrency: 4,
        }
    }

    /// Read the API key from `USERSIM_API_KEY` if present.
    pub fn with_env_key(mut self) -> Self {
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: String,
}

pub struct RemoteClient {
    config: RemoteConfig,
    http: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, ClientError> {
        if config.max_attempts == 0 {
            return Err(ClientError::InvalidRequest("max_attempts must be >= 1".into()));
        }
        if config.max_concurrency == 0 {
            return Err(ClientError::InvalidRequest("max_concurrency must be >= 1".into()));
        }
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let permits = Arc::new(Semaphore::new(config.max_concurrency));
        Ok(RemoteClient { config, http, permits })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    async fn attempt(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        // Hold a permit only for the network call, not for backoff sleeps.
        let _permit = self.permits.acquire().await.expect("semaphore never closed");

        let body = WireRequest {
            model: &request.model_id,
            messages: [
                WireMessage { role: "system", content: &self.config.system_text },
                WireMessage { role: "user", content: &request.prompt },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            stop: if request.stop.is_empty() { None } else { Some(&request.stop) },
        };

        let mut builder = self.http.post(self.config.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }

        let response = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                ClientError::Timeout(self.config.timeout)
            } else {
                ClientError::Transport(e.to_string())
            }
        })?;

        let status = response.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(ClientError::Auth { status: status.as_u16() });
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            let body = body.chars().take(500).collect();
            return Err(ClientError::Http { status: status.as_u16(), body });
        }

        let parsed: WireResponse = response
            .json()
            .await
            .map_err(|e| ClientError::Malformed(e.to_string()))?;
        match parsed.choices.into_iter().next() {
            Some(choice) => Ok(choice.message.content),
            None => Err(ClientError::Malformed("response has no choices".into())),
        }
    }
}

#[async_trait]
impl CompletionClient for RemoteClient {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        request.validate()?;
        let mut last: Option<ClientError> = None;
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let factor = self.config.backoff_factor.max(1).pow(attempt - 1);
                tokio::time::sleep(self.config.backoff_base * factor).await;
            }
            match self.attempt(request).await {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        match last.expect("at least one attempt ran") {
            ClientError::Timeout(d) => Err(ClientError::Timeout(d)),
            other => Err(ClientError::RetriesExhausted {
                attempts: self.config.max_attempts,
                last: other.to_string(),
            }),
        }
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::extract::State;
    use axum::http::HeaderMap;
    use axum::routing::post;
    use axum::{Json, Router};
    use std::sync::atomic::{AtomicU32, Ordering};

    #[derive(Clone)]
    struct ServerState {
        calls: Arc<AtomicU32>,
        /// Status codes to emit before finally succeeding.
        failures: Arc<Vec<u16>>,
    }

    async fn chat_handler(
        State(state): State<ServerState>,
        headers: HeaderMap,
        Json(body): Json<serde_json::Value>,
    ) -> (axum::http::StatusCode, Json<serde_json::Value>) {
        let call = state.calls.fetch_add(1, Ordering::SeqCst) as usize;
        if let Some(&status) = state.failures.get(call) {
            return (
                axum::http::StatusCode::from_u16(status).unwrap(),
                Json(serde_json::json!({"error": "scripted failure"})),
            );
        }
        let auth = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_string();
        let user = body["messages"][1]["content"].as_str().unwrap_or("").to_string();
        let reply = format!("model={} auth={} saw={}", body["model"].as_str().unwrap_or(""), auth, user);
        (
            axum::http::StatusCode::OK,
            Json(serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": reply}}]
            })),
        )
    }

    async fn spawn_server(failures: Vec<u16>) -> (String, Arc<AtomicU32>) {
        let calls = Arc::new(AtomicU32::new(0));
        let state = ServerState { calls: calls.clone(), failures: Arc::new(failures) };
        let app = Router::new().route("/v1/chat/completions", post(chat_handler)).with_state(state);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        (format!("http://{addr}/v1"), calls)
    }

    fn fast_config(base_url: &str) -> RemoteConfig {
        let mut config = RemoteConfig::new(base_url, "test-model");
        config.backoff_base = Duration::from_millis(1);
        config.timeout = Duration::from_secs(5);
        config
    }

    #[tokio::test]
    async fn success_path_sends_chat_shape_and_returns_first_choice() {
        let (base, calls) = spawn_server(vec![]).await;
        let mut config = fast_config(&base);
        config.api_key = Some("sk-test".into());
        let client = RemoteClient::new(config).unwrap();
        let text = client.complete(&CompletionRequest::new("hello there", "test-model")).await.unwrap();
        assert_eq!(text, "model=test-model auth=Bearer sk-test saw=hello there");
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn transient_failures_are_retried_until_success() {
        let (base, calls) = spawn_server(vec![500, 429]).await;
        let client = RemoteClient::new(fast_config(&base)).unwrap();
        let text = client.complete(&CompletionRequest::new("p", "m")).await.unwrap();
        assert!(text.starts_with("model=m"));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn auth_failures_do_not_retry() {
        let (base, calls) = spawn_server(vec![401, 401, 401, 401, 401]).await;
        let client = RemoteClient::new(fast_config(&base)).unwrap();
        let err = client.complete(&CompletionRequest::new("p", "m")).await.unwrap_err();
        assert!(matches!(err, ClientError::Auth { status: 401 }));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn client_errors_other_than_auth_do_not_retry_either() {
        let (base, calls) = spawn_server(vec![400]).await;
        let client = RemoteClient::new(fast_config(&base)).unwrap();
        let err = client.complete(&CompletionRequest::new("p", "m")).await.unwrap_err();
        assert!(matches!(err, ClientError::Http { status: 400, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn persistent_transient_failure_exhausts_retries() {
        let (base, calls) = spawn_server(vec![503; 10]).await;
        let mut config = fast_config(&base);
        config.max_attempts = 3;
        let client = RemoteClient::new(config).unwrap();
        let err = client.complete(&CompletionRequest::new("p", "m")).await.unwrap_err();
        assert!(matches!(err, ClientError::RetriesExhausted { attempts: 3, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn connection_refused_is_transport_then_exhausted() {
        // Bind and drop a listener so the port is very likely closed.
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let mut config = fast_config(&format!("http://{addr}/v1"));
        config.max_attempts = 2;
        let client = RemoteClient::new(config).unwrap();
        let err = client.complete(&CompletionRequest::new("p", "m")).await.unwrap_err();
        assert!(matches!(err, ClientError::RetriesExhausted { attempts: 2, .. }), "{err:?}");
    }

    #[tokio::test]
    async fn invalid_request_rejected_before_any_network() {
        let client = RemoteClient::new(fast_config("http://127.0.0.1:1/v1")).unwrap();
        let err = client.complete(&CompletionRequest::new("", "m")).await.unwrap_err();
        assert!(matches!(err, ClientError::InvalidRequest(_)));
    }

    #[test]
    fn endpoint_joins_without_double_slash() {
        let config = RemoteConfig::new("http://h:1/v1/", "m");
        assert_eq!(config.endpoint(), "http://h:1/v1/chat/completions");
        let config = RemoteConfig::new("http://h:1/v1", "m");
        assert_eq!(config.endpoint(), "http://h:1/v1/chat/completions");
    }
}
