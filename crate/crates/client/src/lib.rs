//! Typed client for the user-simulation HTTP API. Each method mirrors one
//! endpoint; errors distinguish transport failures from API rejections.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use usersim_core::api::{
    ActInfoDto, CacheExportResponse, CacheImportRequest, ComparisonRequest, ConfigResponse,
    CorpusSummary, CorpusUpload, ErrorBody, EvalRequest, ExplanationsResponse, HealthResponse,
    IngestRequest, IngestResponse, PromptRequest, PromptResponse, RenderRequest, RenderResponse,
    SimulateRequest, SimulateResponse, StatsResponse, TranscriptResponse,
};
use usersim_core::evaluation::EvalReport;
use usersim_core::llm::ImportSummary;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with a non-success status.
    #[error("api error ({status}): {message}")]
    Api { status: u16, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
}

pub struct ApiClient {
    base: String,
    http: reqwest::Client,
}

impl ApiClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let mut base = base.into();
        while base.ends_with('/') {
            base.pop();
        }
        ApiClient { base, http: reqwest::Client::new() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T, ClientError> {
        let status = response.status();
        if status.is_success() {
            return Ok(response.json().await?);
        }
        let message = match response.json::<ErrorBody>().await {
            Ok(body) => body.error,
            Err(_) => format!("status {status}"),
        };
        Err(ClientError::Api { status: status.as_u16(), message })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let response = self.http.get(format!("{}{path}", self.base)).send().await?;
        Self::decode(response).await
    }

    async fn post<In: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &In,
    ) -> Result<T, ClientError> {
        let response = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(response).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        self.get("/health").await
    }

    pub async fn taxonomy(&self) -> Result<Vec<ActInfoDto>, ClientError> {
        self.get("/v1/taxonomy").await
    }

    pub async fn explanations(&self) -> Result<ExplanationsResponse, ClientError> {
        self.get("/v1/taxonomy/explanations").await
    }

    pub async fn corpora(&self) -> Result<Vec<CorpusSummary>, ClientError> {
        self.get("/v1/corpora").await
    }

    pub async fn upload_corpus(&self, upload: &CorpusUpload) -> Result<CorpusSummary, ClientError> {
        self.post("/v1/corpora", upload).await
    }

    pub async fn corpus_records(&self, name: &str) -> Result<CorpusUpload, ClientError> {
        self.get(&format!("/v1/corpora/{name}")).await
    }

    pub async fn stats(
        &self,
        corpus: &str,
        split: Option<&str>,
    ) -> Result<StatsResponse, ClientError> {
        let mut path = format!("/v1/corpora/{corpus}/stats");
        if let Some(split) = split {
            path.push_str(&format!("?split={split}"));
        }
        self.get(&path).await
    }

    pub async fn transcript(
        &self,
        corpus: &str,
        session_id: &str,
    ) -> Result<TranscriptResponse, ClientError> {
        self.get(&format!("/v1/corpora/{corpus}/sessions/{session_id}/transcript")).await
    }

    pub async fn ingest(&self, request: &IngestRequest) -> Result<IngestResponse, ClientError> {
        self.post("/v1/ingest", request).await
    }

    pub async fn prompt(&self, request: &PromptRequest) -> Result<PromptResponse, ClientError> {
        self.post("/v1/prompt", request).await
    }

    pub async fn evaluate(&self, request: &EvalRequest) -> Result<EvalReport, ClientError> {
        self.post("/v1/evaluations", request).await
    }

    pub async fn render(&self, request: &RenderRequest) -> Result<RenderResponse, ClientError> {
        self.post("/v1/render", request).await
    }

    pub async fn render_comparison(
        &self,
        request: &ComparisonRequest,
    ) -> Result<RenderResponse, ClientError> {
        self.post("/v1/render/comparison", request).await
    }

    pub async fn simulate(
        &self,
        request: &SimulateRequest,
    ) -> Result<SimulateResponse, ClientError> {
        self.post("/v1/simulations", request).await
    }

    pub async fn cache_export(&self) -> Result<CacheExportResponse, ClientError> {
        self.get("/v1/cache").await
    }

    pub async fn cache_import(
        &self,
        request: &CacheImportRequest,
    ) -> Result<ImportSummary, ClientError> {
        self.post("/v1/cache", request).await
    }

    pub async fn config(&self) -> Result<ConfigResponse, ClientError> {
        self.get("/v1/config").await
    }
}
