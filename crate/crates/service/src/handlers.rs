use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use usersim_core::api::{
    ActInfoDto, AgentSpec, BackendSpec, CacheExportResponse, CacheImportRequest, ComparisonRequest,
    ConfigResponse, CorpusSummary, CorpusUpload, ErrorBody, EvalRequest, ExplanationsResponse,
    HealthResponse, IngestRequest, IngestResponse, PolicySpec, PromptRequest, PromptResponse,
    PromptTarget, RenderRequest, RenderResponse, SimulateRequest, SimulateResponse,
    TranscriptResponse,
};
use usersim_core::corpus::{corpus_stats as compute_stats, Corpus, CorpusError, SessionRecord};
use usersim_core::evaluation::{enumerate_points, replay_evaluate, EvalOptions, EvalReport};
use usersim_core::llm::{
    CacheStats, CachingClient, CompletionClient, RemoteClient, RemoteConfig, RuleClient,
};
use usersim_core::model::{Session, validate_session};
use usersim_core::policy::{
    ConstantPolicy, GoldReplayPolicy, LlmPolicy, MajorityPolicy, OraclePolicy, ReactiveBaseline,
    UserPolicy,
};
use usersim_core::prompting::{build_prompt, prompt_sha256, PromptMode, PromptSpec};
use usersim_core::realization::build_template_store;
use usersim_core::report::{render_comparison, render_report};
use usersim_core::simulation::{
    run_session, EmbodiedAgent, IdleAgent, ReplayAgent, ScriptedAgent,
};
use usersim_core::taxonomy::{all_infos, explanation_block};
use usersim_core::teach::ingest_teach_dir;
use usersim_core::transcript::{parse_transcript, render_transcript};
use usersim_core::transforms::TransformSpec;

use crate::state::ServiceState;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn lookup_corpus(state: &ServiceState, name: &str) -> Result<Arc<Corpus>, ApiError> {
    state.corpus(name).ok_or_else(|| ApiError::not_found(format!("unknown corpus {name:?}")))
}

fn split_error(e: CorpusError) -> ApiError {
    match e {
        CorpusError::UnknownSplit { .. } => ApiError::bad_request(e.to_string()),
        other => ApiError::internal(other.to_string()),
    }
}

pub async fn health() -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

pub async fn taxonomy() -> Json<Vec<ActInfoDto>> {
    Json(all_infos().iter().map(ActInfoDto::from).collect())
}

pub async fn explanations() -> Json<ExplanationsResponse> {
    Json(ExplanationsResponse { text: explanation_block() })
}

fn summarize(name: &str, corpus: &Corpus) -> CorpusSummary {
    CorpusSummary {
        name: name.to_string(),
        sessions: corpus.len(),
        splits: corpus
            .split_index()
            .iter()
            .map(|(split, ids)| (split.clone(), ids.len()))
            .collect(),
    }
}

pub async fn corpora_list(State(state): State<Arc<ServiceState>>) -> Json<Vec<CorpusSummary>> {
    let summaries = state
        .corpus_names()
        .into_iter()
        .filter_map(|name| state.corpus(&name).map(|c| summarize(&name, &c)))
        .collect();
    Json(summaries)
}

pub async fn corpora_upload(
    State(state): State<Arc<ServiceState>>,
    Json(upload): Json<CorpusUpload>,
) -> ApiResult<CorpusSummary> {
    if upload.name.trim().is_empty() {
        return Err(ApiError::bad_request("corpus name must be non-empty"));
    }
    let mut sessions = Vec::with_capacity(upload.records.len());
    for (i, record) in upload.records.into_iter().enumerate() {
        let session = record
            .into_session()
            .map_err(|message| ApiError::bad_request(format!("record {i}: {message}")))?;
        let violations = validate_session(&session);
        if let Some(first) = violations.first() {
            return Err(ApiError::bad_request(format!(
                "record {i} ({}): {first}",
                session.id
            )));
        }
        sessions.push(session);
    }
    let corpus = Corpus::new(sessions).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let summary = summarize(&upload.name, &corpus);
    state.put_corpus(upload.name, corpus);
    Ok(Json(summary))
}

pub async fn corpus_stats(
    State(state): State<Arc<ServiceState>>,
    Path(name): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<usersim_core::api::StatsResponse> {
    let corpus = lookup_corpus(&state, &name)?;
    let split = params.get("split").cloned();
    let stats = compute_stats(&corpus, split.as_deref()).map_err(split_error)?;
    Ok(Json(usersim_core::api::StatsResponse { name, split, stats }))
}

pub async fn corpus_records(
    State(state): State<Arc<ServiceState>>,
    Path(name): Path<String>,
) -> ApiResult<CorpusUpload> {
    let corpus = lookup_corpus(&state, &name)?;
    let records = corpus.sessions().iter().map(SessionRecord::from).collect();
    Ok(Json(CorpusUpload { name, records }))
}

pub async fn session_transcript(
    State(state): State<Arc<ServiceState>>,
    Path((name, session_id)): Path<(String, String)>,
) -> ApiResult<TranscriptResponse> {
    let corpus = lookup_corpus(&state, &name)?;
    let session = corpus
        .get(&session_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {session_id:?}")))?;
    Ok(Json(TranscriptResponse { transcript: render_transcript(session) }))
}

pub async fn ingest(
    State(state): State<Arc<ServiceState>>,
    Json(request): Json<IngestRequest>,
) -> ApiResult<IngestResponse> {
    let annotations = request.annotations.as_deref().map(FsPath::new);
    let (corpus, report) = ingest_teach_dir(&request.dir, annotations)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let response = IngestResponse {
        name: request.name.clone(),
        files_seen: report.files_seen,
        sessions: report.sessions,
        warnings: report.warnings,
    };
    state.put_corpus(request.name, corpus);
    Ok(Json(response))
}

/// Resolve a prompt target to (goal, history, owning corpus name).
fn resolve_target(
    state: &ServiceState,
    target: &PromptTarget,
) -> Result<(String, Vec<usersim_core::model::Step>, Option<String>), ApiError> {
    match target {
        PromptTarget::Point { corpus, session_id, step_index } => {
            let c = lookup_corpus(state, corpus)?;
            let session = c
                .get(session_id)
                .ok_or_else(|| ApiError::not_found(format!("unknown session {session_id:?}")))?;
            if *step_index > session.steps.len() {
                return Err(ApiError::bad_request(format!(
                    "step index {step_index} out of bounds for {session_id:?} ({} steps)",
                    session.steps.len()
                )));
            }
            Ok((
                session.goal.clone(),
                session.steps[..*step_index].to_vec(),
                Some(corpus.clone()),
            ))
        }
        PromptTarget::Raw { goal, history } => {
            if goal.trim().is_empty() {
                return Err(ApiError::bad_request("goal must be non-empty"));
            }
            let mut text = format!("Goal: {goal}\n");
            if !history.is_empty() {
                text.push_str(history);
                if !history.ends_with('\n') {
                    text.push('\n');
                }
            }
            let session =
                parse_transcript(&text).map_err(|e| ApiError::bad_request(e.to_string()))?;
            Ok((session.goal, session.steps, None))
        }
    }
}

pub async fn prompt(
    State(state): State<Arc<ServiceState>>,
    Json(request): Json<PromptRequest>,
) -> ApiResult<PromptResponse> {
    let (goal, history, target_corpus) = resolve_target(&state, &request.target)?;
    let example_corpus = match request.spec.mode {
        PromptMode::ZeroShot => None,
        PromptMode::FewShot => {
            let name = request.fs_corpus.clone().or(target_corpus).ok_or_else(|| {
                ApiError::bad_request("few-shot prompts need fs_corpus for a raw target")
            })?;
            Some(lookup_corpus(&state, &name)?)
        }
    };
    let prompt = build_prompt(&request.spec, &goal, &history, example_corpus.as_deref())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let sha256 = prompt_sha256(&prompt);
    Ok(Json(PromptResponse { prompt, sha256 }))
}

fn llm_client(state: &ServiceState, backend: &BackendSpec, model_id: &str) -> Result<Arc<dyn CompletionClient>, ApiError> {
    let client: Arc<dyn CompletionClient> = match backend {
        BackendSpec::Remote { base_url } => {
            let config = RemoteConfig::new(base_url.clone(), model_id).with_env_key();
            let remote =
                RemoteClient::new(config).map_err(|e| ApiError::bad_request(e.to_string()))?;
            Arc::new(CachingClient::new(Arc::new(remote), state.cache.clone()))
        }
        BackendSpec::CacheOnly => Arc::new(CachingClient::cache_only(state.cache.clone())),
        BackendSpec::Rule => {
            Arc::new(CachingClient::new(Arc::new(RuleClient::new()), state.cache.clone()))
        }
    };
    Ok(client)
}

fn build_llm_policy(
    state: &ServiceState,
    prompt: &PromptSpec,
    options: &usersim_core::policy::LlmOptions,
    backend: &BackendSpec,
    resample_per_query: bool,
    example_corpus: Option<&Corpus>,
) -> Result<LlmPolicy, ApiError> {
    let client = llm_client(state, backend, &options.model_id)?;
    let policy = LlmPolicy::new(prompt.clone(), example_corpus, client, options.clone())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(policy.with_resample_per_query(resample_per_query))
}

/// Build the policy an evaluation run uses. `sessions` is the evaluated
/// slice (the oracle is defined over its transformed plan).
fn eval_policy(
    state: &ServiceState,
    spec: &PolicySpec,
    corpus: &Corpus,
    sessions: &[&Session],
    transform: &TransformSpec,
) -> Result<Box<dyn UserPolicy>, ApiError> {
    Ok(match spec {
        PolicySpec::Reactive => Box::new(ReactiveBaseline),
        PolicySpec::Majority { split } => {
            let source = corpus.split_sessions(split.as_deref()).map_err(split_error)?;
            Box::new(
                MajorityPolicy::from_split(&source)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?,
            )
        }
        PolicySpec::ConstantObserve => Box::new(ConstantPolicy::observe()),
        PolicySpec::Oracle => {
            let plan = enumerate_points(sessions, transform);
            Box::new(OraclePolicy::new(Arc::new(plan.oracle_corpus())))
        }
        PolicySpec::GoldReplay { corpus: name, session_id } => {
            let c = lookup_corpus(state, name)?;
            let session = c
                .get(session_id)
                .ok_or_else(|| ApiError::not_found(format!("unknown session {session_id:?}")))?;
            Box::new(GoldReplayPolicy::new(session.clone()))
        }
        PolicySpec::Llm { prompt, options, backend, resample_per_query, fs_corpus } => {
            let example = match fs_corpus {
                Some(name) => Some(lookup_corpus(state, name)?),
                None => None,
            };
            let example_ref: &Corpus = example.as_deref().unwrap_or(corpus);
            Box::new(build_llm_policy(
                state,
                prompt,
                options,
                backend,
                *resample_per_query,
                Some(example_ref),
            )?)
        }
    })
}

fn stats_delta(before: CacheStats, after: CacheStats) -> CacheStats {
    CacheStats {
        entries: after.entries,
        hits: after.hits - before.hits,
        misses: after.misses - before.misses,
        inserts: after.inserts - before.inserts,
    }
}

pub async fn evaluate(
    State(state): State<Arc<ServiceState>>,
    Json(request): Json<EvalRequest>,
) -> ApiResult<EvalReport> {
    request.transform.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let corpus = lookup_corpus(&state, &request.corpus)?;
    let sessions = corpus.split_sessions(request.split.as_deref()).map_err(split_error)?;
    let policy = eval_policy(&state, &request.policy, &corpus, &sessions, &request.transform)?;

    let uses_llm = matches!(request.policy, PolicySpec::Llm { .. });
    let (prompt_spec, model_id) = match &request.policy {
        PolicySpec::Llm { prompt, options, .. } => {
            (Some(prompt.clone()), Some(options.model_id.clone()))
        }
        _ => (None, None),
    };
    let options = EvalOptions {
        jobs: request.jobs.max(1),
        checkpoint: request.checkpoint.clone().map(PathBuf::from),
        corpus_label: request.corpus.clone(),
        split: request.split.clone(),
        seed: request.seed,
        prompt: prompt_spec,
        model_id,
        cache: uses_llm.then(|| state.cache.clone()),
    };

    let before = state.cache.stats();
    let mut report = replay_evaluate(&sessions, policy.as_ref(), &request.transform, &options)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    if let Some(cache) = &mut report.meta.cache {
        // Report the run's own cache traffic, not the server's lifetime
        // counters, so identical runs serialize identically.
        *cache = stats_delta(before, *cache);
    }
    if uses_llm {
        state.persist_cache().map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok(Json(report))
}

pub async fn render(Json(request): Json<RenderRequest>) -> Json<RenderResponse> {
    Json(RenderResponse { text: render_report(&request.report, request.format) })
}

pub async fn render_comparison_handler(
    Json(request): Json<ComparisonRequest>,
) -> Json<RenderResponse> {
    let runs: Vec<(String, EvalReport)> =
        request.runs.into_iter().map(|r| (r.label, r.report)).collect();
    Json(RenderResponse { text: render_comparison(&runs) })
}

/// Build the policy a live simulation uses. Corpus-backed policies draw on
/// `template_corpus`; the oracle has no live meaning and is rejected.
fn sim_policy(
    state: &ServiceState,
    spec: &PolicySpec,
    template_corpus: Option<&Arc<Corpus>>,
) -> Result<Box<dyn UserPolicy>, ApiError> {
    Ok(match spec {
        PolicySpec::Reactive => Box::new(ReactiveBaseline),
        PolicySpec::ConstantObserve => Box::new(ConstantPolicy::observe()),
        PolicySpec::Majority { split } => {
            let corpus = template_corpus.ok_or_else(|| {
                ApiError::bad_request("majority policy needs template_corpus in simulation")
            })?;
            let source = corpus.split_sessions(split.as_deref()).map_err(split_error)?;
            Box::new(
                MajorityPolicy::from_split(&source)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?,
            )
        }
        PolicySpec::Oracle => {
            return Err(ApiError::bad_request(
                "oracle policy is only defined for replay evaluation",
            ))
        }
        PolicySpec::GoldReplay { corpus: name, session_id } => {
            let c = lookup_corpus(state, name)?;
            let session = c
                .get(session_id)
                .ok_or_else(|| ApiError::not_found(format!("unknown session {session_id:?}")))?;
            Box::new(GoldReplayPolicy::new(session.clone()))
        }
        PolicySpec::Llm { prompt, options, backend, resample_per_query, fs_corpus } => {
            let example = match fs_corpus {
                Some(name) => Some(lookup_corpus(state, name)?),
                None => template_corpus.cloned(),
            };
            Box::new(build_llm_policy(
                state,
                prompt,
                options,
                backend,
                *resample_per_query,
                example.as_deref(),
            )?)
        }
    })
}

pub async fn simulate(
    State(state): State<Arc<ServiceState>>,
    Json(request): Json<SimulateRequest>,
) -> ApiResult<SimulateResponse> {
    if request.goal.trim().is_empty() {
        return Err(ApiError::bad_request("goal must be non-empty"));
    }
    let template_corpus = match &request.template_corpus {
        Some(name) => Some(lookup_corpus(&state, name)?),
        None => None,
    };
    let policy = sim_policy(&state, &request.policy, template_corpus.as_ref())?;
    let store = match &template_corpus {
        Some(corpus) => {
            let refs: Vec<&Session> = corpus.sessions().iter().collect();
            Some(
                build_template_store(&refs)
                    .map_err(|e| ApiError::bad_request(e.to_string()))?,
            )
        }
        None => None,
    };

    let mut agent: Box<dyn EmbodiedAgent> = match &request.agent {
        AgentSpec::Idle => Box::new(IdleAgent),
        AgentSpec::Replay { corpus, session_id, success } => {
            let c = lookup_corpus(&state, corpus)?;
            let session = c
                .get(session_id)
                .ok_or_else(|| ApiError::not_found(format!("unknown session {session_id:?}")))?;
            Box::new(ReplayAgent::new(session).with_success(*success))
        }
        AgentSpec::Scripted { events } => Box::new(ScriptedAgent::new(events.iter().cloned())),
    };

    let log = run_session(
        &request.goal,
        policy.as_ref(),
        agent.as_mut(),
        &request.limits,
        store.as_ref(),
        request.seed,
    )
    .await
    .map_err(|failure| {
        ApiError::internal(format!("simulation failed after {} rounds: {}", failure.rounds, failure.error))
    })?;
    let transcript = render_transcript(&log.session);
    Ok(Json(SimulateResponse { log: log.to_wire(), transcript }))
}

pub async fn cache_export(State(state): State<Arc<ServiceState>>) -> Json<CacheExportResponse> {
    Json(CacheExportResponse { entries: state.cache.len(), jsonl: state.cache.to_jsonl() })
}

pub async fn cache_import(
    State(state): State<Arc<ServiceState>>,
    Json(request): Json<CacheImportRequest>,
) -> ApiResult<usersim_core::llm::ImportSummary> {
    let summary = state.cache.merge_jsonl(&request.jsonl);
    state.persist_cache().map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(summary))
}

pub async fn config(State(state): State<Arc<ServiceState>>) -> Json<ConfigResponse> {
    let mut entries = BTreeMap::new();
    entries.insert("version".to_string(), env!("CARGO_PKG_VERSION").to_string());
    entries.insert(
        "cache_path".to_string(),
        state
            .config
            .cache_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
    );
    entries.insert("cache_entries".to_string(), state.cache.len().to_string());
    entries.insert("corpora".to_string(), state.corpus_names().join(","));
    Json(ConfigResponse { entries })
}
