use std::sync::Arc;

use usersim_core::api::{
    AgentSpec, BackendSpec, CacheExportResponse, CacheImportRequest, CorpusSummary, CorpusUpload,
    EvalRequest, HealthResponse, PolicySpec, PromptRequest, PromptResponse, PromptTarget,
    SimulateRequest, StatsResponse, TranscriptResponse,
};
use usersim_core::corpus::SessionRecord;
use usersim_core::evaluation::EvalReport;
use usersim_core::llm::ImportSummary;
use usersim_core::model::{ActionEvent, Session, SpeakerRole, Step};
use usersim_core::policy::LlmOptions;
use usersim_core::prompting::PromptSpec;
use usersim_core::simulation::SimLimits;
use usersim_core::taxonomy::DialogueAct;
use usersim_core::transcript::render_transcript;
use usersim_core::transforms::TransformSpec;
use usersim_service::{ServiceConfig, ServiceState};

async fn spawn(config: ServiceConfig) -> String {
    let state = Arc::new(ServiceState::new(config).expect("state"));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
    let addr = listener.local_addr().expect("addr");
    tokio::spawn(usersim_service::serve(listener, state));
    format!("http://{addr}")
}

fn step(index: usize, actor: SpeakerRole, action: ActionEvent) -> Step {
    Step::new(index, actor, action)
}

fn fixture_sessions() -> Vec<Session> {
    use ActionEvent as A;
    use DialogueAct::*;
    use SpeakerRole::*;
    let brew = Session {
        id: "brew".to_string(),
        goal: "Make coffee.".to_string(),
        split: Some("train".to_string()),
        steps: vec![
            step(0, Commander, A::speak("fill the mug", vec![Instruction])),
            step(1, Driver, A::physical("pickup", Some("Mug"))),
            step(2, Driver, A::speak("where is the mug", vec![RequestForObjectLocationAndOtherDetails])),
            step(3, Commander, A::speak("by the sink", vec![InformationOnObjectDetails])),
            step(4, Driver, A::physical("pour", Some("Mug"))),
            step(5, Commander, A::speak("good job", vec![FeedbackPositive])),
        ],
    };
    let toast = Session {
        id: "toast".to_string(),
        goal: "Make toast.".to_string(),
        split: Some("valid-seen".to_string()),
        steps: vec![
            step(0, Commander, A::speak("slice the bread", vec![Instruction])),
            step(1, Driver, A::physical("slice", Some("Bread"))),
            step(2, Driver, A::physical("toggle on", Some("Toaster"))),
            step(3, Commander, A::speak("that's it", vec![Acknowledge])),
        ],
    };
    vec![brew, toast]
}

fn upload_body(name: &str) -> CorpusUpload {
    CorpusUpload {
        name: name.to_string(),
        records: fixture_sessions().iter().map(SessionRecord::from).collect(),
    }
}

async fn upload(client: &reqwest::Client, base: &str, name: &str) -> CorpusSummary {
    let response = client
        .post(format!("{base}/v1/corpora"))
        .json(&upload_body(name))
        .send()
        .await
        .expect("upload send");
    assert_eq!(response.status(), 200, "{}", response.text().await.unwrap());
    response.json().await.expect("upload decode")
}

#[tokio::test]
async fn health_taxonomy_and_config_respond() {
    let base = spawn(ServiceConfig::default()).await;
    let client = reqwest::Client::new();

    let health: HealthResponse =
        client.get(format!("{base}/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health.status, "ok");
    assert!(!health.version.is_empty());

    let acts: Vec<serde_json::Value> =
        client.get(format!("{base}/v1/taxonomy")).send().await.unwrap().json().await.unwrap();
    assert_eq!(acts.len(), 18);

    let config: serde_json::Value =
        client.get(format!("{base}/v1/config")).send().await.unwrap().json().await.unwrap();
    assert!(config["entries"]["version"].is_string());
}

#[tokio::test]
async fn corpus_upload_stats_and_transcript_round_trip() {
    let base = spawn(ServiceConfig::default()).await;
    let client = reqwest::Client::new();

    let summary = upload(&client, &base, "kitchen").await;
    assert_eq!(summary.sessions, 2);
    assert_eq!(summary.splits.get("train"), Some(&1));

    let listed: Vec<CorpusSummary> =
        client.get(format!("{base}/v1/corpora")).send().await.unwrap().json().await.unwrap();
    assert_eq!(listed.len(), 1);
    assert_eq!(listed[0].name, "kitchen");

    let stats: StatsResponse = client
        .get(format!("{base}/v1/corpora/kitchen/stats"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(stats.stats.n_sessions, 2);
    assert_eq!(stats.stats.n_steps, 10);

    let split_stats: StatsResponse = client
        .get(format!("{base}/v1/corpora/kitchen/stats?split=train"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(split_stats.stats.n_sessions, 1);
    assert_eq!(split_stats.stats.n_steps, 6);

    let transcript: TranscriptResponse = client
        .get(format!("{base}/v1/corpora/kitchen/sessions/brew/transcript"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(transcript.transcript, render_transcript(&fixture_sessions()[0]));

    let missing = client
        .get(format!("{base}/v1/corpora/nope/stats"))
        .send()
        .await
        .unwrap();
    assert_eq!(missing.status(), 404);

    let bad_split = client
        .get(format!("{base}/v1/corpora/kitchen/stats?split=bogus"))
        .send()
        .await
        .unwrap();
    assert_eq!(bad_split.status(), 400);
}

#[tokio::test]
async fn reactive_evaluation_runs_and_renders() {
    let base = spawn(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    upload(&client, &base, "kitchen").await;

    let request = EvalRequest {
        corpus: "kitchen".to_string(),
        split: None,
        transform: TransformSpec::default(),
        policy: PolicySpec::Reactive,
        jobs: 2,
        seed: 0,
        checkpoint: None,
    };
    let report: EvalReport = client
        .post(format!("{base}/v1/evaluations"))
        .json(&request)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(report.meta.policy, "reactive");
    assert_eq!(report.meta.points, 10);
    assert_eq!(report.meta.sessions, 2);
    assert!(report.meta.cache.is_none());

    let rendered: serde_json::Value = client
        .post(format!("{base}/v1/render"))
        .json(&serde_json::json!({"report": report, "format": "text"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let text = rendered["text"].as_str().unwrap();
    assert!(text.contains("Overall"));
    assert!(text.contains("policy: reactive"));
}

#[tokio::test]
async fn prompt_endpoint_builds_point_and_raw_targets() {
    let base = spawn(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    upload(&client, &base, "kitchen").await;

    let point = PromptRequest {
        spec: PromptSpec::zero_shot(),
        fs_corpus: None,
        target: PromptTarget::Point {
            corpus: "kitchen".to_string(),
            session_id: "brew".to_string(),
            step_index: 2,
        },
    };
    let response: PromptResponse = client
        .post(format!("{base}/v1/prompt"))
        .json(&point)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(response.prompt.contains("Goal: Make coffee."));
    assert!(response.prompt.ends_with("COMMANDER response:"));
    assert_eq!(response.sha256.len(), 64);

    let raw = PromptRequest {
        spec: PromptSpec::zero_shot(),
        fs_corpus: None,
        target: PromptTarget::Raw { goal: "Water the plant.".to_string(), history: String::new() },
    };
    let raw_response: PromptResponse = client
        .post(format!("{base}/v1/prompt"))
        .json(&raw)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(raw_response.prompt.contains("Goal: Water the plant."));

    let out_of_bounds = PromptRequest {
        spec: PromptSpec::zero_shot(),
        fs_corpus: None,
        target: PromptTarget::Point {
            corpus: "kitchen".to_string(),
            session_id: "brew".to_string(),
            step_index: 99,
        },
    };
    let status = client
        .post(format!("{base}/v1/prompt"))
        .json(&out_of_bounds)
        .send()
        .await
        .unwrap()
        .status();
    assert_eq!(status, 400);
}

fn llm_policy(backend: BackendSpec) -> PolicySpec {
    PolicySpec::Llm {
        prompt: PromptSpec::zero_shot(),
        options: LlmOptions::default(),
        backend,
        resample_per_query: false,
        fs_corpus: None,
    }
}

#[tokio::test]
async fn rule_backend_populates_cache_and_cache_only_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");
    let base =
        spawn(ServiceConfig { cache_path: Some(cache_path.clone()) }).await;
    let client = reqwest::Client::new();
    upload(&client, &base, "kitchen").await;

    let run = |policy: PolicySpec| EvalRequest {
        corpus: "kitchen".to_string(),
        split: None,
        transform: TransformSpec::default(),
        policy,
        jobs: 3,
        seed: 7,
        checkpoint: None,
    };

    let seeded: EvalReport = client
        .post(format!("{base}/v1/evaluations"))
        .json(&run(llm_policy(BackendSpec::Rule)))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let seeded_cache = seeded.meta.cache.expect("llm run reports cache stats");
    assert!(seeded_cache.inserts > 0);
    assert!(cache_path.exists(), "cache persisted after the run");

    let mut bodies = Vec::new();
    for _ in 0..2 {
        let response = client
            .post(format!("{base}/v1/evaluations"))
            .json(&run(llm_policy(BackendSpec::CacheOnly)))
            .send()
            .await
            .unwrap();
        assert_eq!(response.status(), 200);
        bodies.push(response.text().await.unwrap());
    }
    assert_eq!(bodies[0], bodies[1], "cache-only reruns are byte-identical");

    let report: EvalReport = serde_json::from_str(&bodies[0]).unwrap();
    let stats = report.meta.cache.expect("cache stats present");
    assert_eq!(stats.misses, 0);
    assert_eq!(stats.inserts, 0);
    assert!(stats.hits > 0);
}

#[tokio::test]
async fn simulation_replays_a_recorded_driver() {
    let base = spawn(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    upload(&client, &base, "kitchen").await;

    let request = SimulateRequest {
        goal: "Make coffee.".to_string(),
        policy: PolicySpec::Reactive,
        agent: AgentSpec::Replay {
            corpus: "kitchen".to_string(),
            session_id: "brew".to_string(),
            success: true,
        },
        limits: SimLimits::default(),
        seed: 11,
        template_corpus: Some("kitchen".to_string()),
    };
    let response = client
        .post(format!("{base}/v1/simulations"))
        .json(&request)
        .send()
        .await
        .unwrap();
    let status = response.status();
    let body = response.text().await.unwrap();
    assert_eq!(status, 200, "{body}");
    let sim: serde_json::Value = serde_json::from_str(&body).unwrap();
    let transcript = sim["transcript"].as_str().unwrap();
    assert!(transcript.starts_with("Goal: Make coffee."));
    assert!(sim["log"]["records"].as_array().is_some_and(|r| !r.is_empty()));

    let oracle = SimulateRequest {
        goal: "Make coffee.".to_string(),
        policy: PolicySpec::Oracle,
        agent: AgentSpec::Idle,
        limits: SimLimits::default(),
        seed: 0,
        template_corpus: None,
    };
    let status = client
        .post(format!("{base}/v1/simulations"))
        .json(&oracle)
        .send()
        .await
        .unwrap()
        .status();
    assert_eq!(status, 400, "oracle has no live-simulation meaning");
}

#[tokio::test]
async fn cache_export_import_round_trips() {
    let base = spawn(ServiceConfig::default()).await;
    let client = reqwest::Client::new();
    upload(&client, &base, "kitchen").await;

    let request = EvalRequest {
        corpus: "kitchen".to_string(),
        split: None,
        transform: TransformSpec::default(),
        policy: llm_policy(BackendSpec::Rule),
        jobs: 2,
        seed: 3,
        checkpoint: None,
    };
    client
        .post(format!("{base}/v1/evaluations"))
        .json(&request)
        .send()
        .await
        .unwrap()
        .error_for_status()
        .unwrap();

    let exported: CacheExportResponse =
        client.get(format!("{base}/v1/cache")).send().await.unwrap().json().await.unwrap();
    assert!(exported.entries > 0);

    let fresh = spawn(ServiceConfig::default()).await;
    let summary: ImportSummary = client
        .post(format!("{fresh}/v1/cache"))
        .json(&CacheImportRequest { jsonl: exported.jsonl.clone() })
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(summary.applied, exported.entries);

    let re_exported: CacheExportResponse =
        client.get(format!("{fresh}/v1/cache")).send().await.unwrap().json().await.unwrap();
    assert_eq!(re_exported.jsonl, exported.jsonl);
}
