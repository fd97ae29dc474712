//! Request/response payloads shared by the HTTP service, its client, and
//! the CLI. Everything here is plain serde data; transport lives elsewhere.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStats, SessionRecord};
use crate::evaluation::EvalReport;
use crate::llm::ImportSummary;
use crate::policy::LlmOptions;
use crate::prompting::PromptSpec;
use crate::report::ReportFormat;
use crate::simulation::{AgentEvent, SimLimits, SimLogWire};
use crate::taxonomy::ActInfo;
use crate::transforms::TransformSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActInfoDto {
    pub name: String,
    pub aliases: Vec<String>,
    pub category: String,
    pub explanation: String,
    pub example_utterance: String,
    pub robot_typical: bool,
}

impl From<&ActInfo> for ActInfoDto {
    fn from(info: &ActInfo) -> Self {
        ActInfoDto {
            name: info.canonical_name.to_string(),
            aliases: info.aliases.iter().map(|a| a.to_string()).collect(),
            category: info.category.label().to_string(),
            explanation: info.explanation.to_string(),
            example_utterance: info.example_utterance.to_string(),
            robot_typical: info.robot_typical,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationsResponse {
    pub text: String,
}

/// Upload a corpus under a name the server will use to refer to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusUpload {
    pub name: String,
    pub records: Vec<SessionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub name: String,
    pub sessions: usize,
    pub splits: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsResponse {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub stats: CorpusStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptResponse {
    pub transcript: String,
}

/// Convert a server-local TEACh directory into a named corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    pub dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<String>,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestResponse {
    pub name: String,
    pub files_seen: usize,
    pub sessions: usize,
    pub warnings: Vec<String>,
}

/// What to build a prompt for: a concrete corpus point, or a raw scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PromptTarget {
    Point { corpus: String, session_id: String, step_index: usize },
    Raw {
        goal: String,
        /// Transcript pair lines (no goal line); empty for a fresh start.
        #[serde(default)]
        history: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRequest {
    pub spec: PromptSpec,
    /// Corpus supplying few-shot examples; defaults to the target's corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs_corpus: Option<String>,
    pub target: PromptTarget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptResponse {
    pub prompt: String,
    pub sha256: String,
}

/// Which completion backend an LLM policy talks to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    /// A chat-completions HTTP endpoint.
    Remote {
        base_url: String,
    },
    /// Serve everything from the response cache; misses are errors.
    CacheOnly,
    /// Deterministic hash-of-prompt responses; no network. Useful for
    /// exercising the full pipeline hermetically.
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    Reactive,
    /// Reactive timing; the act spoken is the majority user act of the
    /// named split (whole corpus when absent).
    Majority {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<String>,
    },
    ConstantObserve,
    /// Replays the gold decision at every point; the ceiling policy.
    Oracle,
    /// Replays one stored session's commander side by history position;
    /// pairs with a replay agent to rebuild that session in closed loop.
    GoldReplay { corpus: String, session_id: String },
    Llm {
        prompt: PromptSpec,
        #[serde(default)]
        options: LlmOptions,
        backend: BackendSpec,
        #[serde(default)]
        resample_per_query: bool,
        /// Corpus supplying few-shot examples; defaults to the evaluation
        /// corpus.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fs_corpus: Option<String>,
    },
}

impl PolicySpec {
    pub fn label(&self) -> &'static str {
        match self {
            PolicySpec::Reactive => "reactive",
            PolicySpec::Majority { .. } => "majority",
            PolicySpec::ConstantObserve => "constant-observe",
            PolicySpec::Oracle => "oracle",
            PolicySpec::GoldReplay { .. } => "gold-replay",
            PolicySpec::Llm { .. } => "llm",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub corpus: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default)]
    pub transform: TransformSpec,
    pub policy: PolicySpec,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Server-local checkpoint path for resumable runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderRequest {
    pub report: EvalReport,
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderResponse {
    pub text: String,
}

/// One run in a side-by-side comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRequest {
    pub runs: Vec<LabeledReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentSpec {
    /// Never acts; the policy side drives everything until the step cap.
    Idle,
    /// Replays the driver side of a stored session.
    Replay {
        corpus: String,
        session_id: String,
        #[serde(default = "default_true")]
        success: bool,
    },
    /// Plays back an explicit event list, then reports success.
    Scripted { events: Vec<AgentEvent> },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateRequest {
    pub goal: String,
    pub policy: PolicySpec,
    pub agent: AgentSpec,
    #[serde(default)]
    pub limits: SimLimits,
    #[serde(default)]
    pub seed: u64,
    /// Corpus whose user turns seed the utterance template store; stub
    /// utterances are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_corpus: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub log: SimLogWire,
    pub transcript: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheExportResponse {
    pub entries: usize,
    /// The cache contents in the JSONL interchange format.
    pub jsonl: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheImportRequest {
    pub jsonl: String,
}

pub type CacheImportResponse = ImportSummary;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigResponse {
    pub entries: BTreeMap<String, String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::all_infos;

    #[test]
    fn policy_specs_round_trip_with_kebab_tags() {
        let specs = vec![
            PolicySpec::Reactive,
            PolicySpec::Majority { split: Some("train".into()) },
            PolicySpec::ConstantObserve,
            PolicySpec::Oracle,
            PolicySpec::GoldReplay { corpus: "c".into(), session_id: "s".into() },
            PolicySpec::Llm {
                prompt: PromptSpec::few_shot(7),
                options: LlmOptions::default(),
                backend: BackendSpec::Rule,
                resample_per_query: true,
                fs_corpus: None,
            },
        ];
        for spec in specs {
            let json = serde_json::to_string(&spec).unwrap();
            let back: PolicySpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, spec);
        }
        let json = serde_json::to_string(&PolicySpec::ConstantObserve).unwrap();
        assert!(json.contains("constant-observe"), "{json}");
    }

    #[test]
    fn act_info_dto_carries_the_registry_row() {
        let dto = ActInfoDto::from(&all_infos()[0]);
        assert_eq!(dto.name, "Instruction");
        assert_eq!(dto.category, "Instruction");
        assert!(!dto.explanation.is_empty());
    }

    #[test]
    fn eval_request_defaults_are_usable() {
        let req: EvalRequest = serde_json::from_str(
            r#"{"corpus": "c", "policy": {"kind": "reactive"}}"#,
        )
        .unwrap();
        assert!(req.jobs >= 1);
        assert_eq!(req.seed, 0);
        assert!(req.split.is_none());
        assert_eq!(req.transform, TransformSpec::none());
    }

    #[test]
    fn prompt_target_forms_round_trip() {
        let point = PromptTarget::Point {
            corpus: "c".into(),
            session_id: "s".into(),
            step_index: 3,
        };
        let raw = PromptTarget::Raw { goal: "Make coffee.".into(), history: String::new() };
        for target in [point, raw] {
            let json = serde_json::to_string(&target).unwrap();
            let _back: PromptTarget = serde_json::from_str(&json).unwrap();
        }
    }
}
