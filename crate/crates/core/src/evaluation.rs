//! Replay evaluation against gold corpora.
//!
//! Every step of every (transformed) session is a prediction point: the
//! policy sees the history prefix and decides observe-or-speak. Speak-F1
//! scores that binary decision, overall and bucketed by what the robot did
//! in the previous step. Dialogue-act metrics are conditioned on gold
//! speaking turns: where the policy chose to observe at a gold speak point,
//! it is re-queried with observing forbidden so an act prediction exists at
//! every gold speak point.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::llm::CacheStats;
use crate::llm::ResponseCache;
use crate::model::{ActionEvent, Session, SpeakerRole, Step};
use crate::policy::{
    gold_decision, DecisionContext, PolicyConstraints, PolicyError, UserDecision, UserPolicy,
};
use crate::prompting::PromptSpec;
use crate::taxonomy::{all_infos, DialogueAct};
use crate::transforms::TransformSpec;

/// What the robot did in the step before a prediction point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrevRobot {
    /// Previous step was a Driver physical action.
    Physical,
    /// Previous step was a Commander turn, so the robot observed.
    Observe,
    /// Previous step was a Driver utterance.
    Speak,
    /// No previous step.
    SessionStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub session_id: String,
    /// Step index within the transformed session.
    pub step_index: usize,
    pub gold: UserDecision,
    pub prev_robot: PrevRobot,
}

/// The transformed sessions plus one prediction point per step, ordered by
/// (session id, step index).
#[derive(Debug, Clone)]
pub struct EvalPlan {
    sessions: Vec<Session>,
    by_id: HashMap<String, usize>,
    pub points: Vec<PredictionPoint>,
}

impl EvalPlan {
    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.by_id.get(id).map(|&i| &self.sessions[i])
    }

    /// The (goal, history prefix) a policy sees at a point.
    pub fn context(&self, point: &PredictionPoint) -> (&str, &[Step]) {
        let session = self.session(&point.session_id).expect("point belongs to the plan");
        (&session.goal, &session.steps[..point.step_index])
    }

    /// The transformed sessions as a corpus, e.g. to build an oracle.
    pub fn oracle_corpus(&self) -> Corpus {
        Corpus::new(self.sessions.clone()).expect("session ids unique")
    }

    pub fn gold_speak_points(&self) -> usize {
        self.points.iter().filter(|p| p.gold.is_speak()).count()
    }
}

fn prev_robot_at(steps: &[Step], index: usize) -> PrevRobot {
    if index == 0 {
        return PrevRobot::SessionStart;
    }
    match &steps[index - 1] {
        Step { actor: SpeakerRole::Driver, action: ActionEvent::Speak { .. }, .. } => {
            PrevRobot::Speak
        }
        Step { actor: SpeakerRole::Driver, action: ActionEvent::Physical { .. }, .. } => {
            PrevRobot::Physical
        }
        _ => PrevRobot::Observe,
    }
}

/// Apply the transform to each session and lay out one prediction point per
/// step. Sessions are ordered by id so downstream folds are deterministic
/// regardless of input order.
pub fn enumerate_points(sessions: &[&Session], transform: &TransformSpec) -> EvalPlan {
    let mut transformed: Vec<Session> = sessions.iter().map(|s| transform.apply(s)).collect();
    transformed.sort_by(|a, b| a.id.cmp(&b.id));

    let mut points = Vec::new();
    let mut by_id = HashMap::new();
    for (si, session) in transformed.iter().enumerate() {
        by_id.insert(session.id.clone(), si);
        for (i, step) in session.steps.iter().enumerate() {
            points.push(PredictionPoint {
                session_id: session.id.clone(),
                step_index: i,
                gold: gold_decision(step),
                prev_robot: prev_robot_at(&session.steps, i),
            });
        }
    }
    EvalPlan { sessions: transformed, by_id, points }
}

/// Binary confusion counts, positive class = speak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrfCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

impl PrfCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn observe(&mut self, predicted_speak: bool, gold_speak: bool) {
        match (predicted_speak, gold_speak) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Counts plus the derived ratios, precomputed for serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakMetrics {
    pub counts: PrfCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SpeakMetrics {
    pub fn from_counts(counts: PrfCounts) -> Self {
        SpeakMetrics {
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

/// Speak-F1 overall and by previous robot action. The session-start bucket
/// has no table row but is kept so the buckets partition the overall counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakSection {
    pub overall: SpeakMetrics,
    pub prev_physical: SpeakMetrics,
    pub prev_observe: SpeakMetrics,
    pub prev_speak: SpeakMetrics,
    pub session_start: SpeakMetrics,
}

/// One evaluated point: the free timing decision, and at gold speak points
/// the dialogue-act prediction (from the timing decision if it spoke, else
/// from a forced re-query).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDecision {
    pub timing: UserDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub da_acts: Option<Vec<DialogueAct>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default)]
    pub forced_da_query: bool,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default)]
    pub fallback: bool,
}

impl PointDecision {
    pub fn timing_only(timing: UserDecision) -> Self {
        PointDecision {
            timing,
            da_acts: None,
            prompt_sha256: None,
            forced_da_query: false,
            attempts: 0,
            fallback: false,
        }
    }

    pub fn with_da(mut self, acts: Vec<DialogueAct>) -> Self {
        self.da_acts = Some(acts);
        self
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("points and decisions are misaligned: {points} points vs {decisions} decisions")]
    Misaligned { points: usize, decisions: usize },
    #[error(
        "evaluation aborted after {completed} of {total} points (checkpoint: {checkpoint:?}): {source}"
    )]
    Aborted {
        completed: usize,
        total: usize,
        checkpoint: Option<PathBuf>,
        #[source]
        source: PolicyError,
    },
    #[error("checkpoint i/o at {path}: {source}")]
    CheckpointIo { path: PathBuf, source: std::io::Error },
    #[error("forced re-query still observed at {session_id}[{step_index}]")]
    ForcedObserve { session_id: String, step_index: usize },
}

/// Speak-F1 with the previous-robot-action breakdown.
pub fn speak_metrics(
    points: &[PredictionPoint],
    decisions: &[PointDecision],
) -> Result<SpeakSection, EvalError> {
    if points.len() != decisions.len() {
        return Err(EvalError::Misaligned { points: points.len(), decisions: decisions.len() });
    }
    let mut overall = PrfCounts::default();
    let mut buckets: HashMap<PrevRobot, PrfCounts> = HashMap::new();
    for (point, decision) in points.iter().zip(decisions) {
        let predicted = decision.timing.is_speak();
        let gold = point.gold.is_speak();
        overall.observe(predicted, gold);
        buckets.entry(point.prev_robot).or_default().observe(predicted, gold);
    }
    let bucket = |key: PrevRobot| SpeakMetrics::from_counts(buckets.get(&key).copied().unwrap_or_default());
    Ok(SpeakSection {
        overall: SpeakMetrics::from_counts(overall),
        prev_physical: bucket(PrevRobot::Physical),
        prev_observe: bucket(PrevRobot::Observe),
        prev_speak: bucket(PrevRobot::Speak),
        session_start: bucket(PrevRobot::SessionStart),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActPrf {
    pub act: DialogueAct,
    /// Gold occurrences (tp + fn).
    pub support: usize,
    pub counts: PrfCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Multi-label dialogue-act metrics over gold speak points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaSection {
    pub gold_speak_points: usize,
    /// All 18 acts in taxonomy order, including zero-support rows.
    pub per_act: Vec<ActPrf>,
    pub micro: SummaryPrf,
    /// Unweighted mean F1 over acts with gold support >= 1.
    pub macro_f1: f64,
    /// Support-weighted mean F1.
    pub weighted_f1: f64,
    /// Fraction of gold speak points where prediction and gold share an act.
    pub accuracy_overlap: f64,
    /// Fraction where the predicted act set equals the gold set exactly.
    pub accuracy_exact: f64,
}

/// Dialogue-act metrics. Points with gold = Observe are ignored entirely.
/// A missing act prediction at a gold speak point counts as an empty set
/// (every gold act a false negative). Panics on misaligned inputs.
pub fn da_metrics(points: &[PredictionPoint], decisions: &[PointDecision]) -> DaSection {
    assert_eq!(points.len(), decisions.len(), "points and decisions must align 1:1");

    let empty: Vec<DialogueAct> = Vec::new();
    let mut per_act_counts: HashMap<DialogueAct, PrfCounts> = HashMap::new();
    let mut gold_speak_points = 0usize;
    let mut overlap_hits = 0usize;
    let mut exact_hits = 0usize;

    for (point, decision) in points.iter().zip(decisions) {
        let Some(gold_acts) = point.gold.acts() else { continue };
        gold_speak_points += 1;
        let predicted: &[DialogueAct] = decision.da_acts.as_deref().unwrap_or(&empty);

        if predicted.iter().any(|a| gold_acts.contains(a)) {
            overlap_hits += 1;
        }
        let same_set = predicted.len() == gold_acts.len()
            && predicted.iter().all(|a| gold_acts.contains(a))
            && gold_acts.iter().all(|a| predicted.contains(a));
        if same_set {
            exact_hits += 1;
        }

        for act in gold_acts {
            let entry = per_act_counts.entry(*act).or_default();
            if predicted.contains(act) {
                entry.tp += 1;
            } else {
                entry.fn_ += 1;
            }
        }
        for act in predicted {
            if !gold_acts.contains(act) {
                per_act_counts.entry(*act).or_default().fp += 1;
            }
        }
    }

    let mut per_act = Vec::with_capacity(all_infos().len());
    let mut micro_counts = PrfCounts::default();
    let mut macro_sum = 0.0f64;
    let mut macro_n = 0usize;
    let mut weighted_sum = 0.0f64;
    let mut weighted_support = 0usize;
    for info in all_infos() {
        let counts = per_act_counts.get(&info.act).copied().unwrap_or_default();
        let support = counts.tp + counts.fn_;
        let f1 = counts.f1();
        micro_counts.tp += counts.tp;
        micro_counts.fp += counts.fp;
        micro_counts.fn_ += counts.fn_;
        if support > 0 {
            macro_sum += f1;
            macro_n += 1;
            weighted_sum += support as f64 * f1;
            weighted_support += support;
        }
        per_act.push(ActPrf {
            act: info.act,
            support,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1,
        });
    }

    DaSection {
        gold_speak_points,
        per_act,
        micro: SummaryPrf {
            precision: micro_counts.precision(),
            recall: micro_counts.recall(),
            f1: micro_counts.f1(),
        },
        macro_f1: if macro_n == 0 { 0.0 } else { macro_sum / macro_n as f64 },
        weighted_f1: if weighted_support == 0 {
            0.0
        } else {
            weighted_sum / weighted_support as f64
        },
        accuracy_overlap: ratio(overlap_hits, gold_speak_points),
        accuracy_exact: ratio(exact_hits, gold_speak_points),
    }
}

/// Speak/observe confusion over the timing decisions. Panics on misaligned
/// inputs.
pub fn confusion(points: &[PredictionPoint], decisions: &[PointDecision]) -> PrfCounts {
    assert_eq!(points.len(), decisions.len(), "points and decisions must align 1:1");
    let mut counts = PrfCounts::default();
    for (point, decision) in points.iter().zip(decisions) {
        counts.observe(decision.timing.is_speak(), point.gold.is_speak());
    }
    counts
}

/// Everything about a run needed to audit or reproduce it. Deliberately
/// timestamp-free so reruns serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub policy: String,
    pub transform: TransformSpec,
    pub corpus: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PromptSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub sessions: usize,
    pub points: usize,
    pub gold_speak_points: usize,
    pub forced_da_queries: usize,
    pub fallbacks: usize,
    pub llm_attempts: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub speak: SpeakSection,
    pub da: DaSection,
    pub confusion: PrfCounts,
}

/// Inputs that frame a replay evaluation run (worker count, resumability,
/// and the metadata recorded in the report).
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Concurrent in-flight points; 0 behaves as 1.
    pub jobs: usize,
    /// Where to persist completed decisions if the run aborts, and where to
    /// resume from if the file already exists.
    pub checkpoint: Option<PathBuf>,
    pub corpus_label: String,
    pub split: Option<String>,
    pub seed: u64,
    pub prompt: Option<PromptSpec>,
    pub model_id: Option<String>,
    /// Cache whose statistics are embedded in the report.
    pub cache: Option<Arc<ResponseCache>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    session_id: String,
    step_index: usize,
    decision: PointDecision,
}

fn load_checkpoint(
    path: &Path,
) -> Result<HashMap<(String, usize), PointDecision>, EvalError> {
    let mut resumed = HashMap::new();
    if !path.exists() {
        return Ok(resumed);
    }
    let io = |source| EvalError::CheckpointIo { path: path.to_path_buf(), source };
    let reader = BufReader::new(std::fs::File::open(path).map_err(io)?);
    for line in reader.lines() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        // Damaged tail lines (a crash mid-write) are ignored; those points
        // are simply re-evaluated.
        if let Ok(entry) = serde_json::from_str::<CheckpointLine>(&line) {
            resumed.insert((entry.session_id, entry.step_index), entry.decision);
        }
    }
    Ok(resumed)
}

fn write_checkpoint(
    path: &Path,
    points: &[PredictionPoint],
    decisions: &[PointDecision],
) -> Result<(), EvalError> {
    let io = |source| EvalError::CheckpointIo { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
    }
    let mut writer = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for (point, decision) in points.iter().zip(decisions) {
        let line = CheckpointLine {
            session_id: point.session_id.clone(),
            step_index: point.step_index,
            decision: decision.clone(),
        };
        writeln!(writer, "{}", serde_json::to_string(&line).expect("line serializes"))
            .map_err(io)?;
    }
    writer.flush().map_err(io)
}

/// Evaluate one point: free timing decision, plus the forced act query at
/// gold speak points where the policy observed.
async fn evaluate_point(
    plan: &EvalPlan,
    point: &PredictionPoint,
    policy: &dyn UserPolicy,
) -> Result<PointDecision, EvalError> {
    let (goal, history) = plan.context(point);
    let ctx = DecisionContext {
        goal,
        history,
        session_id: &point.session_id,
        step_index: point.step_index,
    };
    let timing = policy.decide(&ctx, &PolicyConstraints::none()).await.map_err(|source| {
        EvalError::Aborted { completed: 0, total: 0, checkpoint: None, source }
    })?;
    let mut decision = PointDecision {
        timing: timing.decision,
        da_acts: None,
        prompt_sha256: timing.prompt_sha256,
        forced_da_query: false,
        attempts: timing.attempts,
        fallback: timing.fallback,
    };
    if point.gold.is_speak() {
        match &decision.timing {
            UserDecision::Speak { acts, .. } => decision.da_acts = Some(acts.clone()),
            UserDecision::Observe => {
                let forced =
                    policy.decide(&ctx, &PolicyConstraints::forced()).await.map_err(|source| {
                        EvalError::Aborted { completed: 0, total: 0, checkpoint: None, source }
                    })?;
                let Some(acts) = forced.decision.acts() else {
                    return Err(EvalError::ForcedObserve {
                        session_id: point.session_id.clone(),
                        step_index: point.step_index,
                    });
                };
                decision.da_acts = Some(acts.to_vec());
                decision.forced_da_query = true;
                decision.attempts += forced.attempts;
                decision.fallback |= forced.fallback;
            }
        }
    }
    Ok(decision)
}

/// Run the policy over every prediction point and assemble the full report.
/// Points are evaluated concurrently (bounded by `options.jobs`) but folded
/// in (session id, step index) order, so results never depend on timing. On
/// abort, completed decisions are checkpointed and the next run resumes.
pub async fn replay_evaluate(
    sessions: &[&Session],
    policy: &dyn UserPolicy,
    transform: &TransformSpec,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let plan = enumerate_points(sessions, transform);
    let resumed = match &options.checkpoint {
        Some(path) => load_checkpoint(path)?,
        None => HashMap::new(),
    };

    let jobs = options.jobs.max(1);
    let mut stream = futures::stream::iter((0..plan.points.len()).map(|i| {
        let plan = &plan;
        let resumed = &resumed;
        async move {
            let point = &plan.points[i];
            if let Some(done) = resumed.get(&(point.session_id.clone(), point.step_index)) {
                return Ok(done.clone());
            }
            evaluate_point(plan, point, policy).await
        }
    }))
    .buffered(jobs);

    let mut decisions: Vec<PointDecision> = Vec::with_capacity(plan.points.len());
    while let Some(result) = stream.next().await {
        match result {
            Ok(decision) => decisions.push(decision),
            Err(error) => {
                drop(stream);
                let written = match &options.checkpoint {
                    Some(path) => {
                        write_checkpoint(path, &plan.points[..decisions.len()], &decisions)?;
                        Some(path.clone())
                    }
                    None => None,
                };
                return Err(match error {
                    EvalError::Aborted { source, .. } => EvalError::Aborted {
                        completed: decisions.len(),
                        total: plan.points.len(),
                        checkpoint: written,
                        source,
                    },
                    other => other,
                });
            }
        }
    }
    drop(stream);

    // The run completed; a leftover checkpoint would only go stale.
    if let Some(path) = &options.checkpoint {
        let _ = std::fs::remove_file(path);
    }

    let speak = speak_metrics(&plan.points, &decisions)?;
    let da = da_metrics(&plan.points, &decisions);
    let confusion_counts = confusion(&plan.points, &decisions);
    let meta = RunMeta {
        policy: policy.name().to_string(),
        transform: transform.clone(),
        corpus: options.corpus_label.clone(),
        split: options.split.clone(),
        seed: options.seed,
        prompt: options.prompt.clone(),
        model_id: options.model_id.clone(),
        sessions: plan.sessions.len(),
        points: plan.points.len(),
        gold_speak_points: da.gold_speak_points,
        forced_da_queries: decisions.iter().filter(|d| d.forced_da_query).count(),
        fallbacks: decisions.iter().filter(|d| d.fallback).count(),
        llm_attempts: decisions.iter().map(|d| u64::from(d.attempts)).sum(),
        cache: options.cache.as_ref().map(|c| c.stats()),
    };
    Ok(EvalReport { meta, speak, da, confusion: confusion_counts })
}
