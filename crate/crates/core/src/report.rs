//! Rendering evaluation reports for machines (JSON) and people (text).

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::evaluation::{EvalReport, SpeakMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    Text,
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn speak_row(out: &mut String, label: &str, m: &SpeakMetrics) {
    let c = m.counts;
    let _ = writeln!(
        out,
        "{label:<14} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6} {:>6}",
        pct(m.precision),
        pct(m.recall),
        pct(m.f1),
        c.tp,
        c.fp,
        c.fn_,
        c.tn
    );
}

/// Render a report. Output is a pure function of the report contents, so
/// identical runs produce identical bytes.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Text => render_text(report),
    }
}

fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let meta = &report.meta;
    let _ = writeln!(out, "== Evaluation report ==");
    let _ = writeln!(out, "policy: {}", meta.policy);
    let _ = write!(out, "corpus: {}", meta.corpus);
    if let Some(split) = &meta.split {
        let _ = write!(out, " (split: {split})");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "transform: {}", meta.transform.mode.flag_name());
    let _ = writeln!(out, "seed: {}", meta.seed);
    if let Some(model) = &meta.model_id {
        let _ = writeln!(out, "model: {model}");
    }
    if let Some(prompt) = &meta.prompt {
        let _ = writeln!(
            out,
            "prompt: {} (examples: {}, seed: {})",
            match prompt.mode {
                crate::prompting::PromptMode::ZeroShot => "zero-shot",
                crate::prompting::PromptMode::FewShot => "few-shot",
            },
            prompt.n_examples,
            prompt.rng_seed
        );
    }
    let _ = writeln!(
        out,
        "sessions: {}  points: {}  gold speak points: {}",
        meta.sessions, meta.points, meta.gold_speak_points
    );
    let _ = writeln!(
        out,
        "forced DA queries: {}  fallbacks: {}  llm attempts: {}",
        meta.forced_da_queries, meta.fallbacks, meta.llm_attempts
    );
    if let Some(cache) = &meta.cache {
        let _ = writeln!(
            out,
            "cache: entries {}  hits {}  misses {}  inserts {}",
            cache.entries, cache.hits, cache.misses, cache.inserts
        );
    }

    let _ = writeln!(out);
    let _ = writeln!(out, "-- Speak decision (percent; positive class: speak) --");
    let _ = writeln!(
        out,
        "{:<14} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6} {:>6}",
        "bucket", "precision", "recall", "f1", "tp", "fp", "fn", "tn"
    );
    speak_row(&mut out, "P: R action", &report.speak.prev_physical);
    speak_row(&mut out, "P: R observe", &report.speak.prev_observe);
    speak_row(&mut out, "P: R speak", &report.speak.prev_speak);
    speak_row(&mut out, "Overall", &report.speak.overall);

    let da = &report.da;
    let _ = writeln!(out);
    let _ = writeln!(out, "-- Dialogue acts ({} gold speak points) --", da.gold_speak_points);
    let _ = writeln!(
        out,
        "micro: precision {}  recall {}  f1 {}",
        pct(da.micro.precision),
        pct(da.micro.recall),
        pct(da.micro.f1)
    );
    let _ = writeln!(
        out,
        "macro f1: {}  weighted f1: {}",
        pct(da.macro_f1),
        pct(da.weighted_f1)
    );
    let _ = writeln!(
        out,
        "accuracy: overlap {}  exact set {}",
        pct(da.accuracy_overlap),
        pct(da.accuracy_exact)
    );
    let _ = writeln!(
        out,
        "{:<28} {:>7} {:>9} {:>9} {:>9} {:>5} {:>5} {:>5}",
        "act", "support", "precision", "recall", "f1", "tp", "fp", "fn"
    );
    for row in &da.per_act {
        let _ = writeln!(
            out,
            "{:<28} {:>7} {:>9} {:>9} {:>9} {:>5} {:>5} {:>5}",
            row.act.canonical_name(),
            row.support,
            pct(row.precision),
            pct(row.recall),
            pct(row.f1),
            row.counts.tp,
            row.counts.fp,
            row.counts.fn_
        );
    }

    let c = report.confusion;
    let _ = writeln!(out);
    let _ = writeln!(out, "-- Timing confusion --");
    let _ = writeln!(out, "tp {}  fp {}  fn {}  tn {}", c.tp, c.fp, c.fn_, c.tn);
    out
}

/// Side-by-side speak-F1 comparison across labeled runs: one row per run,
/// F1 as a fraction per previous-robot-action bucket plus overall.
pub fn render_comparison(reports: &[(String, EvalReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>9} {:>12} {:>12} {:>10}",
        "run", "Overall", "P: R action", "P: R observe", "P: R speak"
    );
    for (label, report) in reports {
        let s = &report.speak;
        let _ = writeln!(
            out,
            "{:<24} {:>9.3} {:>12.3} {:>12.3} {:>10.3}",
            label,
            s.overall.f1,
            s.prev_physical.f1,
            s.prev_observe.f1,
            s.prev_speak.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{
        enumerate_points, replay_evaluate, EvalOptions, EvalReport,
    };
    use crate::policy::OraclePolicy;
    use crate::transcript::parse_transcript;
    use crate::transforms::TransformSpec;
    use std::sync::Arc;

    async fn sample_report() -> EvalReport {
        let text = "\
Goal: Water the plant.
COMMANDER: <observe>
DRIVER: what should i do? <<RequestForInstruction>>
COMMANDER: fill a cup with water <<Instruction>>
DRIVER: <observe>
COMMANDER: <observe>
DRIVER: <pickup Cup>
COMMANDER: <observe>
DRIVER: <pour HousePlant>
COMMANDER: good job <<FeedbackPositive>>
DRIVER: <observe>
";
        let mut session = parse_transcript(text).unwrap();
        session.id = "plant".to_string();
        let plan = enumerate_points(&[&session], &TransformSpec::none());
        let oracle = OraclePolicy::new(Arc::new(plan.oracle_corpus()));
        replay_evaluate(
            &[&session],
            &oracle,
            &TransformSpec::none(),
            &EvalOptions { corpus_label: "plant-fixture".into(), ..EvalOptions::default() },
        )
        .await
        .unwrap()
    }

    #[tokio::test]
    async fn json_report_round_trips() {
        let report = sample_report().await;
        let rendered = render_report(&report, ReportFormat::Json);
        assert!(rendered.ends_with('\n'));
        let parsed: EvalReport = serde_json::from_str(&rendered).unwrap();
        assert_eq!(parsed, report);
    }

    #[tokio::test]
    async fn text_report_has_the_fixed_row_order_and_percents() {
        let report = sample_report().await;
        let rendered = render_report(&report, ReportFormat::Text);
        let action = rendered.find("P: R action").unwrap();
        let observe = rendered.find("P: R observe").unwrap();
        let speak = rendered.find("P: R speak").unwrap();
        let overall = rendered.find("Overall").unwrap();
        assert!(action < observe && observe < speak && speak < overall);
        // Oracle run: everything is 100.00.
        assert!(rendered.contains("100.00"));
        assert!(rendered.contains("-- Dialogue acts (2 gold speak points) --"));
        assert!(rendered.contains("corpus: plant-fixture"));
        // All 18 act rows are present.
        assert!(rendered.contains("OtherInterfaceComment"));
        assert!(rendered.contains("AlternateQuestions"));
    }

    #[tokio::test]
    async fn rendering_is_deterministic() {
        let report = sample_report().await;
        for format in [ReportFormat::Json, ReportFormat::Text] {
            assert_eq!(render_report(&report, format), render_report(&report, format));
        }
    }

    #[tokio::test]
    async fn comparison_lists_one_row_per_run() {
        let report = sample_report().await;
        let table = render_comparison(&[
            ("zs".to_string(), report.clone()),
            ("fs".to_string(), report),
        ]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("Overall"));
        assert!(lines[1].starts_with("zs"));
        assert!(lines[2].starts_with("fs"));
        assert!(lines[1].contains("1.000"));
    }
}
