//! Output artifacts: training-log CSV, results CSV, per-episode trace
//! JSON, and the standalone attention-heatmap HTML report.
//!
//! Every file carries the resolved config hash and seed. Header lines
//! starting with `#` may hold wallclock data; CSV bodies are deterministic
//! for a fixed config and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ataml_core::attention::{Target, TraceRecord};
use ataml_core::meta::LogEntry;
use ataml_core::metrics::AggregateResult;

/// One row of the results table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub encoder: String,
    pub attention: bool,
    pub way: usize,
    pub shot: usize,
    pub metric: String,
    pub mean: f64,
    pub ci95: f64,
    pub episodes: usize,
    pub seed: u64,
}

impl ResultRow {
    pub fn from_aggregate(
        algorithm: &str,
        encoder: &str,
        attention: bool,
        way: usize,
        shot: usize,
        agg: &AggregateResult,
        seed: u64,
    ) -> Self {
        ResultRow {
            algorithm: algorithm.into(),
            encoder: encoder.into(),
            attention,
            way,
            shot,
            metric: agg.metric.clone(),
            mean: agg.mean,
            ci95: agg.ci95_half,
            episodes: agg.runs,
            seed,
        }
    }
}

pub fn results_csv(config_hash: &str, seed: u64, rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash} seed={seed}");
    let _ = writeln!(
        out,
        "algorithm,encoder,attention,way,shot,metric,mean,ci95,episodes,seed"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{},{}",
            r.algorithm,
            r.encoder,
            r.attention,
            r.way,
            r.shot,
            r.metric,
            r.mean,
            r.ci95,
            r.episodes,
            r.seed
        );
    }
    out
}

/// Training log CSV. Wallclock totals go into the `#` header so the body
/// stays byte-identical across reruns.
pub fn training_log_csv(config_hash: &str, seed: u64, log: &[LogEntry]) -> String {
    let mut out = String::new();
    let wall = log.last().map(|e| e.wallclock_ms).unwrap_or(0);
    let _ = writeln!(
        out,
        "# config_hash={config_hash} seed={seed} wallclock_ms={wall}"
    );
    let _ = writeln!(out, "iteration,loss,val_metric");
    for e in log {
        let val = e
            .val_metric
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        let _ = writeln!(out, "{},{:.6},{}", e.iteration, e.loss, val);
    }
    out
}

/// Gold or predicted labels in trace files: a slot index for single-label
/// episodes, an indicator vector for multi-label ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelJson {
    Single(usize),
    Multi(Vec<bool>),
}

impl From<&Target> for LabelJson {
    fn from(t: &Target) -> Self {
        match t {
            Target::Single(s) => LabelJson::Single(*s),
            Target::Multi(v) => LabelJson::Multi(v.clone()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceDoc {
    pub doc_id: String,
    pub tokens: Vec<String>,
    /// Raw attention scores; `null` marks pad positions.
    pub alphas: Vec<Option<f64>>,
    pub gold: LabelJson,
    pub prediction: LabelJson,
    pub correct: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEpisode {
    pub index: usize,
    pub docs: Vec<TraceDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceFile {
    pub config_hash: String,
    pub seed: u64,
    pub episodes: Vec<TraceEpisode>,
}

/// Converts a core trace record, resolving token ids to surface words.
pub fn trace_doc(rec: &TraceRecord, word_of: &dyn Fn(usize) -> String) -> TraceDoc {
    TraceDoc {
        doc_id: rec.doc_id.clone(),
        tokens: rec.trace.token_rows.iter().map(|&t| word_of(t)).collect(),
        alphas: rec.trace.alphas.clone(),
        gold: (&rec.gold).into(),
        prediction: (&rec.prediction).into(),
        correct: rec.correct,
    }
}

pub fn write_traces(path: &Path, traces: &TraceFile) -> Result<()> {
    let json = serde_json::to_string_pretty(traces)?;
    fs::write(path, json).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_traces(path: &Path) -> Result<TraceFile> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid trace file {}", path.display()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn label_text(l: &LabelJson) -> String {
    match l {
        LabelJson::Single(s) => format!("slot {s}"),
        LabelJson::Multi(v) => {
            let on: Vec<String> = v
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i.to_string())
                .collect();
            format!("slots [{}]", on.join(", "))
        }
    }
}

/// Display intensity for one token: |α| normalized by the document's
/// maximum |α|. A monotone map of |α|, zero when the document is all-zero.
pub fn display_intensity(alpha: f64, max_abs: f64) -> f64 {
    if max_abs <= 0.0 {
        0.0
    } else {
        alpha.abs() / max_abs
    }
}

/// Renders the standalone heatmap report. Positive scores shade blue,
/// negative red; hovering a token shows its raw α. No external resources.
pub fn render_heatmap(traces: &TraceFile) -> String {
    let mut body = String::new();
    let mut n_docs = 0usize;
    for ep in &traces.episodes {
        for doc in &ep.docs {
            n_docs += 1;
            let max_abs = doc
                .alphas
                .iter()
                .flatten()
                .fold(0.0_f64, |m, a| m.max(a.abs()));
            let verdict = if doc.correct { "correct" } else { "wrong" };
            let _ = writeln!(
                body,
                "<div class=\"doc\"><div class=\"meta\">episode {} · {} · gold {} · predicted {} · {}</div><p>",
                ep.index,
                escape(&doc.doc_id),
                escape(&label_text(&doc.gold)),
                escape(&label_text(&doc.prediction)),
                verdict
            );
            for (tok, alpha) in doc.tokens.iter().zip(&doc.alphas) {
                match alpha {
                    Some(a) => {
                        let intensity = display_intensity(*a, max_abs);
                        let (r, g, b) = if *a >= 0.0 {
                            (33, 102, 172)
                        } else {
                            (178, 24, 43)
                        };
                        let _ = write!(
                            body,
                            "<span class=\"tok\" title=\"α = {a}\" style=\"background: rgba({r},{g},{b},{intensity:.4})\">{}</span> ",
                            escape(tok)
                        );
                    }
                    None => {
                        let _ = write!(
                            body,
                            "<span class=\"tok pad\" title=\"pad\">{}</span> ",
                            escape(tok)
                        );
                    }
                }
            }
            let _ = writeln!(body, "</p></div>");
        }
    }
    if n_docs == 0 {
        body = "<p class=\"notice\">No attention traces to display.</p>".into();
    }
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n<title>Attention report</title>\n<style>\nbody {{ font-family: sans-serif; margin: 2em; }}\n.doc {{ margin-bottom: 1.2em; }}\n.meta {{ color: #555; font-size: 0.85em; margin-bottom: 0.2em; }}\n.tok {{ padding: 1px 3px; border-radius: 3px; }}\n.pad {{ color: #bbb; }}\n.notice {{ color: #777; }}\n</style></head><body>\n<h1>Attention report</h1>\n<div class=\"meta\">config_hash={} seed={} documents={}</div>\n{}\n</body></html>\n",
        escape(&traces.config_hash),
        traces.seed,
        n_docs,
        body
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(alphas: Vec<Option<f64>>) -> TraceDoc {
        TraceDoc {
            doc_id: "d0".into(),
            tokens: (0..alphas.len()).map(|i| format!("w{i}")).collect(),
            alphas,
            gold: LabelJson::Single(1),
            prediction: LabelJson::Single(1),
            correct: true,
        }
    }

    fn file(docs: Vec<TraceDoc>) -> TraceFile {
        TraceFile {
            config_hash: "h".into(),
            seed: 0,
            episodes: vec![TraceEpisode { index: 0, docs }],
        }
    }

    #[test]
    fn intensity_is_monotone_in_magnitude() {
        let alphas = [0.1f64, -0.4, 0.25, -0.9, 0.0];
        let max = 0.9;
        let mut pairs: Vec<(f64, f64)> = alphas
            .iter()
            .map(|&a| (a.abs(), display_intensity(a, max)))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
        assert_eq!(display_intensity(0.5, 0.0), 0.0);
    }

    #[test]
    fn uniform_alphas_shade_uniformly() {
        let t = file(vec![doc(vec![Some(0.3); 4])]);
        let html = render_heatmap(&t);
        let needle = "rgba(33,102,172,1.0000)";
        assert_eq!(html.matches(needle).count(), 4);
    }

    #[test]
    fn dominant_alpha_is_the_single_darkest_token() {
        let t = file(vec![doc(vec![Some(0.01), Some(0.9), Some(0.02)])]);
        let html = render_heatmap(&t);
        assert_eq!(html.matches(",1.0000)").count(), 1);
    }

    #[test]
    fn raw_alphas_appear_verbatim_in_hover_titles() {
        let t = file(vec![doc(vec![Some(0.125), Some(-0.5)])]);
        let html = render_heatmap(&t);
        assert!(html.contains("title=\"α = 0.125\""));
        assert!(html.contains("title=\"α = -0.5\""));
        // negative score gets the red hue
        assert!(html.contains("rgba(178,24,43"));
    }

    #[test]
    fn empty_trace_renders_a_notice() {
        let t = TraceFile {
            config_hash: "h".into(),
            seed: 0,
            episodes: vec![],
        };
        let html = render_heatmap(&t);
        assert!(html.contains("No attention traces"));
    }

    #[test]
    fn report_references_no_external_resources() {
        let t = file(vec![doc(vec![Some(0.3)])]);
        let html = render_heatmap(&t);
        assert!(!html.contains("http://"));
        assert!(!html.contains("https://"));
        assert!(!html.contains("src="));
    }

    #[test]
    fn trace_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let t = file(vec![doc(vec![Some(0.5), None])]);
        write_traces(&path, &t).unwrap();
        let back = read_traces(&path).unwrap();
        assert_eq!(back.episodes[0].docs[0].alphas, vec![Some(0.5), None]);
        assert_eq!(back.episodes[0].docs[0].gold, LabelJson::Single(1));
    }

    #[test]
    fn csv_bodies_are_deterministic_with_wallclock_in_header() {
        let log = vec![
            LogEntry {
                iteration: 0,
                loss: 1.5,
                val_metric: None,
                wallclock_ms: 10,
            },
            LogEntry {
                iteration: 1,
                loss: 1.25,
                val_metric: Some(0.5),
                wallclock_ms: 25,
            },
        ];
        let a = training_log_csv("h", 3, &log);
        let mut log2 = log.clone();
        log2[1].wallclock_ms = 99;
        let b = training_log_csv("h", 3, &log2);
        let body = |s: &str| {
            s.lines()
                .filter(|l| !l.starts_with('#'))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(body(&a), body(&b));
        assert!(a.starts_with("# config_hash=h seed=3"));
        assert!(a.contains("1,1.250000,0.500000"));
    }
}
