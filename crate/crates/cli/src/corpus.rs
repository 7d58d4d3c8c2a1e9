//! JSONL corpus ingestion and synthetic-corpus export.
//!
//! Input lines look like `{"id": "...", "text": "...", "labels": ["..."]}`.
//! Malformed lines are skipped and counted; zero surviving documents is a
//! hard error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ataml_core::tasks::{tokenize, Document, SynthCorpus};

#[derive(Deserialize)]
struct RawDoc {
    id: String,
    text: String,
    labels: Vec<String>,
}

pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    /// surface token → embedding row id, assigned in first-seen order
    pub token_vocab: BTreeMap<String, usize>,
    /// label name → label id
    pub label_vocab: BTreeMap<String, usize>,
    /// label id → label name
    pub label_names: Vec<String>,
    pub skipped_lines: usize,
}

impl LoadedCorpus {
    pub fn n_tokens(&self) -> usize {
        self.token_vocab.len()
    }
}

/// Reads a JSONL corpus, tokenizing and truncating each document to
/// `max_len` tokens. Documents with empty text or no labels are skipped.
pub fn ingest_jsonl(path: &Path, max_len: usize) -> Result<LoadedCorpus> {
    let file = File::open(path).with_context(|| format!("cannot open corpus {}", path.display()))?;
    let reader = BufReader::new(file);

    let mut token_vocab: BTreeMap<String, usize> = BTreeMap::new();
    let mut next_token = 0usize;
    let mut label_vocab: BTreeMap<String, usize> = BTreeMap::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut documents = Vec::new();
    let mut skipped = 0usize;

    for line in reader.lines() {
        let line = line.with_context(|| format!("read error in {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDoc = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let words = tokenize(&raw.text);
        if words.is_empty() || raw.labels.is_empty() {
            skipped += 1;
            continue;
        }
        let tokens: Vec<usize> = words
            .into_iter()
            .take(max_len)
            .map(|w| {
                *token_vocab.entry(w).or_insert_with(|| {
                    let id = next_token;
                    next_token += 1;
                    id
                })
            })
            .collect();
        let mut labels: Vec<usize> = raw
            .labels
            .iter()
            .map(|l| {
                *label_vocab.entry(l.clone()).or_insert_with(|| {
                    label_names.push(l.clone());
                    label_names.len() - 1
                })
            })
            .collect();
        labels.dedup();
        documents.push(Document {
            id: raw.id,
            tokens,
            labels,
        });
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} malformed or empty corpus lines");
    }
    if documents.is_empty() {
        bail!("corpus {} contains no valid documents", path.display());
    }
    Ok(LoadedCorpus {
        documents,
        token_vocab,
        label_vocab,
        label_names,
        skipped_lines: skipped,
    })
}

/// Surface word for a synthetic token id.
pub fn synth_word(token: usize) -> String {
    format!("w{token}")
}

/// Surface label name for a synthetic class id.
pub fn synth_label(class: usize) -> String {
    format!("c{class}")
}

/// Writes a generated synthetic corpus as ingestible JSONL.
pub fn write_synth_jsonl(corpus: &SynthCorpus, path: &Path) -> Result<()> {
    let mut f =
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    for doc in &corpus.mini.docs {
        let text: Vec<String> = doc.tokens.iter().map(|&t| synth_word(t)).collect();
        let labels: Vec<String> = doc.labels.iter().map(|&l| synth_label(l)).collect();
        let line = serde_json::json!({
            "id": doc.id,
            "text": text.join(" "),
            "labels": labels,
        });
        writeln!(f, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_tokenizes_and_maps_labels() {
        let f = write_tmp(&[r#"{"id":"a","text":"Tax cut.","labels":["ECON"]}"#]);
        let c = ingest_jsonl(f.path(), 256).unwrap();
        assert_eq!(c.documents.len(), 1);
        assert_eq!(c.documents[0].tokens.len(), 2);
        assert_eq!(c.token_vocab.len(), 2);
        assert!(c.token_vocab.contains_key("tax"));
        assert_eq!(c.label_names, vec!["ECON"]);
        assert_eq!(c.documents[0].labels, vec![0]);
    }

    #[test]
    fn malformed_and_empty_lines_are_skipped_with_count() {
        let f = write_tmp(&[
            r#"{"id":"a","text":"alpha beta","labels":["X"]}"#,
            r#"not json at all"#,
            r#"{"id":"b","text":"","labels":["X"]}"#,
            r#"{"id":"c","text":"gamma","labels":[]}"#,
        ]);
        let c = ingest_jsonl(f.path(), 256).unwrap();
        assert_eq!(c.documents.len(), 1);
        assert_eq!(c.skipped_lines, 3);
    }

    #[test]
    fn zero_valid_documents_is_an_error() {
        let f = write_tmp(&["garbage"]);
        assert!(ingest_jsonl(f.path(), 256).is_err());
    }

    #[test]
    fn truncation_keeps_the_first_max_len_tokens() {
        let text = (0..300).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        let line = format!(r#"{{"id":"a","text":"{text}","labels":["X"]}}"#);
        let f = write_tmp(&[&line]);
        let c = ingest_jsonl(f.path(), 256).unwrap();
        assert_eq!(c.documents[0].tokens.len(), 256);
        // first token survives, the tail does not
        let t0 = c.token_vocab["t0"];
        assert_eq!(c.documents[0].tokens[0], t0);
        assert!(!c.token_vocab.contains_key("t299"));
    }

    #[test]
    fn synth_roundtrip_through_jsonl() {
        use ataml_core::tasks::{synth_tasks, SynthConfig};
        let corpus = synth_tasks(&SynthConfig {
            vocab_size: 30,
            n_classes: 4,
            phrase_len: 2,
            phrase_stride: 1,
            docs_per_class: 6,
            doc_len: 6,
            class_split: (2, 1, 1),
            train_per_class: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_synth_jsonl(&corpus, f.path()).unwrap();
        let loaded = ingest_jsonl(f.path(), 256).unwrap();
        assert_eq!(loaded.documents.len(), corpus.mini.docs.len());
        assert_eq!(loaded.skipped_lines, 0);
        // token sequences survive the surface round trip
        let by_id: std::collections::BTreeMap<_, _> = loaded
            .documents
            .iter()
            .map(|d| (d.id.clone(), d))
            .collect();
        for doc in &corpus.mini.docs {
            let re = &by_id[&doc.id];
            let words: Vec<usize> = re
                .tokens
                .iter()
                .map(|&t| {
                    let w = loaded
                        .token_vocab
                        .iter()
                        .find(|(_, &id)| id == t)
                        .unwrap()
                        .0
                        .clone();
                    w[1..].parse::<usize>().unwrap()
                })
                .collect();
            assert_eq!(words, doc.tokens);
        }
    }
}
