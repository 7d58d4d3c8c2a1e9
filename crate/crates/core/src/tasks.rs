//! Task construction: tokenization, mini-corpus pools, meta-splits,
//! N-way K-shot episode sampling, and a synthetic phrase-classification
//! benchmark for desk-scale verification.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::Target;
use crate::error::{Error, Result};

/// One labeled document: token row-ids after tokenization/truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Minimal tokenizer: lowercase, strip punctuation into separators, split
/// on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect::<String>()
        .split_whitespace()
        .map(|s| s.to_string())
        .collect()
}

/// Disjoint class sets for the meta-level split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaSplit {
    pub train_classes: Vec<usize>,
    pub val_classes: Vec<usize>,
    pub test_classes: Vec<usize>,
}

impl MetaSplit {
    /// Random split by fractions (default 60/15/25) over the given labels.
    pub fn random(mut labels: Vec<usize>, fractions: (f64, f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        labels.shuffle(&mut rng);
        let n = labels.len();
        let n_train = ((n as f64) * fractions.0) as usize;
        let n_val = ((n as f64) * fractions.1) as usize;
        MetaSplit {
            train_classes: labels[..n_train].to_vec(),
            val_classes: labels[n_train..n_train + n_val].to_vec(),
            test_classes: labels[n_train + n_val..].to_vec(),
        }
    }

    pub fn assert_disjoint(&self) {
        let all: Vec<usize> = self
            .train_classes
            .iter()
            .chain(&self.val_classes)
            .chain(&self.test_classes)
            .copied()
            .collect();
        let set: BTreeSet<usize> = all.iter().copied().collect();
        assert_eq!(all.len(), set.len(), "meta-split partitions overlap");
    }
}

/// Per-class train/test document pools after mini-corpus construction.
#[derive(Clone, Debug)]
pub struct MiniCorpus {
    pub docs: Vec<Document>,
    /// label → (train-pool doc indices, test-pool doc indices)
    pub pools: BTreeMap<usize, (Vec<usize>, Vec<usize>)>,
    /// labels dropped for having fewer than train_per_class + 1 documents
    pub dropped: Vec<usize>,
    pub seed: u64,
}

impl MiniCorpus {
    pub fn classes(&self) -> Vec<usize> {
        self.pools.keys().copied().collect()
    }
}

/// Builds per-class pools following the subsampling procedure: up to
/// `per_class` documents per class, the first `train_per_class` of them
/// forming the train pool and the rest the test pool. In single-label
/// mode, documents with more than one label are removed first.
pub fn build_mini_corpus(
    documents: Vec<Document>,
    per_class: usize,
    train_per_class: usize,
    single_label: bool,
    seed: u64,
) -> Result<MiniCorpus> {
    let docs: Vec<Document> = if single_label {
        documents.into_iter().filter(|d| d.labels.len() == 1).collect()
    } else {
        documents
    };
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        for &l in &d.labels {
            by_label.entry(l).or_default().push(i);
        }
    }
    let mut pools = BTreeMap::new();
    let mut dropped = Vec::new();
    for (label, mut idxs) in by_label {
        if idxs.len() < train_per_class + 1 {
            dropped.push(label);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (label as u64).wrapping_mul(0x9e3779b97f4a7c15));
        idxs.shuffle(&mut rng);
        idxs.truncate(per_class);
        let train = idxs[..train_per_class.min(idxs.len())].to_vec();
        let test = idxs[train_per_class.min(idxs.len())..].to_vec();
        pools.insert(label, (train, test));
    }
    if pools.is_empty() {
        return Err(Error::InsufficientData(
            "no class has enough documents for the mini-corpus".into(),
        ));
    }
    Ok(MiniCorpus {
        docs,
        pools,
        dropped,
        seed,
    })
}

/// A document inside an episode, labels remapped to episode-local slots.
#[derive(Clone, Debug)]
pub struct EpisodeDoc {
    pub id: String,
    pub tokens: Vec<usize>,
    pub target: Target,
}

/// One sampled N-way K-shot task.
#[derive(Clone, Debug)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub support: Vec<EpisodeDoc>,
    pub query: Vec<EpisodeDoc>,
    /// episode-local slot → global label id
    pub slot_map: Vec<usize>,
}

fn doc_target(doc: &Document, slot_map: &[usize], single_label: bool) -> Target {
    if single_label {
        let slot = slot_map
            .iter()
            .position(|l| doc.labels.contains(l))
            .expect("sampled document carries none of the episode labels");
        Target::Single(slot)
    } else {
        Target::Multi(slot_map.iter().map(|l| doc.labels.contains(l)).collect())
    }
}

/// Samples one episode: N classes drawn from the given split partition,
/// K support documents per class from the train pools and up to
/// `query_per_class` per class from the test pools. Class-to-slot
/// assignment is a fresh random permutation per episode; support and
/// query are disjoint by document id.
pub fn sample_episode(
    mini: &MiniCorpus,
    partition_classes: &[usize],
    way: usize,
    shot: usize,
    query_per_class: usize,
    single_label: bool,
    rng: &mut impl Rng,
) -> Result<Episode> {
    let eligible: Vec<usize> = partition_classes
        .iter()
        .copied()
        .filter(|c| {
            mini.pools
                .get(c)
                .map(|(tr, te)| tr.len() >= shot && !te.is_empty())
                .unwrap_or(false)
        })
        .collect();
    if eligible.len() < way {
        return Err(Error::InsufficientData(format!(
            "need {way} classes with ≥{shot} support docs, only {} eligible of {} in split",
            eligible.len(),
            partition_classes.len()
        )));
    }
    let mut chosen = eligible;
    chosen.shuffle(rng);
    chosen.truncate(way);
    let slot_map = chosen; // shuffled order doubles as the slot permutation

    let mut support = Vec::new();
    let mut support_ids: BTreeSet<String> = BTreeSet::new();
    for label in &slot_map {
        let (train_pool, _) = &mini.pools[label];
        let mut pool = train_pool.clone();
        pool.shuffle(rng);
        let mut taken = 0;
        for idx in pool {
            if taken == shot {
                break;
            }
            let doc = &mini.docs[idx];
            if support_ids.contains(&doc.id) {
                continue;
            }
            support_ids.insert(doc.id.clone());
            support.push(EpisodeDoc {
                id: doc.id.clone(),
                tokens: doc.tokens.clone(),
                target: doc_target(doc, &slot_map, single_label),
            });
            taken += 1;
        }
        if single_label && taken < shot {
            return Err(Error::InsufficientData(format!(
                "class {label} yielded only {taken} of {shot} support docs"
            )));
        }
    }

    let mut query = Vec::new();
    let mut query_ids: BTreeSet<String> = BTreeSet::new();
    for label in &slot_map {
        let (_, test_pool) = &mini.pools[label];
        let mut pool = test_pool.clone();
        pool.shuffle(rng);
        let mut taken = 0;
        for idx in pool {
            if taken == query_per_class {
                break;
            }
            let doc = &mini.docs[idx];
            if support_ids.contains(&doc.id) || query_ids.contains(&doc.id) {
                continue;
            }
            query_ids.insert(doc.id.clone());
            query.push(EpisodeDoc {
                id: doc.id.clone(),
                tokens: doc.tokens.clone(),
                target: doc_target(doc, &slot_map, single_label),
            });
            taken += 1;
        }
    }
    if query.is_empty() {
        return Err(Error::InsufficientData("episode has an empty query set".into()));
    }
    Ok(Episode {
        way,
        shot,
        support,
        query,
        slot_map,
    })
}

/// Synthetic phrase benchmark configuration.
///
/// Each class is signaled by a unique gapped phrase: its words appear
/// once, in order, `phrase_stride` positions apart, with noise in the
/// gaps. For phrase lengths ≥ 2 classes come in pairs sharing one token
/// multiset — one class reads the phrase forward, its partner reversed —
/// so no single token identifies a class and detection requires reading
/// word order inside one local window.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub n_classes: usize,
    pub phrase_len: usize,
    /// Distance between consecutive phrase words. The default matches the
    /// dilation of the default encoder, so the full phrase falls on the
    /// taps of a single high-level state.
    pub phrase_stride: usize,
    pub docs_per_class: usize,
    /// Probability that a noise position draws from the full vocabulary
    /// (including other classes' phrase words, out of order); otherwise it
    /// draws from the filler tokens no phrase uses.
    pub noise_rate: f64,
    pub doc_len: usize,
    pub multi_label: bool,
    /// Class counts for (meta-train, meta-validation, meta-test).
    pub class_split: (usize, usize, usize),
    /// 5 train / 15 test per class by default.
    pub train_per_class: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Width of the window a phrase occupies, first word to last.
    pub fn span_len(&self) -> usize {
        (self.phrase_len - 1) * self.phrase_stride + 1
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 200,
            n_classes: 15,
            phrase_len: 3,
            phrase_stride: 3,
            docs_per_class: 20,
            noise_rate: 0.5,
            doc_len: 32,
            multi_label: false,
            class_split: (9, 2, 4),
            train_per_class: 5,
            seed: 0,
        }
    }
}

/// A generated benchmark: pooled documents, the meta-split, and the
/// provenance needed by tests and visual checks.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub mini: MiniCorpus,
    pub split: MetaSplit,
    /// Number of distinct token ids; token id i maps to embedding row i.
    pub n_tokens: usize,
    /// doc id → (start, len) of the anchor class phrase.
    pub phrase_spans: BTreeMap<String, (usize, usize)>,
    pub class_phrases: Vec<Vec<usize>>,
}

/// Builds the class phrases. Length-1 phrases degenerate to one unique
/// token per class; longer phrases use reversed pairs.
fn build_phrases(n_classes: usize, phrase_len: usize) -> Vec<Vec<usize>> {
    let mut phrases = Vec::with_capacity(n_classes);
    if phrase_len == 1 {
        for c in 0..n_classes {
            phrases.push(vec![c]);
        }
        return phrases;
    }
    let mut next_token = 0;
    while phrases.len() < n_classes {
        let forward: Vec<usize> = (next_token..next_token + phrase_len).collect();
        next_token += phrase_len;
        phrases.push(forward.clone());
        if phrases.len() < n_classes {
            let mut reversed = forward;
            reversed.reverse();
            phrases.push(reversed);
        }
    }
    phrases
}

/// Generates the synthetic corpus and meta-split. Deterministic in the
/// seed, byte for byte.
pub fn synth_tasks(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let (n_tr, n_va, n_te) = cfg.class_split;
    if n_tr + n_va + n_te != cfg.n_classes {
        return Err(Error::Contract(format!(
            "class split {:?} does not sum to {} classes",
            cfg.class_split, cfg.n_classes
        )));
    }
    if cfg.vocab_size <= cfg.n_classes * cfg.phrase_len {
        return Err(Error::Contract(format!(
            "vocab size {} must exceed n_classes·phrase_len = {}",
            cfg.vocab_size,
            cfg.n_classes * cfg.phrase_len
        )));
    }
    if cfg.phrase_stride == 0 {
        return Err(Error::Contract("phrase_stride must be positive".into()));
    }
    let span = cfg.span_len();
    if cfg.doc_len < 2 * span + 1 {
        return Err(Error::Contract(
            "doc_len too small to place phrases".into(),
        ));
    }
    let phrases = build_phrases(cfg.n_classes, cfg.phrase_len);
    let n_phrase_tokens = if cfg.phrase_len == 1 {
        cfg.n_classes
    } else {
        cfg.n_classes.div_ceil(2) * cfg.phrase_len
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut docs = Vec::new();
    let mut phrase_spans = BTreeMap::new();
    for class in 0..cfg.n_classes {
        for d in 0..cfg.docs_per_class {
            let id = format!("synth-c{class}-d{d}");
            let mut labels = vec![class];
            let phrase = &phrases[class];
            // lengths vary per document up to doc_len, so the phrase
            // occupies a different fraction of every document and pooled
            // representations cannot rely on a fixed signal dilution
            let min_len = 2 * span + 1;
            let len = rng.gen_range(min_len..=cfg.doc_len);
            // anchor phrase in the first half so a second phrase fits after
            let half = len / 2;
            let start = rng.gen_range(0..=half.saturating_sub(span));
            let mut tokens: Vec<Option<usize>> = vec![None; len];
            for (j, &tok) in phrase.iter().enumerate() {
                tokens[start + j * cfg.phrase_stride] = Some(tok);
            }
            if cfg.multi_label && rng.gen::<f64>() < 0.5 {
                let other = rng.gen_range(0..cfg.n_classes);
                if other != class {
                    let second_start = rng.gen_range(half..=len - span);
                    if second_start >= start + span {
                        for (j, &tok) in phrases[other].iter().enumerate() {
                            tokens[second_start + j * cfg.phrase_stride] = Some(tok);
                        }
                        // anchor label stays first; phrase_spans refer to it
                        labels.push(other);
                    }
                }
            }
            // full-vocabulary noise scatters other classes' phrase words
            // out of order, so no single token is class-unique; filler
            // noise draws only from tokens no phrase uses
            let tokens: Vec<usize> = tokens
                .into_iter()
                .map(|t| match t {
                    Some(tok) => tok,
                    None => {
                        if rng.gen::<f64>() < cfg.noise_rate {
                            rng.gen_range(0..cfg.vocab_size)
                        } else {
                            rng.gen_range(n_phrase_tokens..cfg.vocab_size)
                        }
                    }
                })
                .collect();
            phrase_spans.insert(id.clone(), (start, span));
            docs.push(Document { id, tokens, labels });
        }
    }

    let mini = build_mini_corpus(
        docs,
        cfg.docs_per_class,
        cfg.train_per_class,
        !cfg.multi_label,
        cfg.seed,
    )?;

    let mut classes: Vec<usize> = (0..cfg.n_classes).collect();
    classes.shuffle(&mut rng);
    let split = MetaSplit {
        train_classes: classes[..n_tr].to_vec(),
        val_classes: classes[n_tr..n_tr + n_va].to_vec(),
        test_classes: classes[n_tr + n_va..].to_vec(),
    };
    split.assert_disjoint();

    Ok(SynthCorpus {
        mini,
        split,
        n_tokens: cfg.vocab_size,
        phrase_spans,
        class_phrases: phrases,
    })
}
