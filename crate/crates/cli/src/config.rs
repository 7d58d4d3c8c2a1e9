//! Experiment configuration: JSON files with full defaults, strict unknown
//! key rejection, and precedence flags > file > defaults.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ataml_core::attention::HeadKind;
use ataml_core::encoder::TcnConfig;
use ataml_core::meta::{Algorithm, EpisodeSpec, MetaConfig};
use ataml_core::model::{EncoderKind, ModelConfig};
use ataml_core::tasks::SynthConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Synth,
    Jsonl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmOpt {
    Random,
    Pretrained,
    Maml,
    Ataml,
}

impl AlgorithmOpt {
    pub fn to_core(self) -> Algorithm {
        match self {
            AlgorithmOpt::Random => Algorithm::Random,
            AlgorithmOpt::Pretrained => Algorithm::Pretrain,
            AlgorithmOpt::Maml => Algorithm::Maml,
            AlgorithmOpt::Ataml => Algorithm::Ataml,
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(AlgorithmOpt::Random),
            "pretrained" => Ok(AlgorithmOpt::Pretrained),
            "maml" => Ok(AlgorithmOpt::Maml),
            "ataml" => Ok(AlgorithmOpt::Ataml),
            other => Err(format!(
                "unknown algorithm '{other}' (expected random|pretrained|maml|ataml)"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmOpt::Random => "random",
            AlgorithmOpt::Pretrained => "pretrained",
            AlgorithmOpt::Maml => "maml",
            AlgorithmOpt::Ataml => "ataml",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderOpt {
    Tcn,
    Bilstm,
    None,
}

impl EncoderOpt {
    pub fn to_core(self) -> EncoderKind {
        match self {
            EncoderOpt::Tcn => EncoderKind::Tcn,
            EncoderOpt::Bilstm => EncoderKind::Bilstm,
            EncoderOpt::None => EncoderKind::None,
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "tcn" => Ok(EncoderOpt::Tcn),
            "bilstm" => Ok(EncoderOpt::Bilstm),
            "none" => Ok(EncoderOpt::None),
            other => Err(format!(
                "unknown encoder '{other}' (expected tcn|bilstm|none)"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderOpt::Tcn => "tcn",
            EncoderOpt::Bilstm => "bilstm",
            EncoderOpt::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub vocab_size: usize,
    pub n_classes: usize,
    pub phrase_len: usize,
    pub phrase_stride: usize,
    pub docs_per_class: usize,
    pub noise_rate: f64,
    pub doc_len: usize,
    pub multi_label: bool,
    /// class counts for (meta-train, meta-validation, meta-test)
    pub class_split: [usize; 3],
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            vocab_size: d.vocab_size,
            n_classes: d.n_classes,
            phrase_len: d.phrase_len,
            phrase_stride: d.phrase_stride,
            docs_per_class: d.docs_per_class,
            noise_rate: d.noise_rate,
            doc_len: d.doc_len,
            multi_label: d.multi_label,
            class_split: [d.class_split.0, d.class_split.1, d.class_split.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub source: SourceKind,
    /// JSONL corpus path; required when source = jsonl.
    pub path: Option<String>,
    /// Optional pretrained embedding file (text format); its dimension
    /// overrides model.d_emb.
    pub embeddings_path: Option<String>,
    pub max_len: usize,
    pub per_class: usize,
    pub train_per_class: usize,
    pub single_label: bool,
    /// class fractions for (meta-train, meta-validation, meta-test);
    /// applies to jsonl corpora, synth uses synth.class_split
    pub split_fractions: [f64; 3],
    pub synth: SynthSection,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            source: SourceKind::Synth,
            path: None,
            embeddings_path: None,
            max_len: 256,
            per_class: 20,
            train_per_class: 5,
            single_label: true,
            split_fractions: [0.6, 0.15, 0.25],
            synth: SynthSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcnSection {
    pub layers: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub channels: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub residual: bool,
}

impl Default for TcnSection {
    fn default() -> Self {
        let d = TcnConfig::default();
        TcnSection {
            layers: d.layers,
            kernel_size: d.kernel_size,
            dilation: d.dilation,
            channels: d.channels,
            leaky_slope: d.leaky_slope,
            dropout: d.dropout,
            residual: d.residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder: EncoderOpt,
    pub attention: bool,
    pub d_emb: usize,
    pub tcn: TcnSection,
    pub lstm_hidden: usize,
    pub train_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        ModelSection {
            encoder: EncoderOpt::Tcn,
            attention: d.attention,
            d_emb: d.d_emb,
            tcn: TcnSection::default(),
            lstm_hidden: d.lstm_hidden,
            train_embeddings: d.train_embeddings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaSection {
    pub algorithm: AlgorithmOpt,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub meta_batch: usize,
    pub first_order: bool,
    pub clip_norm: f64,
    pub freeze_attention_slow: bool,
    pub metatest_steps: usize,
    pub iterations: usize,
    pub val_every: usize,
    pub val_episodes: usize,
    pub patience: usize,
}

impl Default for MetaSection {
    fn default() -> Self {
        let d = MetaConfig::default();
        MetaSection {
            algorithm: AlgorithmOpt::Ataml,
            inner_steps: d.inner_steps,
            inner_lr: d.inner_lr,
            meta_lr: d.meta_lr,
            meta_batch: d.meta_batch,
            first_order: d.first_order,
            clip_norm: d.clip_norm,
            freeze_attention_slow: d.freeze_attention_slow,
            metatest_steps: d.metatest_steps,
            iterations: d.iterations,
            val_every: d.val_every,
            val_episodes: d.val_episodes,
            patience: d.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            way: 5,
            shot: 1,
            query_per_class: 15,
            episodes: 100,
        }
    }
}

/// A benchmark grid cell: `algorithm:encoder:att|noatt`, with an optional
/// `:freeze` suffix that withholds the meta-update from the attention
/// vector while keeping its fast weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub variants: Vec<String>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            variants: vec![
                "random:tcn:att".into(),
                "pretrained:tcn:att".into(),
                "maml:tcn:att".into(),
                "ataml:tcn:att".into(),
                "maml:tcn:noatt".into(),
                "ataml:none:att".into(),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub algorithm: AlgorithmOpt,
    pub encoder: EncoderOpt,
    pub attention: bool,
    pub freeze_attention_slow: bool,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() < 3 || parts.len() > 4 {
            return Err(format!(
                "variant '{s}' must look like algorithm:encoder:att|noatt[:freeze]"
            ));
        }
        let attention = match parts[2] {
            "att" => true,
            "noatt" => false,
            other => return Err(format!("variant '{s}': expected att|noatt, got '{other}'")),
        };
        let freeze = match parts.get(3) {
            None => false,
            Some(&"freeze") => true,
            Some(other) => return Err(format!("variant '{s}': unknown suffix '{other}'")),
        };
        Ok(Variant {
            algorithm: AlgorithmOpt::parse(parts[0])?,
            encoder: EncoderOpt::parse(parts[1])?,
            attention,
            freeze_attention_slow: freeze,
        })
    }

    pub fn label(&self) -> String {
        format!(
            "{}:{}:{}{}",
            self.algorithm.name(),
            self.encoder.name(),
            if self.attention { "att" } else { "noatt" },
            if self.freeze_attention_slow {
                ":freeze"
            } else {
                ""
            }
        )
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        cfg.meta.algorithm = self.algorithm;
        cfg.model.encoder = self.encoder;
        cfg.model.attention = self.attention;
        cfg.meta.freeze_attention_slow = self.freeze_attention_slow;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub meta: MetaSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: "runs/default".into(),
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            meta: MetaSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.corpus.source == SourceKind::Jsonl && self.corpus.path.is_none() {
            return Err("corpus.path is required when corpus.source = jsonl".into());
        }
        let f = &self.corpus.split_fractions;
        if f.iter().any(|v| *v < 0.0) || f.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err("corpus.split_fractions must be non-negative and sum to ≤ 1".into());
        }
        if self.eval.way < 1 || self.eval.shot < 1 {
            return Err("eval.way and eval.shot must be at least 1".into());
        }
        self.model_config()
            .validate()
            .map_err(|e| format!("model: {e}"))?;
        self.meta_config()
            .validate()
            .map_err(|e| format!("meta: {e}"))?;
        Ok(())
    }

    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.resolved_json().as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    pub fn single_label(&self) -> bool {
        match self.corpus.source {
            SourceKind::Synth => !self.corpus.synth.multi_label,
            SourceKind::Jsonl => self.corpus.single_label,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.model.encoder.to_core(),
            attention: self.model.attention,
            way: self.eval.way,
            d_emb: self.model.d_emb,
            tcn: TcnConfig {
                layers: self.model.tcn.layers,
                kernel_size: self.model.tcn.kernel_size,
                dilation: self.model.tcn.dilation,
                channels: self.model.tcn.channels,
                leaky_slope: self.model.tcn.leaky_slope,
                dropout: self.model.tcn.dropout,
                residual: self.model.tcn.residual,
            },
            lstm_hidden: self.model.lstm_hidden,
            head: if self.single_label() {
                HeadKind::Softmax
            } else {
                HeadKind::Sigmoid
            },
            train_embeddings: self.model.train_embeddings,
        }
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            algorithm: self.meta.algorithm.to_core(),
            inner_steps: self.meta.inner_steps,
            inner_lr: self.meta.inner_lr,
            meta_lr: self.meta.meta_lr,
            meta_batch: self.meta.meta_batch,
            first_order: self.meta.first_order,
            clip_norm: self.meta.clip_norm,
            freeze_attention_slow: self.meta.freeze_attention_slow,
            metatest_steps: self.meta.metatest_steps,
            iterations: self.meta.iterations,
            val_every: self.meta.val_every,
            val_episodes: self.meta.val_episodes,
            patience: self.meta.patience,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.corpus.synth;
        SynthConfig {
            vocab_size: s.vocab_size,
            n_classes: s.n_classes,
            phrase_len: s.phrase_len,
            phrase_stride: s.phrase_stride,
            docs_per_class: s.docs_per_class,
            noise_rate: s.noise_rate,
            doc_len: s.doc_len,
            multi_label: s.multi_label,
            class_split: (s.class_split[0], s.class_split[1], s.class_split[2]),
            train_per_class: self.corpus.train_per_class,
            seed: self.seed,
        }
    }

    pub fn episode_spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            way: self.eval.way,
            shot: self.eval.shot,
            query_per_class: self.eval.query_per_class,
            single_label: self.single_label(),
        }
    }
}

/// Command-line overrides; every field defaults to "keep the file value".
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub algorithm: Option<AlgorithmOpt>,
    pub encoder: Option<EncoderOpt>,
    pub attention: Option<bool>,
    pub first_order: Option<bool>,
    pub iterations: Option<usize>,
    pub way: Option<usize>,
    pub shot: Option<usize>,
    pub episodes: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.algorithm {
            cfg.meta.algorithm = v;
        }
        if let Some(v) = self.encoder {
            cfg.model.encoder = v;
        }
        if let Some(v) = self.attention {
            cfg.model.attention = v;
        }
        if let Some(v) = self.first_order {
            cfg.meta.first_order = v;
        }
        if let Some(v) = self.iterations {
            cfg.meta.iterations = v;
        }
        if let Some(v) = self.way {
            cfg.eval.way = v;
        }
        if let Some(v) = self.shot {
            cfg.eval.shot = v;
        }
        if let Some(v) = self.episodes {
            cfg.eval.episodes = v;
        }
    }
}
