//! Command-line driver: experiment assembly and the train / eval /
//! visualize / bench / synth-gen verbs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ataml_core::encoder::EmbeddingTable;
use ataml_core::meta::{
    self, Algorithm, LogEntry, MetaConfig, TaskSource, TrainOutcome,
};
use ataml_core::metrics::{self, aggregate};
use ataml_core::model::{self, ModelConfig};
use ataml_core::params::{ParamStore, Partition};
use ataml_core::tasks::{self, MetaSplit, MiniCorpus};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{
    AlgorithmOpt, EncoderOpt, ExperimentConfig, Overrides, SourceKind, Variant,
};
use crate::corpus;
use crate::embeddings;
use crate::report::{self, ResultRow, TraceDoc, TraceEpisode, TraceFile};

/// Environment variable that, when set, prefixes every output directory.
pub const OUTPUT_ROOT_ENV: &str = "ATAML_OUTPUT_ROOT";

// independent deterministic seed streams derived from the experiment seed
const SEED_EMBED: u64 = 0x45;
const SEED_INIT: u64 = 0x49;
const SEED_SPLIT: u64 = 0x53;
const SEED_TRAIN: u64 = 0x54;
const SEED_EVAL: u64 = 0x56;
const SEED_HEAD: u64 = 0x48;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(format!("{e:#}"))
    }
}

fn rt(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn mix(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15)
}

/// A fully assembled experiment: corpus, split, embeddings, and the core
/// configurations derived from the resolved experiment config.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub mini: MiniCorpus,
    pub split: MetaSplit,
    pub embedding: EmbeddingTable,
    /// token id → surface word
    pub words: Vec<String>,
    pub model_cfg: ModelConfig,
    /// doc id → (start, len) of the class phrase; synthetic corpora only
    pub phrase_spans: Option<BTreeMap<String, (usize, usize)>>,
}

impl Experiment {
    pub fn meta_cfg(&self) -> MetaConfig {
        self.cfg.meta_config()
    }

    pub fn source(&self) -> TaskSource<'_> {
        TaskSource {
            mini: &self.mini,
            split: &self.split,
            spec: self.cfg.episode_spec(),
        }
    }

    pub fn word_of(&self, token: usize) -> String {
        if token < self.words.len() {
            self.words[token].clone()
        } else if token == self.embedding.oov_row {
            "<oov>".into()
        } else {
            "<pad>".into()
        }
    }

    pub fn init_params(&self) -> (ParamStore, Partition) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, SEED_INIT));
        model::init_params(&self.model_cfg, &self.embedding, &mut rng)
    }
}

pub fn build_experiment(cfg: ExperimentConfig) -> Result<Experiment, CliError> {
    cfg.validate().map_err(CliError::Config)?;
    let hash = cfg.hash();
    let mut emb_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, SEED_EMBED));
    match cfg.corpus.source {
        SourceKind::Synth => {
            let synth = tasks::synth_tasks(&cfg.synth_config())
                .map_err(|e| CliError::Config(e.to_string()))?;
            let words = (0..synth.n_tokens).map(corpus::synth_word).collect();
            let mut model_cfg = cfg.model_config();
            let embedding =
                EmbeddingTable::random(synth.n_tokens, model_cfg.d_emb, &mut emb_rng);
            model_cfg.d_emb = embedding.dim();
            Ok(Experiment {
                cfg,
                hash,
                mini: synth.mini,
                split: synth.split,
                embedding,
                words,
                model_cfg,
                phrase_spans: Some(synth.phrase_spans),
            })
        }
        SourceKind::Jsonl => {
            let path = PathBuf::from(cfg.corpus.path.as_ref().expect("validated"));
            let loaded = corpus::ingest_jsonl(&path, cfg.corpus.max_len)?;
            let pretrained = match &cfg.corpus.embeddings_path {
                Some(p) => Some(embeddings::load_text(Path::new(p))?),
                None => None,
            };
            let mut model_cfg = cfg.model_config();
            let embedding = embeddings::build_table(
                &loaded.token_vocab,
                pretrained.as_ref(),
                model_cfg.d_emb,
                &mut emb_rng,
            );
            model_cfg.d_emb = embedding.dim();
            let mut words = vec![String::new(); loaded.token_vocab.len()];
            for (w, &id) in &loaded.token_vocab {
                words[id] = w.clone();
            }
            let mini = tasks::build_mini_corpus(
                loaded.documents,
                cfg.corpus.per_class,
                cfg.corpus.train_per_class,
                cfg.corpus.single_label,
                cfg.seed,
            )
            .map_err(rt)?;
            let f = cfg.corpus.split_fractions;
            let split = MetaSplit::random(
                mini.classes(),
                (f[0], f[1], f[2]),
                mix(cfg.seed, SEED_SPLIT),
            );
            Ok(Experiment {
                cfg,
                hash,
                mini,
                split,
                embedding,
                words,
                model_cfg,
                phrase_spans: None,
            })
        }
    }
}

/// Output of the training phase, before any file is written.
pub struct Trained {
    pub partition: Partition,
    pub log: Vec<LogEntry>,
    pub best_params: ParamStore,
    pub iteration: u64,
}

pub fn train_core(
    exp: &Experiment,
    resume_from: Option<Checkpoint>,
) -> Result<Trained, CliError> {
    let (mut params, partition) = exp.init_params();
    let mut start_iter = 0u64;
    if let Some(ckpt) = resume_from {
        params = ckpt.params;
        start_iter = ckpt.iteration;
    }
    let meta_cfg = exp.meta_cfg();
    let t0 = Instant::now();
    let mut clock = move || t0.elapsed().as_millis() as u64;
    let source = exp.source();
    let outcome: TrainOutcome = match meta_cfg.algorithm {
        Algorithm::Random => TrainOutcome {
            log: Vec::new(),
            best_params: params.clone(),
            best_val: None,
            stopped_early: false,
        },
        Algorithm::Pretrain => meta::pretrain_baseline(
            &mut params,
            &partition,
            &source,
            &exp.model_cfg,
            &meta_cfg,
            exp.embedding.pad_row,
            mix(exp.cfg.seed, SEED_TRAIN),
            &mut clock,
        )
        .map_err(rt)?,
        _ => meta::meta_train(
            &mut params,
            &partition,
            &source,
            &exp.model_cfg,
            &meta_cfg,
            exp.embedding.pad_row,
            mix(exp.cfg.seed, SEED_TRAIN),
            &mut clock,
        )
        .map_err(rt)?,
    };
    let iteration = start_iter + outcome.log.len() as u64;
    Ok(Trained {
        partition,
        iteration,
        best_params: outcome.best_params,
        log: outcome.log,
    })
}

/// Meta-tests the given parameters over the configured number of test
/// episodes, returning result rows and attention traces.
pub fn eval_core(
    exp: &Experiment,
    params: &ParamStore,
    partition: &Partition,
) -> Result<(Vec<ResultRow>, TraceFile), CliError> {
    let meta_cfg = exp.meta_cfg();
    let mut params = params.clone();
    let mut head_rng = ChaCha8Rng::seed_from_u64(mix(exp.cfg.seed, SEED_HEAD));
    meta::prepare_meta_test_params(
        meta_cfg.algorithm,
        &exp.model_cfg,
        &mut params,
        &mut head_rng,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(mix(exp.cfg.seed, SEED_EVAL));
    let source = exp.source();
    let single = exp.cfg.single_label();
    let n = exp.cfg.eval.episodes;

    let mut accs = Vec::new();
    let mut micros = Vec::new();
    let mut macros = Vec::new();
    let mut episodes = Vec::new();
    for index in 0..n {
        let ep = source.sample_test(&mut rng).map_err(rt)?;
        let out = meta::meta_test(
            &params,
            partition,
            &ep,
            &exp.model_cfg,
            &meta_cfg,
            exp.embedding.pad_row,
            &mut rng,
        )
        .map_err(rt)?;
        if single {
            accs.push(out.accuracy.expect("single-label episode"));
        } else {
            let c = out.confusion.as_ref().expect("multi-label episode");
            micros.push(metrics::micro_f1(c));
            macros.push(metrics::macro_f1(c));
        }
        let docs: Vec<TraceDoc> = out
            .traces
            .iter()
            .map(|t| report::trace_doc(t, &|tok| exp.word_of(tok)))
            .collect();
        episodes.push(TraceEpisode { index, docs });
    }

    let alg = alg_name(meta_cfg.algorithm);
    let enc = enc_name(exp.model_cfg.encoder);
    let mk = |agg| {
        ResultRow::from_aggregate(
            alg,
            enc,
            exp.model_cfg.attention,
            exp.cfg.eval.way,
            exp.cfg.eval.shot,
            &agg,
            exp.cfg.seed,
        )
    };
    let rows = if n == 0 {
        Vec::new()
    } else if single {
        vec![mk(aggregate("accuracy", &accs))]
    } else {
        vec![
            mk(aggregate("micro_f1", &micros)),
            mk(aggregate("macro_f1", &macros)),
        ]
    };
    Ok((
        rows,
        TraceFile {
            config_hash: exp.hash.clone(),
            seed: exp.cfg.seed,
            episodes,
        },
    ))
}

fn alg_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Random => "random",
        Algorithm::Pretrain => "pretrained",
        Algorithm::Maml => "maml",
        Algorithm::Ataml => "ataml",
    }
}

fn enc_name(e: model::EncoderKind) -> &'static str {
    match e {
        model::EncoderKind::Tcn => "tcn",
        model::EncoderKind::Bilstm => "bilstm",
        model::EncoderKind::None => "none",
    }
}

/// Applies the environment output-root override.
pub fn resolve_output(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var(OUTPUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => PathBuf::from(root).join(&cfg.output_dir),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

fn write_manifest(exp: &Experiment, out: &Path) -> Result<(), CliError> {
    let pools: serde_json::Map<String, serde_json::Value> = exp
        .mini
        .pools
        .iter()
        .map(|(label, (train, test))| {
            let ids = |idxs: &Vec<usize>| -> Vec<String> {
                idxs.iter().map(|&i| exp.mini.docs[i].id.clone()).collect()
            };
            (
                label.to_string(),
                serde_json::json!({ "train": ids(train), "test": ids(test) }),
            )
        })
        .collect();
    let manifest = serde_json::json!({
        "config_hash": exp.hash,
        "seed": exp.cfg.seed,
        "split": {
            "train_classes": exp.split.train_classes,
            "val_classes": exp.split.val_classes,
            "test_classes": exp.split.test_classes,
        },
        "dropped_classes": exp.mini.dropped,
        "pools": pools,
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(rt)
}

fn write_train_outputs(exp: &Experiment, trained: &Trained, out: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(rt)?;
    fs::write(out.join("config.resolved.json"), exp.cfg.resolved_json()).map_err(rt)?;
    fs::write(
        out.join("training_log.csv"),
        report::training_log_csv(&exp.hash, exp.cfg.seed, &trained.log),
    )
    .map_err(rt)?;
    write_manifest(exp, out)?;
    let ckpt_path = out.join("checkpoint.bin");
    checkpoint::save(
        &ckpt_path,
        &Checkpoint {
            config_hash: exp.hash.clone(),
            seed: exp.cfg.seed,
            iteration: trained.iteration,
            partition: trained.partition.clone(),
            params: trained.best_params.clone(),
        },
    )?;
    Ok(ckpt_path)
}

pub fn cmd_train(cfg: ExperimentConfig, resume: bool) -> Result<PathBuf, CliError> {
    let exp = build_experiment(cfg)?;
    let out = resolve_output(&exp.cfg);
    let ckpt_path = out.join("checkpoint.bin");
    let resume_from = if resume && ckpt_path.exists() {
        let ckpt = checkpoint::load(&ckpt_path)?;
        if ckpt.config_hash != exp.hash {
            return Err(CliError::Config(format!(
                "cannot resume: checkpoint hash {} does not match config hash {}",
                ckpt.config_hash, exp.hash
            )));
        }
        Some(ckpt)
    } else {
        None
    };
    let trained = train_core(&exp, resume_from)?;
    let path = write_train_outputs(&exp, &trained, &out)?;
    println!(
        "trained {} for {} iterations → {}",
        alg_name(exp.meta_cfg().algorithm),
        trained.log.len(),
        path.display()
    );
    Ok(path)
}

pub fn cmd_eval(
    cfg: ExperimentConfig,
    ckpt_path: &Path,
    force: bool,
) -> Result<PathBuf, CliError> {
    let exp = build_experiment(cfg)?;
    let out = resolve_output(&exp.cfg);
    fs::create_dir_all(&out).map_err(rt)?;
    let ckpt = checkpoint::load(ckpt_path)?;
    if ckpt.config_hash != exp.hash && !force {
        return Err(CliError::Config(format!(
            "checkpoint {} was trained under config hash {}, current is {}; pass --force to evaluate anyway",
            ckpt_path.display(),
            ckpt.config_hash,
            exp.hash
        )));
    }
    if exp.cfg.eval.episodes == 0 {
        eprintln!("warning: 0 evaluation episodes requested, writing empty results");
    }
    let (rows, traces) = eval_core(&exp, &ckpt.params, &ckpt.partition)?;
    let results_path = out.join("results.csv");
    fs::write(
        &results_path,
        report::results_csv(&exp.hash, exp.cfg.seed, &rows),
    )
    .map_err(rt)?;
    report::write_traces(&out.join("traces.json"), &traces)?;
    for r in &rows {
        println!(
            "{} {} attention={} {}-way {}-shot  {} = {:.4} ± {:.4} ({} episodes)",
            r.algorithm, r.encoder, r.attention, r.way, r.shot, r.metric, r.mean, r.ci95, r.episodes
        );
    }
    Ok(results_path)
}

pub fn cmd_visualize(input: &Path, output: &Path) -> Result<(), CliError> {
    let traces = report::read_traces(input)?;
    let html = report::render_heatmap(&traces);
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(rt)?;
        }
    }
    fs::write(output, html).map_err(rt)?;
    println!("report written to {}", output.display());
    Ok(())
}

pub fn cmd_bench(cfg: ExperimentConfig) -> Result<PathBuf, CliError> {
    let variants: Vec<Variant> = cfg
        .bench
        .variants
        .iter()
        .map(|s| Variant::parse(s).map_err(CliError::Config))
        .collect::<Result<_, _>>()?;
    let out = resolve_output(&cfg);
    fs::create_dir_all(&out).map_err(rt)?;
    let mut all_rows = Vec::new();
    for v in &variants {
        let mut sub = cfg.clone();
        v.apply(&mut sub);
        sub.output_dir = format!(
            "{}/bench-{}",
            cfg.output_dir,
            v.label().replace(':', "-")
        );
        let exp = build_experiment(sub)?;
        let trained = train_core(&exp, None)?;
        let sub_out = resolve_output(&exp.cfg);
        write_train_outputs(&exp, &trained, &sub_out)?;
        let (rows, traces) = eval_core(&exp, &trained.best_params, &trained.partition)?;
        report::write_traces(&sub_out.join("traces.json"), &traces)?;
        for r in &rows {
            println!(
                "{:<24} {} = {:.4} ± {:.4}",
                v.label(),
                r.metric,
                r.mean,
                r.ci95
            );
        }
        all_rows.extend(rows);
    }
    let table_path = out.join("bench_results.csv");
    fs::write(
        &table_path,
        report::results_csv(&cfg.hash(), cfg.seed, &all_rows),
    )
    .map_err(rt)?;
    println!("comparison table written to {}", table_path.display());
    Ok(table_path)
}

pub fn cmd_synth_gen(cfg: ExperimentConfig, out_path: &Path) -> Result<(), CliError> {
    cfg.validate().map_err(CliError::Config)?;
    let synth = tasks::synth_tasks(&cfg.synth_config())
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(rt)?;
        }
    }
    corpus::write_synth_jsonl(&synth, out_path)?;
    println!(
        "wrote {} synthetic documents over {} classes to {}",
        synth.mini.docs.len(),
        synth.mini.pools.len(),
        out_path.display()
    );
    Ok(())
}

#[derive(Args, Debug, Default)]
struct OverrideArgs {
    /// Random seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override
    #[arg(long)]
    output_dir: Option<String>,
    /// Algorithm: random | pretrained | maml | ataml
    #[arg(long)]
    algorithm: Option<String>,
    /// Encoder: tcn | bilstm | none
    #[arg(long)]
    encoder: Option<String>,
    /// Enable or disable the attention mechanism
    #[arg(long)]
    attention: Option<bool>,
    /// Use the first-order meta-gradient approximation
    #[arg(long)]
    first_order: Option<bool>,
    /// Meta-training iteration count
    #[arg(long)]
    iterations: Option<usize>,
    /// Episode way count (classes per task)
    #[arg(long)]
    ways: Option<usize>,
    /// Episode shot count (support documents per class)
    #[arg(long)]
    shots: Option<usize>,
    /// Evaluation episode count
    #[arg(long)]
    episodes: Option<usize>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Result<Overrides, CliError> {
        Ok(Overrides {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            algorithm: self
                .algorithm
                .as_deref()
                .map(AlgorithmOpt::parse)
                .transpose()
                .map_err(CliError::Config)?,
            encoder: self
                .encoder
                .as_deref()
                .map(EncoderOpt::parse)
                .transpose()
                .map_err(CliError::Config)?,
            attention: self.attention,
            first_order: self.first_order,
            iterations: self.iterations,
            way: self.ways,
            shot: self.shots,
            episodes: self.episodes,
        })
    }
}

fn load_config(path: &Option<PathBuf>, ov: &OverrideArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).map_err(CliError::Config)?,
        None => ExperimentConfig::default(),
    };
    ov.to_overrides()?.apply(&mut cfg);
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

#[derive(Parser, Debug)]
#[command(
    name = "ataml",
    about = "Few-shot text classification with attentive task-agnostic meta-learning"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Meta-train a model and write a checkpoint
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from an existing checkpoint in the output directory
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Evaluate a checkpoint over meta-test episodes
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate even if the checkpoint's config hash differs
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Render an attention-heatmap HTML report from a trace file
    Visualize {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train and evaluate the full comparison grid
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Emit a synthetic corpus as JSONL
    SynthGen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train {
            config,
            resume,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            cmd_train(cfg, resume).map(|_| ())
        }
        Cmd::Eval {
            config,
            checkpoint,
            force,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            cmd_eval(cfg, &checkpoint, force).map(|_| ())
        }
        Cmd::Visualize { traces, output } => cmd_visualize(&traces, &output),
        Cmd::Bench { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            cmd_bench(cfg).map(|_| ())
        }
        Cmd::SynthGen {
            config,
            output,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            cmd_synth_gen(cfg, &output)
        }
    }
}

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{e}");
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            1
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            2
        }
    }
}
