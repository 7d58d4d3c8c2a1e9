//! The meta-learning engine: MAML (adapt everything), ATAML (inner-adapt
//! only θ_T, meta-update θ_T and θ_E), the pretrained and random
//! baselines, and the meta-test procedure with ATAML's frozen shared
//! parameters.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, Target, TraceRecord};
use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::metrics::{self, ConfusionCounts};
use crate::model::{self, ModelConfig, ATT_PARAM};
use crate::optim::{self, AdamState, GradMap};
use crate::params::{ParamStore, Partition};
use crate::tasks::{self, Episode, MetaSplit, MiniCorpus};
use crate::attention::HeadKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Maml,
    Ataml,
    Pretrain,
    Random,
}

#[derive(Clone, Debug)]
pub struct MetaConfig {
    pub algorithm: Algorithm,
    pub inner_steps: usize,
    /// β_T, the task-level step size.
    pub inner_lr: f64,
    /// β_M, the meta-level learning rate (Adam).
    pub meta_lr: f64,
    /// S, tasks per meta-iteration.
    pub meta_batch: usize,
    /// Treat inner gradients as constants in the meta-gradient.
    pub first_order: bool,
    pub clip_norm: f64,
    /// TCN(-) ablation: θ_ATT takes fast weights but gets no meta-update.
    pub freeze_attention_slow: bool,
    /// Fine-tuning budget at meta-test time.
    pub metatest_steps: usize,
    pub iterations: usize,
    pub val_every: usize,
    pub val_episodes: usize,
    /// Early-stopping patience, counted in meta-iterations.
    pub patience: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            algorithm: Algorithm::Ataml,
            inner_steps: 5,
            inner_lr: 0.1,
            meta_lr: 1e-3,
            meta_batch: 4,
            first_order: false,
            clip_norm: 1.0,
            freeze_attention_slow: false,
            metatest_steps: 25,
            iterations: 300,
            val_every: 10,
            val_episodes: 10,
            patience: 50,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps < 1 {
            return Err(Error::Contract("inner_steps must be at least 1".into()));
        }
        if self.inner_lr <= 0.0 || self.meta_lr <= 0.0 {
            return Err(Error::Contract("learning rates must be positive".into()));
        }
        if self.meta_batch < 1 {
            return Err(Error::Contract("meta_batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Episode shape shared by training and evaluation.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub single_label: bool,
}

/// A sampled-task source over one mini-corpus and meta-split.
pub struct TaskSource<'a> {
    pub mini: &'a MiniCorpus,
    pub split: &'a MetaSplit,
    pub spec: EpisodeSpec,
}

impl<'a> TaskSource<'a> {
    fn sample(&self, classes: &[usize], rng: &mut impl Rng) -> Result<Episode> {
        tasks::sample_episode(
            self.mini,
            classes,
            self.spec.way,
            self.spec.shot,
            self.spec.query_per_class,
            self.spec.single_label,
            rng,
        )
    }

    pub fn sample_train(&self, rng: &mut impl Rng) -> Result<Episode> {
        self.sample(&self.split.train_classes, rng)
    }

    pub fn sample_val(&self, rng: &mut impl Rng) -> Result<Episode> {
        self.sample(&self.split.val_classes, rng)
    }

    pub fn sample_test(&self, rng: &mut impl Rng) -> Result<Episode> {
        self.sample(&self.split.test_classes, rng)
    }
}

/// Creates graph variables for every parameter: differentiable leaves for
/// partition members, constants for frozen tensors.
pub fn param_leaves(
    g: &mut Graph,
    params: &ParamStore,
    partition: &Partition,
) -> BTreeMap<String, VarId> {
    params
        .iter()
        .map(|(name, t)| {
            let v = if partition.is_trainable(name) {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            };
            (name.clone(), v)
        })
        .collect()
}

/// Names adapted in the inner loop: everything trainable for MAML-style
/// algorithms, only θ_T for ATAML.
pub fn inner_target_names(meta_cfg: &MetaConfig, partition: &Partition) -> Vec<String> {
    match meta_cfg.algorithm {
        Algorithm::Ataml => partition.task_specific.iter().cloned().collect(),
        _ => partition.trainable().cloned().collect(),
    }
}

fn support_docs(episode: &Episode) -> Vec<(&[usize], Target)> {
    episode
        .support
        .iter()
        .map(|d| (d.tokens.as_slice(), d.target.clone()))
        .collect()
}

fn query_docs(episode: &Episode) -> Vec<(&[usize], Target)> {
    episode
        .query
        .iter()
        .map(|d| (d.tokens.as_slice(), d.target.clone()))
        .collect()
}

/// Task-level adaptation: `inner_steps` plain
/// gradient-descent steps at rate β_T on the support loss, recorded
/// differentiably so the meta-gradient can flow back (unless
/// `first_order`). Returns fast-weight variables; parameters outside the
/// adaptation set keep their slow variables and are consumed read-only.
#[allow(clippy::too_many_arguments)]
pub fn inner_adapt(
    g: &mut Graph,
    slow_vars: &BTreeMap<String, VarId>,
    episode: &Episode,
    model_cfg: &ModelConfig,
    meta_cfg: &MetaConfig,
    pad_row: usize,
    targets: &[String],
    rng: &mut impl Rng,
) -> Result<BTreeMap<String, VarId>> {
    if episode.support.is_empty() {
        return Err(Error::Contract("inner_adapt on an empty support set".into()));
    }
    let docs = support_docs(episode);
    let mut fast = slow_vars.clone();
    for _ in 0..meta_cfg.inner_steps {
        let loss = model::batch_loss(g, &fast, model_cfg, &docs, pad_row, true, rng)?;
        let target_vars: Vec<VarId> = targets.iter().map(|n| fast[n]).collect();
        let grads = g.backward(loss, &target_vars);
        for (name, grad) in targets.iter().zip(grads) {
            let grad = if meta_cfg.first_order {
                g.detach(grad)
            } else {
                grad
            };
            let step = g.scale(grad, meta_cfg.inner_lr);
            let updated = g.sub(fast[name], step);
            fast.insert(name.clone(), updated);
        }
    }
    Ok(fast)
}

/// Sum of post-adaptation query losses over the sampled tasks. The inner
/// loop adapts exactly `inner_targets`.
#[allow(clippy::too_many_arguments)]
pub fn meta_episode_loss(
    g: &mut Graph,
    slow_vars: &BTreeMap<String, VarId>,
    episodes: &[Episode],
    model_cfg: &ModelConfig,
    meta_cfg: &MetaConfig,
    pad_row: usize,
    inner_targets: &[String],
    rng: &mut impl Rng,
) -> Result<VarId> {
    if episodes.is_empty() {
        return Err(Error::Contract("meta loss over zero episodes".into()));
    }
    let mut total: Option<VarId> = None;
    for ep in episodes {
        if ep.query.is_empty() {
            return Err(Error::Contract("episode with an empty query set".into()));
        }
        let fast = inner_adapt(
            g, slow_vars, ep, model_cfg, meta_cfg, pad_row, inner_targets, rng,
        )?;
        let docs = query_docs(ep);
        let q_loss = model::batch_loss(g, &fast, model_cfg, &docs, pad_row, true, rng)?;
        total = Some(match total {
            None => q_loss,
            Some(t) => g.add(t, q_loss),
        });
    }
    Ok(total.unwrap())
}

/// Outcome of one meta-iteration.
pub struct MetaStepInfo {
    pub loss: f64,
    pub grad_norm: f64,
    /// Tape length after the backward pass; useful for memory accounting
    /// and for checking that first-order tapes stay smaller.
    pub tape_nodes: usize,
}

/// One meta-update: second-order (by default)
/// meta-gradient of the summed query losses, clipped to `clip_norm`, then
/// one Adam step at rate β_M. Under `freeze_attention_slow` the slow
/// θ_ATT receives no meta-update while still taking fast weights in the
/// inner loop.
#[allow(clippy::too_many_arguments)]
pub fn meta_step(
    params: &mut ParamStore,
    partition: &Partition,
    episodes: &[Episode],
    model_cfg: &ModelConfig,
    meta_cfg: &MetaConfig,
    adam: &mut AdamState,
    pad_row: usize,
    rng: &mut impl Rng,
) -> Result<MetaStepInfo> {
    meta_cfg.validate()?;
    let mut g = Graph::new();
    let slow_vars = param_leaves(&mut g, params, partition);
    let inner_targets = inner_target_names(meta_cfg, partition);
    let loss = meta_episode_loss(
        &mut g,
        &slow_vars,
        episodes,
        model_cfg,
        meta_cfg,
        pad_row,
        &inner_targets,
        rng,
    )?;
    let meta_targets: Vec<String> = partition
        .trainable()
        .filter(|n| !(meta_cfg.freeze_attention_slow && n.as_str() == ATT_PARAM))
        .cloned()
        .collect();
    let target_vars: Vec<VarId> = meta_targets.iter().map(|n| slow_vars[n]).collect();
    let grad_vars = g.backward(loss, &target_vars);
    let mut grads: GradMap = GradMap::new();
    for (name, gv) in meta_targets.iter().zip(grad_vars) {
        let t = g.value(gv).clone();
        if !t.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
        grads.insert(name.clone(), t);
    }
    optim::clip_global_norm(&mut grads, meta_cfg.clip_norm);
    let grad_norm = optim::global_norm(&grads);
    optim::adam_step(
        params,
        &grads,
        adam,
        meta_cfg.meta_lr,
        optim::ADAM_BETA1,
        optim::ADAM_BETA2,
        optim::ADAM_EPS,
    );
    Ok(MetaStepInfo {
        loss: g.value(loss).scalar_value(),
        grad_norm,
        tape_nodes: g.len(),
    })
    // the tape drops here; no cross-step graph retention
}

/// Per-iteration training record.
#[derive(Clone, Debug)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub val_metric: Option<f64>,
    pub wallclock_ms: u64,
}

pub struct TrainOutcome {
    pub log: Vec<LogEntry>,
    /// Parameters at the best validation point (final parameters when no
    /// validation split is available).
    pub best_params: ParamStore,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
}

/// Evaluates the current parameters on sampled validation episodes;
/// single-label → mean accuracy, multi-label → micro-F1 over pooled
/// counts.
fn validate(
    params: &ParamStore,
    partition: &Partition,
    source: &TaskSource,
    model_cfg: &ModelConfig,
    meta_cfg: &MetaConfig,
    pad_row: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut accs = Vec::new();
    let mut pooled = ConfusionCounts::new(source.spec.way);
    for _ in 0..meta_cfg.val_episodes {
        let ep = source.sample_val(rng)?;
        let out = meta_test(params, partition, &ep, model_cfg, meta_cfg, pad_row, rng)?;
        match out.accuracy {
            Some(a) => accs.push(a),
            None => pooled.merge(out.confusion.as_ref().unwrap()),
        }
    }
    if accs.is_empty() {
        Ok(metrics::micro_f1(&pooled))
    } else {
        Ok(accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

/// The meta-training loop: sample S tasks, take one
/// meta-step, periodically validate, early-stop on stalled validation.
/// `clock` supplies wallclock milliseconds for the log (the crate itself
/// has no clock).
#[allow(clippy::too_many_arguments)]
pub fn meta_train(
    params: &mut ParamStore,
    partition: &Partition,
    source: &TaskSource,
    model_cfg: &ModelConfig,
    meta_cfg: &MetaConfig,
    pad_row: usize,
    seed: u64,
    clock: &mut dyn FnMut() -> u64,
) -> Result<TrainOutcome> {
    use rand::SeedableRng;
    meta_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // independent stream so validation never perturbs training randomness
    let mut val_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let mut best_params = params.clone();
    let mut best_val: Option<f64> = None;
    let mut best_iter = 0usize;
    let mut stopped_early = false;
    let has_val = !source.split.val_classes.is_empty() && meta_cfg.val_episodes > 0;

    for iter in 0..meta_cfg.iterations {
        let episodes: Vec<Episode> = (0..meta_cfg.meta_batch)
            .map(|_| source.sample_train(&mut rng))
            .collect::<Result<_>>()?;
        let info = meta_step(
            params, partition, &episodes, model_cfg, meta_cfg, &mut adam, pad_row, &mut rng,
        )?;
        let mut val_metric = None;
        if has_val && (iter + 1) % meta_cfg.val_every == 0 {
            let v = validate(
                params, partition, source, model_cfg, meta_cfg, pad_row, &mut val_rng,
            )?;
            val_metric = Some(v);
            if best_val.map(|b| v > b).unwrap_or(true) {
                best_val = Some(v);
                best_params = params.clone();
                best_iter = iter;
            } else if iter - best_iter >= meta_cfg.patience {
                log.push(LogEntry {
                    iteration: iter,
                    loss: info.loss,
                    val_metric,
                    wallclock_ms: clock(),
                });
                stopped_early = true;
                break;
            }
        }
        log.push(LogEntry {
            iteration: iter,
            loss: info.loss,
            val_metric,
            wallclock_ms: clock(),
        });
    }
    if !has_val {
        best_params = params.clone();
    }
    Ok(TrainOutcome {
        log,
        best_params,
        best_val,
        stopped_early,
    })
}

/// Evaluation record for one meta-test episode.
pub struct EpisodeOutcome {
    /// Present for single-label episodes.
    pub accuracy: Option<f64>,
    /// Present for multi-label episodes.
    pub confusion: Option<ConfusionCounts>,
    pub traces: Vec<TraceRecord>,
    pub n_query: usize,
}

/// Meta-testing: fine-tunes a *copy* of the trained parameters on the
/// support set with plain gradient descent — only θ_T for ATAML (θ_E
/// frozen), all trainable parameters otherwise — then evaluates the query
/// set. The input parameters are never mutated.
pub fn meta_test(
    params: &ParamStore,
    partition: &Partition,
    episode: &Episode,
    model_cfg: &ModelConfig,
    meta_cfg: &MetaConfig,
    pad_row: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeOutcome> {
    if episode.support.is_empty() || episode.query.is_empty() {
        return Err(Error::Contract(
            "meta_test needs nonempty support and query sets".into(),
        ));
    }
    let mut adapted = params.clone();
    let targets: Vec<String> = match meta_cfg.algorithm {
        Algorithm::Ataml => partition.task_specific.iter().cloned().collect(),
        _ => partition.trainable().cloned().collect(),
    };
    let docs = support_docs(episode);
    for _ in 0..meta_cfg.metatest_steps {
        let mut g = Graph::new();
        let vars = param_leaves(&mut g, &adapted, partition);
        let loss = model::batch_loss(&mut g, &vars, model_cfg, &docs, pad_row, true, rng)?;
        let target_vars: Vec<VarId> = targets.iter().map(|n| vars[n]).collect();
        let grads = g.backward(loss, &target_vars);
        for (name, gv) in targets.iter().zip(grads) {
            let gt = g.value(gv);
            let p = adapted.get_mut(name).unwrap();
            let lr = meta_cfg.inner_lr;
            let gd = gt.data();
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                *pv -= lr * gd[i];
            }
        }
    }

    // query evaluation with frozen adapted parameters, no dropout
    let mut g = Graph::new();
    let vars: BTreeMap<String, VarId> = adapted
        .iter()
        .map(|(n, t)| (n.clone(), g.constant(t.clone())))
        .collect();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut confusion = ConfusionCounts::new(episode.way);
    let mut traces = Vec::new();
    let single = matches!(model_cfg.head, HeadKind::Softmax);
    for doc in &episode.query {
        let fwd = model::doc_forward(&mut g, &vars, model_cfg, &doc.tokens, pad_row, false, rng)?;
        let probs_var = attention::classify(&mut g, fwd.logits, model_cfg.head);
        let probs = g.value(probs_var).clone();
        let (prediction, correct) = match (&doc.target, single) {
            (Target::Single(gold), true) => {
                let p = attention::predict_single(&probs);
                preds.push(p);
                golds.push(*gold);
                (Target::Single(p), p == *gold)
            }
            (Target::Multi(gold), false) => {
                let p = attention::predict_multilabel(&probs);
                confusion.observe(&p, gold);
                let ok = p == *gold;
                (Target::Multi(p), ok)
            }
            _ => {
                return Err(Error::Contract(
                    "episode targets do not match the configured head".into(),
                ))
            }
        };
        if let Some(trace) = fwd.trace {
            traces.push(TraceRecord {
                doc_id: doc.id.clone(),
                trace,
                gold: doc.target.clone(),
                prediction,
                correct,
            });
        }
    }
    let accuracy = if single {
        Some(metrics::accuracy(&preds, &golds)?)
    } else {
        None
    };
    Ok(EpisodeOutcome {
        accuracy,
        confusion: if single { None } else { Some(confusion) },
        traces,
        n_query: episode.query.len(),
    })
}

/// Adjusts a parameter copy for meta-testing under the given algorithm.
/// The pretrained baseline re-initializes the head and attention (its
/// meta-train tasks gave the classifier contradictory supervision); other
/// algorithms use their parameters as-is.
pub fn prepare_meta_test_params(
    algorithm: Algorithm,
    model_cfg: &ModelConfig,
    params: &mut ParamStore,
    rng: &mut impl Rng,
) {
    if algorithm == Algorithm::Pretrain {
        model::reinit_head(model_cfg, params, rng);
    }
}

/// The non-meta "pretrained" baseline: ordinary training on the pooled
/// support+query loss of sampled tasks, no inner/outer split.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_baseline(
    params: &mut ParamStore,
    partition: &Partition,
    source: &TaskSource,
    model_cfg: &ModelConfig,
    meta_cfg: &MetaConfig,
    pad_row: usize,
    seed: u64,
    clock: &mut dyn FnMut() -> u64,
) -> Result<TrainOutcome> {
    use rand::SeedableRng;
    meta_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new();
    let mut log = Vec::new();
    let trainable: Vec<String> = partition.trainable().cloned().collect();
    for iter in 0..meta_cfg.iterations {
        let mut g = Graph::new();
        let vars = param_leaves(&mut g, params, partition);
        let mut total: Option<VarId> = None;
        for _ in 0..meta_cfg.meta_batch {
            let ep = source.sample_train(&mut rng)?;
            let mut docs = support_docs(&ep);
            docs.extend(query_docs(&ep));
            let l = model::batch_loss(&mut g, &vars, model_cfg, &docs, pad_row, true, &mut rng)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l),
            });
        }
        let loss = total.unwrap();
        let target_vars: Vec<VarId> = trainable.iter().map(|n| vars[n]).collect();
        let grad_vars = g.backward(loss, &target_vars);
        let mut grads = GradMap::new();
        for (name, gv) in trainable.iter().zip(grad_vars) {
            let t = g.value(gv).clone();
            if !t.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            grads.insert(name.clone(), t);
        }
        optim::clip_global_norm(&mut grads, meta_cfg.clip_norm);
        optim::adam_step(
            params,
            &grads,
            &mut adam,
            meta_cfg.meta_lr,
            optim::ADAM_BETA1,
            optim::ADAM_BETA2,
            optim::ADAM_EPS,
        );
        log.push(LogEntry {
            iteration: iter,
            loss: g.value(loss).scalar_value(),
            val_metric: None,
            wallclock_ms: clock(),
        });
    }
    Ok(TrainOutcome {
        log,
        best_params: params.clone(),
        best_val: None,
        stopped_early: false,
    })
}
