//! Base-learner assembly: parameter construction, the shared/task-specific
//! partition, and the per-document forward pass.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::{self, AttentionTrace, HeadKind, Target};
use crate::encoder::{self, EmbeddingTable, TcnConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::math;
use crate::params::{ParamStore, Partition};
use crate::tensor::Tensor;

/// Which sequence encoder backs the base learner. `None` applies attention
/// directly to the word embeddings (the word-level ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Tcn,
    Bilstm,
    None,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// When false, the document vector is a plain mean over states.
    pub attention: bool,
    /// Episode way count; fixes the classifier width.
    pub way: usize,
    pub d_emb: usize,
    pub tcn: TcnConfig,
    pub lstm_hidden: usize,
    pub head: HeadKind,
    /// Moves the embedding table into θ_E; frozen by default.
    pub train_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Tcn,
            attention: true,
            way: 5,
            d_emb: 300,
            tcn: TcnConfig::default(),
            lstm_hidden: 128,
            head: HeadKind::Softmax,
            train_embeddings: false,
        }
    }
}

impl ModelConfig {
    /// Dimension of the encoder states the attention and head operate on.
    pub fn state_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Tcn => self.tcn.channels,
            EncoderKind::Bilstm => 2 * self.lstm_hidden,
            EncoderKind::None => self.d_emb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.way < 1 {
            return Err(Error::Contract("way count must be at least 1".into()));
        }
        self.tcn.validate()
    }
}

pub const EMBED_PARAM: &str = "embed.table";
pub const ATT_PARAM: &str = "att.theta";
pub const HEAD_W_PARAM: &str = "head.w";
pub const HEAD_B_PARAM: &str = "head.b";

/// Initializes all model parameters and the θ_E/θ_T partition.
///
/// θ_T = {attention vector, classifier weights}; θ_E = encoder parameters
/// (plus embeddings when they are trainable). The partition is immutable
/// after construction.
pub fn init_params(
    cfg: &ModelConfig,
    embedding: &EmbeddingTable,
    rng: &mut impl Rng,
) -> (ParamStore, Partition) {
    assert_eq!(embedding.dim(), cfg.d_emb, "embedding dim mismatch");
    let mut params = ParamStore::new();
    let mut partition = Partition::default();

    params.insert(EMBED_PARAM, embedding.matrix.clone());
    if cfg.train_embeddings {
        partition.shared.insert(EMBED_PARAM.to_string());
    }

    match cfg.encoder {
        EncoderKind::Tcn => {
            for (name, t) in encoder::init_tcn_params(&cfg.tcn, cfg.d_emb, rng) {
                partition.shared.insert(name.clone());
                params.insert(&name, t);
            }
        }
        EncoderKind::Bilstm => {
            for (name, t) in encoder::init_bilstm_params(cfg.d_emb, cfg.lstm_hidden, rng) {
                partition.shared.insert(name.clone());
                params.insert(&name, t);
            }
        }
        EncoderKind::None => {}
    }

    let d = cfg.state_dim();
    if cfg.attention {
        let bound = math::sqrt(1.0 / d as f64);
        let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..bound)).collect();
        params.insert(ATT_PARAM, Tensor::col(theta));
        partition.task_specific.insert(ATT_PARAM.to_string());
    }
    reinit_head(cfg, &mut params, rng);
    partition.task_specific.insert(HEAD_W_PARAM.to_string());
    partition.task_specific.insert(HEAD_B_PARAM.to_string());

    partition.assert_disjoint();
    (params, partition)
}

/// Re-draws the classifier head (and attention vector if present) in
/// place; used by the pretrained baseline at meta-test time.
pub fn reinit_head(cfg: &ModelConfig, params: &mut ParamStore, rng: &mut impl Rng) {
    let d = cfg.state_dim();
    let bound = math::sqrt(1.0 / d as f64);
    let w: Vec<f64> = (0..d * cfg.way).map(|_| rng.gen_range(-bound..bound)).collect();
    params.insert(HEAD_W_PARAM, Tensor::matrix(d, cfg.way, w));
    params.insert(HEAD_B_PARAM, Tensor::zeros(1, cfg.way));
    if cfg.attention && params.get(ATT_PARAM).is_some() {
        let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..bound)).collect();
        params.insert(ATT_PARAM, Tensor::col(theta));
    }
}

/// One document's forward pass output.
pub struct DocForward {
    pub logits: VarId,
    /// Present only for attentive models.
    pub trace: Option<AttentionTrace>,
}

/// Runs the base learner on one token-id sequence under the parameter
/// variables in `vars`.
pub fn doc_forward(
    g: &mut Graph,
    vars: &BTreeMap<String, VarId>,
    cfg: &ModelConfig,
    tokens: &[usize],
    pad_row: usize,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<DocForward> {
    let get = |name: &str| -> Result<VarId> {
        vars.get(name)
            .copied()
            .ok_or_else(|| Error::Contract(alloc::format!("missing parameter {name}")))
    };
    let table = get(EMBED_PARAM)?;
    let embedded = encoder::embed(g, table, tokens, pad_row)?;
    let states = match cfg.encoder {
        EncoderKind::Tcn => encoder::tcn_forward(g, &embedded, vars, &cfg.tcn, train_mode, rng)?,
        EncoderKind::Bilstm => encoder::bilstm_forward(g, &embedded, vars, cfg.lstm_hidden)?,
        EncoderKind::None => embedded,
    };
    let (c, trace) = if cfg.attention {
        let theta = get(ATT_PARAM)?;
        let (c, alphas) = attention::attend(g, &states, theta)?;
        let trace = attention::trace_from(g, alphas, &states.mask, tokens);
        (c, Some(trace))
    } else {
        (attention::mean_pool(g, &states)?, None)
    };
    let logits = attention::logits(g, c, get(HEAD_W_PARAM)?, get(HEAD_B_PARAM)?);
    Ok(DocForward { logits, trace })
}

/// Mean loss over a batch of `(tokens, target)` documents.
pub fn batch_loss(
    g: &mut Graph,
    vars: &BTreeMap<String, VarId>,
    cfg: &ModelConfig,
    docs: &[(&[usize], Target)],
    pad_row: usize,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<VarId> {
    if docs.is_empty() {
        return Err(Error::Contract("loss over an empty document batch".into()));
    }
    let mut acc: Option<VarId> = None;
    for (tokens, target) in docs {
        let fwd = doc_forward(g, vars, cfg, tokens, pad_row, train_mode, rng)?;
        let l = attention::loss_from_logits(g, fwd.logits, target, cfg.head)?;
        acc = Some(match acc {
            None => l,
            Some(a) => g.add(a, l),
        });
    }
    Ok(g.scale(acc.unwrap(), 1.0 / docs.len() as f64))
}
