//! Sequence encoders: embedding lookup, dilated causal convolutions (TCN)
//! and a bidirectional LSTM.
//!
//! All encoders map a token sequence to a `[T, d_state]` matrix of states
//! together with a mask marking real (non-pad) positions. Masked positions
//! carry exactly zero state vectors and contribute zero gradient.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::math;
use crate::tensor::Tensor;

/// Token-to-row vocabulary plus the embedding matrix. The pad row embeds
/// to the zero vector and is never updated.
#[derive(Clone)]
pub struct EmbeddingTable {
    pub vocab: BTreeMap<String, usize>,
    pub matrix: Tensor,
    pub oov_row: usize,
    pub pad_row: usize,
}

impl EmbeddingTable {
    /// Builds a table from loaded rows; appends an out-of-vocabulary row
    /// (zeros) and a zero pad row at the end.
    pub fn from_rows(vocab: BTreeMap<String, usize>, mut rows: Vec<Vec<f64>>, dim: usize) -> Self {
        assert!(rows.iter().all(|r| r.len() == dim), "ragged embedding rows");
        let oov_row = rows.len();
        rows.push(vec![0.0; dim]);
        let pad_row = rows.len();
        rows.push(vec![0.0; dim]);
        let n = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        EmbeddingTable {
            vocab,
            matrix: Tensor::matrix(n, dim, data),
            oov_row,
            pad_row,
        }
    }

    /// Random fallback for runs without an embedding file, mapping token
    /// id `i` straight to row `i`. Rows are uniform with unit expected
    /// squared norm; these vectors are usually frozen inputs, so a small
    /// scale would starve every downstream gradient.
    pub fn random(n_tokens: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = math::sqrt(3.0 / dim as f64);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            rows.push((0..dim).map(|_| rng.gen_range(-bound..bound)).collect());
        }
        EmbeddingTable::from_rows(BTreeMap::new(), rows, dim)
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.rows()
    }

    /// Row for a surface token, falling back to the OOV row.
    pub fn row_of(&self, token: &str) -> usize {
        self.vocab.get(token).copied().unwrap_or(self.oov_row)
    }
}

/// Encoder states for one document: `[T, d_state]` plus the pad mask.
pub struct StateSequence {
    pub states: VarId,
    pub mask: Vec<bool>,
}

impl StateSequence {
    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `[T, cols]` tensor with ones at unmasked rows.
    pub fn row_mask(&self, cols: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.mask.len() * cols);
        for &m in &self.mask {
            let v = if m { 1.0 } else { 0.0 };
            for _ in 0..cols {
                data.push(v);
            }
        }
        Tensor::matrix(self.mask.len(), cols, data)
    }
}

/// Gathers embedding rows for a token-id sequence. Pad positions are
/// masked out and zeroed.
pub fn embed(g: &mut Graph, table: VarId, ids: &[usize], pad_row: usize) -> Result<StateSequence> {
    let n_rows = g.value(table).rows();
    if ids.is_empty() {
        return Err(Error::Contract("cannot embed an empty token sequence".into()));
    }
    for &id in ids {
        if id >= n_rows {
            return Err(Error::Contract(alloc::format!(
                "token id {id} out of embedding range {n_rows}"
            )));
        }
    }
    let mask: Vec<bool> = ids.iter().map(|&id| id != pad_row).collect();
    let gathered = g.row_gather(table, ids);
    let cols = g.value(gathered).cols();
    let seq = StateSequence {
        states: gathered,
        mask,
    };
    let masked = g.mul_mask(gathered, seq.row_mask(cols));
    Ok(StateSequence {
        states: masked,
        mask: seq.mask,
    })
}

/// TCN hyperparameters; defaults follow the two-layer dilated causal
/// configuration with filter size 3 and dilation rate 3.
#[derive(Clone, Debug, PartialEq)]
pub struct TcnConfig {
    pub layers: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub channels: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub residual: bool,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig {
            layers: 2,
            kernel_size: 3,
            dilation: 3,
            channels: 64,
            leaky_slope: 0.01,
            dropout: 0.5,
            residual: true,
        }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 1 || self.dilation < 1 || self.layers < 1 {
            return Err(Error::Contract(
                "kernel size, dilation and layer count must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract("dropout rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Receptive field of the final layer: 1 + Σ (k−1)·d over layers.
    pub fn receptive_field(&self) -> usize {
        1 + self.layers * (self.kernel_size - 1) * self.dilation
    }
}

/// Initializes TCN parameters into `params` under `tcn.l{i}.*` names and
/// returns them. A 1×1 projection is added where channel counts change.
pub fn init_tcn_params(
    cfg: &TcnConfig,
    d_in: usize,
    rng: &mut impl Rng,
) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    let mut cin = d_in;
    for l in 0..cfg.layers {
        let fan_in = cfg.kernel_size * cin;
        let bound = math::sqrt(1.0 / fan_in as f64);
        let w: Vec<f64> = (0..fan_in * cfg.channels)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        out.push((
            alloc::format!("tcn.l{l}.w"),
            Tensor::matrix(fan_in, cfg.channels, w),
        ));
        out.push((alloc::format!("tcn.l{l}.b"), Tensor::zeros(1, cfg.channels)));
        if cfg.residual && cin != cfg.channels {
            let pbound = math::sqrt(1.0 / cin as f64);
            let p: Vec<f64> = (0..cin * cfg.channels)
                .map(|_| rng.gen_range(-pbound..pbound))
                .collect();
            out.push((
                alloc::format!("tcn.l{l}.proj"),
                Tensor::matrix(cin, cfg.channels, p),
            ));
        }
        cin = cfg.channels;
    }
    out
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Tensor {
    let keep = 1.0 - rate;
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Two (by default) dilated causal convolution layers, each followed by
/// leaky ReLU, dropout (training only) and a residual connection. Output
/// positions depend only on inputs at positions ≤ t.
pub fn tcn_forward(
    g: &mut Graph,
    seq: &StateSequence,
    vars: &BTreeMap<String, VarId>,
    cfg: &TcnConfig,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<StateSequence> {
    cfg.validate()?;
    let t_len = seq.mask.len();
    let mut x = seq.states;
    for l in 0..cfg.layers {
        let w = *vars
            .get(&alloc::format!("tcn.l{l}.w"))
            .ok_or_else(|| Error::Contract(alloc::format!("missing parameter tcn.l{l}.w")))?;
        let b = *vars
            .get(&alloc::format!("tcn.l{l}.b"))
            .ok_or_else(|| Error::Contract(alloc::format!("missing parameter tcn.l{l}.b")))?;
        let cin = g.value(x).cols();
        if g.value(w).rows() != cfg.kernel_size * cin {
            return Err(Error::Contract(alloc::format!(
                "tcn.l{l}.w expects {} input rows, got {}",
                cfg.kernel_size * cin,
                g.value(w).rows()
            )));
        }
        // Left-padded taps: tap j looks back (k−1−j)·dilation steps.
        let mut taps = Vec::with_capacity(cfg.kernel_size);
        for j in 0..cfg.kernel_size {
            let off = ((cfg.kernel_size - 1 - j) * cfg.dilation) as isize;
            taps.push(g.shift_rows(x, off));
        }
        let patches = g.concat_cols(&taps);
        let conv = g.matmul(patches, w);
        let bias = g.broadcast_rows(b, t_len);
        let z = g.add(conv, bias);
        let mut h = g.leaky_relu(z, cfg.leaky_slope);
        if train_mode && cfg.dropout > 0.0 {
            let mask = dropout_mask(t_len, cfg.channels, cfg.dropout, rng);
            h = g.mul_mask(h, mask);
        }
        let out = if cfg.residual {
            let res = if cin == cfg.channels {
                x
            } else {
                let p = *vars.get(&alloc::format!("tcn.l{l}.proj")).ok_or_else(|| {
                    Error::Contract(alloc::format!("missing parameter tcn.l{l}.proj"))
                })?;
                g.matmul(x, p)
            };
            g.add(h, res)
        } else {
            h
        };
        // Re-zero pad positions so bias and residual never leak into them.
        x = g.mul_mask(out, seq.row_mask(cfg.channels));
    }
    Ok(StateSequence {
        states: x,
        mask: seq.mask.clone(),
    })
}

/// Initializes BiLSTM parameters under `lstm.{fw,bw}.*` names.
/// Gate layout inside the fused matrices is `[input, forget, cell, output]`.
pub fn init_bilstm_params(d_in: usize, hidden: usize, rng: &mut impl Rng) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for dir in ["fw", "bw"] {
        let bx = math::sqrt(1.0 / d_in as f64);
        let wx: Vec<f64> = (0..d_in * 4 * hidden).map(|_| rng.gen_range(-bx..bx)).collect();
        let bh = math::sqrt(1.0 / hidden as f64);
        let wh: Vec<f64> = (0..hidden * 4 * hidden)
            .map(|_| rng.gen_range(-bh..bh))
            .collect();
        out.push((
            alloc::format!("lstm.{dir}.wx"),
            Tensor::matrix(d_in, 4 * hidden, wx),
        ));
        out.push((
            alloc::format!("lstm.{dir}.wh"),
            Tensor::matrix(hidden, 4 * hidden, wh),
        ));
        out.push((alloc::format!("lstm.{dir}.b"), Tensor::zeros(1, 4 * hidden)));
    }
    out
}

fn lstm_direction(
    g: &mut Graph,
    seq: &StateSequence,
    wx: VarId,
    wh: VarId,
    b: VarId,
    hidden: usize,
    reverse: bool,
) -> Vec<VarId> {
    let t_len = seq.mask.len();
    let mut h = g.constant(Tensor::zeros(1, hidden));
    let mut c = g.constant(Tensor::zeros(1, hidden));
    let mut outputs = vec![h; t_len];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let x_t = g.row_gather(seq.states, &[t]);
        let xg = g.matmul(x_t, wx);
        let hg = g.matmul(h, wh);
        let sum = g.add(xg, hg);
        let gates = g.add(sum, b);
        let i_raw = g.slice_cols(gates, 0, hidden);
        let f_raw = g.slice_cols(gates, hidden, hidden);
        let c_raw = g.slice_cols(gates, 2 * hidden, hidden);
        let o_raw = g.slice_cols(gates, 3 * hidden, hidden);
        let i_g = g.sigmoid(i_raw);
        let f_g = g.sigmoid(f_raw);
        let c_g = g.tanh(c_raw);
        let o_g = g.sigmoid(o_raw);
        let fc = g.mul(f_g, c);
        let ic = g.mul(i_g, c_g);
        c = g.add(fc, ic);
        let tc = g.tanh(c);
        h = g.mul(o_g, tc);
        outputs[t] = h;
    }
    outputs
}

fn stack_rows(g: &mut Graph, rows: &[VarId]) -> VarId {
    // [1,d] rows → [T,d] via transpose / concat_cols / transpose
    let cols: Vec<VarId> = rows.iter().map(|&r| g.transpose(r)).collect();
    let wide = g.concat_cols(&cols);
    g.transpose(wide)
}

/// Bidirectional LSTM over the sequence; per-timestep output is the
/// concatenation of the forward and backward hidden states.
pub fn bilstm_forward(
    g: &mut Graph,
    seq: &StateSequence,
    vars: &BTreeMap<String, VarId>,
    hidden: usize,
) -> Result<StateSequence> {
    let get = |name: &str| -> Result<VarId> {
        vars.get(name)
            .copied()
            .ok_or_else(|| Error::Contract(alloc::format!("missing parameter {name}")))
    };
    let fw = lstm_direction(
        g,
        seq,
        get("lstm.fw.wx")?,
        get("lstm.fw.wh")?,
        get("lstm.fw.b")?,
        hidden,
        false,
    );
    let bw = lstm_direction(
        g,
        seq,
        get("lstm.bw.wx")?,
        get("lstm.bw.wh")?,
        get("lstm.bw.b")?,
        hidden,
        true,
    );
    let per_step: Vec<VarId> = fw
        .iter()
        .zip(bw.iter())
        .map(|(&f, &b)| g.concat_cols(&[f, b]))
        .collect();
    let stacked = stack_rows(g, &per_step);
    let masked = g.mul_mask(stacked, seq.row_mask(2 * hidden));
    Ok(StateSequence {
        states: masked,
        mask: seq.mask.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn var_map(g: &mut Graph, entries: Vec<(String, Tensor)>) -> BTreeMap<String, VarId> {
        entries
            .into_iter()
            .map(|(n, t)| (n, g.leaf(t)))
            .collect()
    }

    #[test]
    fn embed_pad_is_zero_and_masked() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = EmbeddingTable::random(3, 4, &mut rng);
        let tv = g.constant(table.matrix.clone());
        let seq = embed(&mut g, tv, &[table.pad_row], table.pad_row).unwrap();
        assert_eq!(seq.mask, vec![false]);
        assert!(g.value(seq.states).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_gather_identity_and_determinism() {
        let mut g = Graph::new();
        // one-hot row 1 = e_2
        let table = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 0., 1., 0., 0., 0.]);
        let tv = g.constant(table);
        let seq = embed(&mut g, tv, &[1, 1], 2).unwrap();
        let d = g.value(seq.states).data();
        assert_eq!(&d[0..3], &[0., 0., 1.]);
        assert_eq!(&d[0..3], &d[3..6]);
    }

    #[test]
    fn embed_rejects_out_of_range_id() {
        let mut g = Graph::new();
        let tv = g.constant(Tensor::zeros(3, 2));
        assert!(embed(&mut g, tv, &[7], 2).is_err());
    }

    #[test]
    fn tcn_identity_kernel_selects_current_timestep() {
        // x = [1,0,0,0,0], kernel [0,0,1] (current tap), 1 channel, 1 layer
        let mut g = Graph::new();
        let cfg = TcnConfig {
            layers: 1,
            kernel_size: 3,
            dilation: 1,
            channels: 1,
            leaky_slope: 1.0, // linear so the identity survives
            dropout: 0.0,
            residual: false,
        };
        let mut vars = BTreeMap::new();
        vars.insert(
            "tcn.l0.w".to_string(),
            g.leaf(Tensor::matrix(3, 1, vec![0.0, 0.0, 1.0])),
        );
        vars.insert("tcn.l0.b".to_string(), g.leaf(Tensor::zeros(1, 1)));
        let x = g.constant(Tensor::col(vec![1., 0., 0., 0., 0.]));
        let seq = StateSequence {
            states: x,
            mask: vec![true; 5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = tcn_forward(&mut g, &seq, &vars, &cfg, false, &mut rng).unwrap();
        assert_eq!(g.value(out.states).data(), &[1., 0., 0., 0., 0.]);
    }

    #[test]
    fn tcn_zero_input_zero_bias_gives_zero_output() {
        let mut g = Graph::new();
        let cfg = TcnConfig {
            channels: 4,
            dropout: 0.0,
            ..TcnConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vars = var_map(&mut g, init_tcn_params(&cfg, 4, &mut rng));
        let x = g.constant(Tensor::zeros(6, 4));
        let seq = StateSequence {
            states: x,
            mask: vec![true; 6],
        };
        let out = tcn_forward(&mut g, &seq, &vars, &cfg, false, &mut rng).unwrap();
        assert!(g.value(out.states).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_receptive_field_is_13() {
        assert_eq!(TcnConfig::default().receptive_field(), 13);
    }

    #[test]
    fn tcn_causality_future_perturbation_leaves_past_bitwise_unchanged() {
        let cfg = TcnConfig {
            channels: 3,
            dropout: 0.0,
            ..TcnConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = init_tcn_params(&cfg, 2, &mut rng);
        let t_len = 9;
        let base: Vec<f64> = (0..t_len * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let run = |input: Vec<f64>| {
            let mut g = Graph::new();
            let vars = var_map(&mut g, params.clone());
            let x = g.constant(Tensor::matrix(t_len, 2, input));
            let seq = StateSequence {
                states: x,
                mask: vec![true; t_len],
            };
            let mut drng = ChaCha8Rng::seed_from_u64(0);
            let out = tcn_forward(&mut g, &seq, &vars, &cfg, false, &mut drng).unwrap();
            g.value(out.states).data().to_vec()
        };
        let a = run(base.clone());
        let mut perturbed = base.clone();
        let t_changed = 5;
        perturbed[t_changed * 2] += 0.5;
        let b = run(perturbed);
        for t in 0..t_changed {
            for c in 0..3 {
                assert_eq!(a[t * 3 + c].to_bits(), b[t * 3 + c].to_bits());
            }
        }
    }

    #[test]
    fn bilstm_zero_input_zero_bias_gives_zero_states() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = init_bilstm_params(3, 4, &mut rng);
        for (_, t) in params.iter_mut() {
            *t = t.zeros_like();
        }
        let vars = var_map(&mut g, params);
        let x = g.constant(Tensor::zeros(4, 3));
        let seq = StateSequence {
            states: x,
            mask: vec![true; 4],
        };
        let out = bilstm_forward(&mut g, &seq, &vars, 4).unwrap();
        assert!(g.value(out.states).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilstm_single_step_concatenates_directions() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = init_bilstm_params(2, 3, &mut rng);
        let vars = var_map(&mut g, params);
        let x = g.constant(Tensor::matrix(1, 2, vec![0.4, -0.2]));
        let seq = StateSequence {
            states: x,
            mask: vec![true],
        };
        let out = bilstm_forward(&mut g, &seq, &vars, 3).unwrap();
        let v = g.value(out.states);
        assert_eq!(v.shape(), &[1, 6]);
    }

    #[test]
    fn lstm_cell_matches_hand_stepped_reference() {
        // One forward step on random parameters against a scalar-loop
        // reference implementation of the cell equations.
        let hidden = 3;
        let d_in = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = init_bilstm_params(d_in, hidden, &mut rng);
        let x_t = vec![0.7, -0.3];

        let mut g = Graph::new();
        let vars = var_map(&mut g, params.clone());
        let xv = g.constant(Tensor::matrix(1, d_in, x_t.clone()));
        let seq = StateSequence {
            states: xv,
            mask: vec![true],
        };
        let fw = lstm_direction(
            &mut g,
            &seq,
            vars["lstm.fw.wx"],
            vars["lstm.fw.wh"],
            vars["lstm.fw.b"],
            hidden,
            false,
        );
        let got = g.value(fw[0]).data().to_vec();

        let lookup = |name: &str| -> &Tensor {
            &params.iter().find(|(n, _)| n == name).unwrap().1
        };
        let wx = lookup("lstm.fw.wx");
        let b = lookup("lstm.fw.b");
        // h_prev = c_prev = 0, so Wh drops out of the first step.
        let mut expect = vec![0.0; hidden];
        for j in 0..hidden {
            let gate = |slot: usize| -> f64 {
                let col = slot * hidden + j;
                let mut z = b.get(0, col);
                for (i, &xi) in x_t.iter().enumerate() {
                    z += xi * wx.get(i, col);
                }
                z
            };
            let i_g = math::sigmoid(gate(0));
            let c_g = math::tanh(gate(2));
            let o_g = math::sigmoid(gate(3));
            let c_new = i_g * c_g;
            expect[j] = o_g * math::tanh(c_new);
        }
        for j in 0..hidden {
            assert!((got[j] - expect[j]).abs() < 1e-12);
        }
    }
}
