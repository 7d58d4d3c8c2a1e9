//! The attentive base learner: feedforward attention over encoder states,
//! document vector construction, and the classification heads.
//!
//! Attention scores are the raw inner products α_t = θ_ATT·s_t — there is
//! deliberately no softmax over positions. The rescaled states are averaged
//! over the unmasked length to form the document vector.

use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::StateSequence;
use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::tensor::Tensor;

/// Which classifier sits on top of the document vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Mutually exclusive labels, categorical cross-entropy.
    Softmax,
    /// Independent labels, mean binary cross-entropy, 0.5 threshold.
    Sigmoid,
}

/// Gold labels for one document, episode-local.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// One-hot slot index for single-label classification.
    Single(usize),
    /// Binary indicator per episode slot for multi-label classification.
    Multi(Vec<bool>),
}

/// Forward-pass attention record for one document. `None` marks masked
/// (pad) positions; the values are the raw α_t, never recomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub token_rows: Vec<usize>,
    pub alphas: Vec<Option<f64>>,
}

/// Feedforward attention: α_t = θ_ATT·s_t, s'_t = α_t·s_t, and the
/// document vector c = (1/T)·Σ s'_t where T counts unmasked positions.
///
/// Returns the `[1, d]` document vector and the `[T, 1]` score column.
pub fn attend(g: &mut Graph, seq: &StateSequence, theta_att: VarId) -> Result<(VarId, VarId)> {
    let t_count = seq.unmasked_count();
    if t_count == 0 {
        return Err(Error::Contract(
            "attend over a fully masked sequence".into(),
        ));
    }
    let d = g.value(seq.states).cols();
    if g.value(theta_att).shape() != [d, 1] {
        return Err(Error::Contract(alloc::format!(
            "attention vector shape {:?} does not match state dim {d}",
            g.value(theta_att).shape()
        )));
    }
    let alphas = g.matmul(seq.states, theta_att);
    let wide = g.broadcast_cols(alphas, d);
    let rescaled = g.mul(wide, seq.states);
    let summed = g.sum_rows(rescaled);
    let c = g.scale(summed, 1.0 / t_count as f64);
    Ok((c, alphas))
}

/// Plain mean pooling for the no-attention ablation: c = (1/T)·Σ s_t.
pub fn mean_pool(g: &mut Graph, seq: &StateSequence) -> Result<VarId> {
    let t_count = seq.unmasked_count();
    if t_count == 0 {
        return Err(Error::Contract(
            "mean_pool over a fully masked sequence".into(),
        ));
    }
    let summed = g.sum_rows(seq.states);
    Ok(g.scale(summed, 1.0 / t_count as f64))
}

/// Extracts the per-token trace from the forward-pass attention values.
pub fn trace_from(g: &Graph, alphas: VarId, seq_mask: &[bool], token_rows: &[usize]) -> AttentionTrace {
    let vals = g.value(alphas);
    AttentionTrace {
        token_rows: token_rows.to_vec(),
        alphas: seq_mask
            .iter()
            .enumerate()
            .map(|(t, &m)| if m { Some(vals.get(t, 0)) } else { None })
            .collect(),
    }
}

/// Raw classifier scores: c·θ_W + bias, shape `[1, N]`.
pub fn logits(g: &mut Graph, c: VarId, w: VarId, b: VarId) -> VarId {
    let z = g.matmul(c, w);
    g.add(z, b)
}

/// Prediction probabilities from logits: a probability simplex for the
/// softmax head, independent probabilities in (0,1) for the sigmoid head.
pub fn classify(g: &mut Graph, z: VarId, head: HeadKind) -> VarId {
    match head {
        HeadKind::Softmax => {
            let m = g
                .value(z)
                .data()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let shifted = g.add_const(z, -m);
            let e = g.exp(shifted);
            let s = g.sum_all(e);
            let r = g.recip(s);
            g.smul(r, e)
        }
        HeadKind::Sigmoid => g.sigmoid(z),
    }
}

/// Loss from logits, in numerically stable logit form.
///
/// Softmax head: categorical cross-entropy, `logsumexp(z) − z_y`.
/// Sigmoid head: mean over labels of `max(z,0) − z·y + ln(1+exp(−|z|))`.
pub fn loss_from_logits(g: &mut Graph, z: VarId, target: &Target, head: HeadKind) -> Result<VarId> {
    let n = g.value(z).cols();
    match (head, target) {
        (HeadKind::Softmax, Target::Single(slot)) => {
            if *slot >= n {
                return Err(Error::Contract(alloc::format!(
                    "label slot {slot} out of {n} classes"
                )));
            }
            let m = g
                .value(z)
                .data()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let shifted = g.add_const(z, -m);
            let e = g.exp(shifted);
            let s = g.sum_all(e);
            let lse_shift = g.ln(s);
            let lse = g.add_const(lse_shift, m);
            let mut onehot = alloc::vec![0.0; n];
            onehot[*slot] = 1.0;
            let zy = {
                let oh = g.constant(Tensor::row(onehot));
                g.dot(z, oh)
            };
            Ok(g.sub(lse, zy))
        }
        (HeadKind::Sigmoid, Target::Multi(y)) => {
            if y.len() != n {
                return Err(Error::Contract(alloc::format!(
                    "label vector length {} does not match {n} classes",
                    y.len()
                )));
            }
            let zv = g.value(z).data().to_vec();
            let pos_mask = Tensor::row(zv.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect());
            let neg_abs_mask =
                Tensor::row(zv.iter().map(|&v| if v > 0.0 { -1.0 } else { 1.0 }).collect());
            let y_mask = Tensor::row(y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
            let relu_z = g.mul_mask(z, pos_mask);
            let zy = g.mul_mask(z, y_mask);
            let neg_abs = g.mul_mask(z, neg_abs_mask);
            let e = g.exp(neg_abs);
            let e1 = g.add_const(e, 1.0);
            let softplus = g.ln(e1);
            let a = g.sub(relu_z, zy);
            let per_label = g.add(a, softplus);
            let total = g.sum_all(per_label);
            Ok(g.scale(total, 1.0 / n as f64))
        }
        _ => Err(Error::Contract(
            "head kind and target kind do not match".into(),
        )),
    }
}

/// Multi-label decision rule: predict label j iff p_j > 0.5, strictly.
/// Ties at exactly 0.5 predict negative; no calibration.
pub fn predict_multilabel(probs: &Tensor) -> Vec<bool> {
    probs.data().iter().map(|&p| p > 0.5).collect()
}

/// Single-label decision rule: the argmax slot. Total ordering keeps the
/// rule defined even if a diverged model emits NaN scores.
pub fn predict_single(probs: &Tensor) -> usize {
    probs
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Serialized trace record consumed by the reporting pipeline.
#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub doc_id: String,
    pub trace: AttentionTrace,
    pub gold: Target,
    pub prediction: Target,
    pub correct: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn seq_from(g: &mut Graph, t: Tensor, mask: Vec<bool>) -> StateSequence {
        let states = g.constant(t);
        StateSequence { states, mask }
    }

    #[test]
    fn zero_attention_vector_gives_zero_document() {
        let mut g = Graph::new();
        let seq = seq_from(
            &mut g,
            Tensor::matrix(2, 2, vec![1., 0., 0., 2.]),
            vec![true, true],
        );
        let theta = g.leaf(Tensor::col(vec![0.0, 0.0]));
        let (c, alphas) = attend(&mut g, &seq, theta).unwrap();
        assert!(g.value(alphas).data().iter().all(|&a| a == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attend_matches_hand_evaluation() {
        // states [[1,0],[0,2]], θ_ATT=[1,1] → α=[1,2], c=[0.5,2.0]
        let mut g = Graph::new();
        let seq = seq_from(
            &mut g,
            Tensor::matrix(2, 2, vec![1., 0., 0., 2.]),
            vec![true, true],
        );
        let theta = g.leaf(Tensor::col(vec![1.0, 1.0]));
        let (c, alphas) = attend(&mut g, &seq, theta).unwrap();
        assert_eq!(g.value(alphas).data(), &[1.0, 2.0]);
        assert_eq!(g.value(c).data(), &[0.5, 2.0]);
    }

    #[test]
    fn attend_single_step_reduces_to_scaled_state() {
        let mut g = Graph::new();
        let u = vec![0.3, -0.7, 1.1];
        let seq = seq_from(&mut g, Tensor::matrix(1, 3, u.clone()), vec![true]);
        let theta = g.leaf(Tensor::col(vec![0.5, 1.5, -2.0]));
        let (c, _) = attend(&mut g, &seq, theta).unwrap();
        let alpha = 0.5 * u[0] + 1.5 * u[1] - 2.0 * u[2];
        for j in 0..3 {
            assert!((g.value(c).data()[j] - alpha * u[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_rejects_fully_masked_sequence() {
        let mut g = Graph::new();
        let seq = seq_from(&mut g, Tensor::zeros(2, 2), vec![false, false]);
        let theta = g.leaf(Tensor::col(vec![1.0, 1.0]));
        assert!(attend(&mut g, &seq, theta).is_err());
    }

    #[test]
    fn attend_is_degree_two_homogeneous_in_states() {
        let states = vec![0.4, -0.9, 1.2, 0.1, 0.8, -0.5];
        let k = 3.0;
        let run = |scale: f64| {
            let mut g = Graph::new();
            let scaled: Vec<f64> = states.iter().map(|&v| v * scale).collect();
            let seq = seq_from(&mut g, Tensor::matrix(3, 2, scaled), vec![true; 3]);
            let theta = g.leaf(Tensor::col(vec![0.7, -1.3]));
            let (c, _) = attend(&mut g, &seq, theta).unwrap();
            g.value(c).data().to_vec()
        };
        let base = run(1.0);
        let scaled = run(k);
        for j in 0..2 {
            assert!((scaled[j] - k * k * base[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![0.0; 5]));
        let p = classify(&mut g, z, HeadKind::Softmax);
        for &v in g.value(p).data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_of_zero_logits_is_half() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![0.0, 0.0]));
        let p = classify(&mut g, z, HeadKind::Sigmoid);
        assert!(g.value(p).data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn softmax_closed_form_ln2() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![2.0_f64.ln(), 0.0]));
        let p = classify(&mut g, z, HeadKind::Softmax);
        assert!((g.value(p).data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((g.value(p).data()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_with_positive_entries() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![3.2, -50.0, 0.7, 12.0]));
        let p = classify(&mut g, z, HeadKind::Softmax);
        let s: f64 = g.value(p).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(g.value(p).data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn uniform_softmax_loss_is_ln_n() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![0.0; 5]));
        let l = loss_from_logits(&mut g, z, &Target::Single(3), HeadKind::Softmax).unwrap();
        assert!((g.value(l).scalar_value() - 5.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_drives_loss_to_zero() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![30.0, 0.0, 0.0]));
        let l = loss_from_logits(&mut g, z, &Target::Single(0), HeadKind::Softmax).unwrap();
        assert!(g.value(l).scalar_value() < 1e-12);
        assert!(g.value(l).scalar_value() >= 0.0);
    }

    #[test]
    fn sigmoid_loss_at_zero_logits_is_ln2() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![0.0, 0.0, 0.0]));
        let l = loss_from_logits(
            &mut g,
            z,
            &Target::Multi(vec![true, false, true]),
            HeadKind::Sigmoid,
        )
        .unwrap();
        assert!((g.value(l).scalar_value() - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_loss_is_stable_for_large_logits() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![500.0, -500.0]));
        let l = loss_from_logits(
            &mut g,
            z,
            &Target::Multi(vec![true, false]),
            HeadKind::Sigmoid,
        )
        .unwrap();
        assert!(g.value(l).scalar_value().abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_mismatched_label_width() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::row(vec![0.0, 0.0]));
        assert!(loss_from_logits(
            &mut g,
            z,
            &Target::Multi(vec![true, false, false]),
            HeadKind::Sigmoid
        )
        .is_err());
        assert!(loss_from_logits(&mut g, z, &Target::Single(5), HeadKind::Softmax).is_err());
    }

    #[test]
    fn multilabel_threshold_is_strict() {
        assert_eq!(
            predict_multilabel(&Tensor::row(vec![0.6, 0.4])),
            vec![true, false]
        );
        assert_eq!(
            predict_multilabel(&Tensor::row(vec![0.5, 0.5])),
            vec![false, false]
        );
        assert_eq!(
            predict_multilabel(&Tensor::row(vec![0.51, 0.49, 0.99])),
            vec![true, false, true]
        );
    }

    #[test]
    fn trace_preserves_forward_alphas_and_masks() {
        let mut g = Graph::new();
        let seq = seq_from(
            &mut g,
            Tensor::matrix(3, 2, vec![1., 0., 0., 2., 0., 0.]),
            vec![true, true, false],
        );
        let theta = g.leaf(Tensor::col(vec![1.0, 1.0]));
        let (_, alphas) = attend(&mut g, &seq, theta).unwrap();
        let trace = trace_from(&g, alphas, &seq.mask, &[10, 11, 12]);
        assert_eq!(trace.alphas, vec![Some(1.0), Some(2.0), None]);
        assert_eq!(trace.token_rows, vec![10, 11, 12]);
    }
}
