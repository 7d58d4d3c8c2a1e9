//! Finite-difference verification of the meta-gradient: the gradient of
//! the post-adaptation query loss with respect to the slow parameters,
//! differentiated through the inner gradient-descent steps.

use alloc::collections::BTreeMap;
extern crate alloc;

use ataml_core::attention::{HeadKind, Target};
use ataml_core::encoder::EmbeddingTable;
use ataml_core::graph::Graph;
use ataml_core::meta::{self, Algorithm, MetaConfig};
use ataml_core::model::{self, EncoderKind, ModelConfig};
use ataml_core::params::{ParamStore, Partition};
use ataml_core::tasks::{Episode, EpisodeDoc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderKind::None,
        attention: true,
        way: 2,
        d_emb: 3,
        lstm_hidden: 1,
        head: HeadKind::Softmax,
        train_embeddings: true,
        ..ModelConfig::default()
    }
}

fn doc(id: &str, tokens: &[usize], slot: usize) -> EpisodeDoc {
    EpisodeDoc {
        id: id.into(),
        tokens: tokens.to_vec(),
        target: Target::Single(slot),
    }
}

fn fixture() -> (ModelConfig, ParamStore, Partition, Episode, usize) {
    let cfg = linear_model();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let table = EmbeddingTable::random(8, cfg.d_emb, &mut rng);
    let pad = table.pad_row;
    let (params, partition) = model::init_params(&cfg, &table, &mut rng);
    let episode = Episode {
        way: 2,
        shot: 2,
        support: vec![
            doc("s0", &[0, 1, 2], 0),
            doc("s1", &[2, 3], 0),
            doc("s2", &[4, 5, 6], 1),
            doc("s3", &[6, 7], 1),
        ],
        query: vec![
            doc("q0", &[1, 2, 3], 0),
            doc("q1", &[0, 3], 0),
            doc("q2", &[5, 6, 7], 1),
            doc("q3", &[4, 7, 5], 1),
        ],
        slot_map: vec![0, 1],
    };
    (cfg, params, partition, episode, pad)
}

fn meta_cfg() -> MetaConfig {
    MetaConfig {
        algorithm: Algorithm::Maml,
        inner_steps: 2,
        inner_lr: 0.05,
        first_order: false,
        ..MetaConfig::default()
    }
}

/// The full two-level objective as a plain scalar function of the
/// parameters: adapt on support, evaluate on query.
fn objective(
    params: &ParamStore,
    partition: &Partition,
    cfg: &ModelConfig,
    mcfg: &MetaConfig,
    episode: &Episode,
    pad: usize,
) -> f64 {
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let slow = meta::param_leaves(&mut g, params, partition);
    let targets = meta::inner_target_names(mcfg, partition);
    let loss = meta::meta_episode_loss(
        &mut g,
        &slow,
        core::slice::from_ref(episode),
        cfg,
        mcfg,
        pad,
        &targets,
        &mut rng,
    )
    .unwrap();
    g.value(loss).scalar_value()
}

#[test]
fn linear_model_meta_gradient_matches_finite_differences() {
    let (cfg, params, partition, episode, pad) = fixture();
    let mcfg = meta_cfg();

    // analytic meta-gradient through both inner steps
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let slow = meta::param_leaves(&mut g, &params, &partition);
    let targets = meta::inner_target_names(&mcfg, &partition);
    let loss = meta::meta_episode_loss(
        &mut g,
        &slow,
        core::slice::from_ref(&episode),
        &cfg,
        &mcfg,
        pad,
        &targets,
        &mut rng,
    )
    .unwrap();
    let names: Vec<String> = partition.trainable().cloned().collect();
    let vars: Vec<_> = names.iter().map(|n| slow[n]).collect();
    let grads = g.backward(loss, &vars);
    let analytic: BTreeMap<String, Vec<f64>> = names
        .iter()
        .zip(&grads)
        .map(|(n, &v)| (n.clone(), g.value(v).data().to_vec()))
        .collect();

    let h = 1e-5;
    let mut checked = 0usize;
    for name in &names {
        let len = params.get(name).unwrap().len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let fd = (objective(&plus, &partition, &cfg, &mcfg, &episode, pad)
                - objective(&minus, &partition, &cfg, &mcfg, &episode, pad))
                / (2.0 * h);
            let an = analytic[name][i];
            let denom = an.abs().max(fd.abs()).max(1e-4);
            assert!(
                (an - fd).abs() / denom < 1e-3,
                "{name}[{i}]: analytic {an} vs finite difference {fd}"
            );
            checked += 1;
        }
    }
    assert!(checked > 20, "the check must cover every parameter element");
}

#[test]
fn first_order_meta_gradient_differs_from_exact_but_same_shape() {
    let (cfg, params, partition, episode, pad) = fixture();
    let exact = meta_cfg();
    let fo = MetaConfig {
        first_order: true,
        ..exact.clone()
    };

    let grad_of = |mcfg: &MetaConfig| -> BTreeMap<String, Vec<f64>> {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let slow = meta::param_leaves(&mut g, &params, &partition);
        let targets = meta::inner_target_names(mcfg, &partition);
        let loss = meta::meta_episode_loss(
            &mut g,
            &slow,
            core::slice::from_ref(&episode),
            &cfg,
            mcfg,
            pad,
            &targets,
            &mut rng,
        )
        .unwrap();
        let names: Vec<String> = partition.trainable().cloned().collect();
        let vars: Vec<_> = names.iter().map(|n| slow[n]).collect();
        let grads = g.backward(loss, &vars);
        names
            .iter()
            .zip(grads)
            .map(|(n, v)| (n.clone(), g.value(v).data().to_vec()))
            .collect()
    };

    let ge = grad_of(&exact);
    let gf = grad_of(&fo);
    assert_eq!(ge.len(), gf.len());
    let mut max_diff = 0.0f64;
    for (name, e) in &ge {
        let f = &gf[name];
        assert_eq!(e.len(), f.len());
        for (a, b) in e.iter().zip(f) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    // with two inner steps the curvature term is nonzero
    assert!(max_diff > 1e-8, "second-order term vanished unexpectedly");
}
