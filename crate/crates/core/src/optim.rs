//! Gradient post-processing and the Adam meta-optimizer.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::math;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Named gradients, one per differentiation target, shaped like the
/// parameters they belong to.
pub type GradMap = BTreeMap<String, Tensor>;

/// Global L2 norm across every gradient in the map.
pub fn global_norm(grads: &GradMap) -> f64 {
    math::sqrt(grads.values().map(Tensor::sq_norm).sum())
}

/// Rescales all gradients by `max_norm / global_norm` when the global norm
/// exceeds `max_norm`; otherwise leaves them untouched.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            *g = g.map(|v| v * s);
        }
    }
}

/// First/second moment estimates for Adam, keyed like the parameters.
#[derive(Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update with bias correction, applied in place to every
/// parameter named in `grads`. Panics when a gradient's shape disagrees
/// with its parameter.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &GradMap,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert!(lr > 0.0, "learning rate must be positive");
    state.t += 1;
    let bc1 = 1.0 - math::powi(beta1, state.t as i32);
    let bc2 = 1.0 - math::powi(beta2, state.t as i32);
    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .unwrap_or_else(|| panic!("gradient for unknown parameter `{name}`"));
        assert_eq!(
            p.shape(),
            g.shape(),
            "gradient shape {:?} mismatches parameter `{name}` shape {:?}",
            g.shape(),
            p.shape()
        );
        let m = state.m.entry(name.clone()).or_insert_with(|| g.zeros_like());
        *m = m.zip_map(g, |m, g| beta1 * m + (1.0 - beta1) * g);
        let v = state.v.entry(name.clone()).or_insert_with(|| g.zeros_like());
        *v = v.zip_map(g, |v, g| beta2 * v + (1.0 - beta2) * g * g);
        let (md, vd) = (m.data(), v.data());
        for (i, pv) in p.data_mut().iter_mut().enumerate() {
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            *pv -= lr * mhat / (math::sqrt(vhat) + eps);
        }
    }
}
