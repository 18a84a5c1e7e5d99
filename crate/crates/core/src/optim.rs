//! Adam with bias correction, and global-norm gradient clipping.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update of every trainable parameter from its stored gradient.
/// Missing gradients count as zero.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for (idx, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let tensor = store.get_mut(id);
        if !tensor.trainable() {
            continue;
        }
        let grad: Vec<f64> = match tensor.grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; tensor.numel()],
        };
        let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
        for (i, w) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
}

/// Global L2 norm of all stored gradients.
pub fn global_grad_norm(store: &ParamStore) -> f64 {
    let sq: f64 = store
        .iter()
        .filter_map(|p| p.tensor.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum();
    libm::sqrt(sq)
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_grad_norm(store);
    if norm > max_norm {
        let s = max_norm / norm;
        for id in store.ids().collect::<Vec<_>>() {
            if let Some(g) = store.get(id).grad() {
                let scaled: Vec<f64> = g.iter().map(|x| x * s).collect();
                let t = store.get_mut(id);
                t.zero_grad();
                t.accumulate_grad(&scaled);
            }
        }
    }
    norm
}
