//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::fusion::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    skipped: u64,
}

impl AdamWState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamWState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Number of updates skipped because of non-finite gradients.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

/// Apply one update. Returns `false` (and leaves parameters untouched) when
/// any gradient entry is non-finite.
pub fn adamw_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamWState, lr: f64, cfg: &AdamWConfig) -> bool {
    if !grads.all_finite() {
        state.skipped += 1;
        log::warn!("non-finite gradient, skipping step ({} skipped so far)", state.skipped);
        return false;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] = p[k] * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{ClassifierHead, Pooling};

    fn head() -> ClassifierHead {
        ClassifierHead::init(3, 2, Pooling::Mean, 7).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = head();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..5 {
            assert!(adamw_step(&mut p, &g, &mut st, 1e-3, &cfg));
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = head();
        let before = p.clone();
        let mut g = p.zeros_like();
        for t in g.tensors_mut() {
            t.fill(1.0);
        }
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut p, &g, &mut st, 1e-3, &cfg);
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let expected = 1e-3 / (1.0 + 1e-8);
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!(((y - x) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pure_decay_shrinks() {
        let mut p = head();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        adamw_step(&mut p, &g, &mut st, 0.1, &cfg);
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = head();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors_mut()[0][0] = f64::NAN;
        let mut st = AdamWState::new(&p);
        assert!(!adamw_step(&mut p, &g, &mut st, 0.1, &AdamWConfig::default()));
        assert_eq!((st.skipped(), st.steps()), (1, 0));
        assert_eq!(p, before);
    }
}
