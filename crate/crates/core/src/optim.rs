//! Adam optimizer and global-norm gradient clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update over `(name, tensor)` pairs. Each
    /// tensor's accumulated gradient is consumed; tensors without a gradient
    /// are skipped (the caller excludes frozen groups). The step counter
    /// increments exactly once per call.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor)>,
    ) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(t as i32);
        let bias2 = 1.0 - beta2.powi(t as i32);
        for (name, tensor) in params {
            let n = tensor.numel();
            let Some(grad) = tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            if grad.len() != n {
                return Err(Error::shape(format!(
                    "gradient for `{name}` has {} entries, parameter has {n}",
                    grad.len()
                )));
            }
            let entry = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if entry.m.len() != n {
                return Err(Error::shape(format!(
                    "optimizer state for `{name}` has {} entries, parameter has {n}",
                    entry.m.len()
                )));
            }
            let values = tensor.values_mut();
            for i in 0..n {
                let g = grad[i];
                entry.m[i] = beta1 * entry.m[i] + (1.0 - beta1) * g;
                entry.v[i] = beta2 * entry.v[i] + (1.0 - beta2) * g * g;
                let m_hat = entry.m[i] / bias1;
                let v_hat = entry.v[i] / bias2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Result of one clipping pass; `post_norm` is the norm actually applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipReport {
    pub pre_norm: f64,
    pub post_norm: f64,
    pub clipped: bool,
}

/// Scales all gradients by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`. An empty set is a no-op.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> Result<ClipReport> {
    if max_norm <= 0.0 {
        return Err(Error::config(format!(
            "clip max_norm must be positive, got {max_norm}"
        )));
    }
    let sq: f64 = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let pre_norm = sq.sqrt();
    if pre_norm <= max_norm {
        return Ok(ClipReport {
            pre_norm,
            post_norm: pre_norm,
            clipped: false,
        });
    }
    let scale = max_norm / pre_norm;
    for g in grads.iter_mut() {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok(ClipReport {
        pre_norm,
        post_norm: pre_norm * scale,
        clipped: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn param(values: Vec<f64>) -> Tensor {
        Tensor::row(values)
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut t = param(vec![1.0, -2.0]);
        t.set_grad(vec![0.0, 0.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.update([("w", &mut t)]).unwrap();
        assert_eq!(t.values(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn unit_gradient_first_step_moves_by_lr() {
        let mut t = param(vec![0.0]);
        t.set_grad(vec![1.0]).unwrap();
        let config = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(config);
        adam.update([("w", &mut t)]).unwrap();
        let delta = t.values()[0];
        // m_hat / sqrt(v_hat) = 1 at t=1 up to eps
        assert!((delta + 0.01).abs() < 0.01 * 1e-3, "delta = {delta}");
    }

    #[test]
    fn identical_gradients_produce_identical_updates() {
        let mut a = param(vec![0.5]);
        let mut b = param(vec![0.5]);
        a.set_grad(vec![0.3]).unwrap();
        b.set_grad(vec![0.3]).unwrap();
        let mut adam = AdamState::new(AdamConfig::default());
        adam.update([("a", &mut a), ("b", &mut b)]).unwrap();
        assert_eq!(a.values()[0].to_bits(), b.values()[0].to_bits());
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut t = param(vec![0.1, 0.2, 0.3]);
            let mut adam = AdamState::new(AdamConfig::default());
            for step in 0..5 {
                t.set_grad(vec![0.1 * step as f64, -0.2, 0.05]).unwrap();
                adam.update([("w", &mut t)]).unwrap();
            }
            t.values().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_halves_when_norm_is_twice_the_limit() {
        let mut g = vec![0.6, 0.8]; // norm 1.0
        let report = clip_global_norm(&mut [&mut g], 0.5).unwrap();
        assert!(report.clipped);
        assert!((g[0] - 0.3).abs() < 1e-12);
        assert!((g[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn clip_leaves_small_gradients_untouched() {
        let mut g = vec![0.3];
        let report = clip_global_norm(&mut [&mut g], 0.5).unwrap();
        assert!(!report.clipped);
        assert_eq!(g, vec![0.3]);
    }

    #[test]
    fn clip_three_four_to_half_norm() {
        let mut g = vec![3.0, 4.0]; // norm 5
        clip_global_norm(&mut [&mut g], 0.5).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-12);
        assert!((g[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn clip_empty_set_is_noop() {
        let report = clip_global_norm(&mut [], 0.5).unwrap();
        assert!(!report.clipped);
        assert_eq!(report.pre_norm, 0.0);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(values in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let mut once = values.clone();
            clip_global_norm(&mut [&mut once], 0.5).unwrap();
            let mut twice = once.clone();
            clip_global_norm(&mut [&mut twice], 0.5).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn post_clip_norm_is_bounded(values in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let mut g = values;
            let report = clip_global_norm(&mut [&mut g], 0.5).unwrap();
            prop_assert!(report.post_norm <= 0.5 + 1e-9);
            let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= 0.5 + 1e-9);
        }
    }
}
