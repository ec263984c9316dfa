use serde::{Deserialize, Serialize};

use super::ParamStore;

/// Inverse-square-root decay with linear warmup, rescaled so that the
/// rate at `warmup_steps` equals `peak_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoamSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub model_dim: usize,
}

impl Default for NoamSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 0.001,
            warmup_steps: 4000,
            model_dim: 128,
        }
    }
}

impl NoamSchedule {
    /// Learning rate at a 1-based step.
    pub fn lr(&self, step: u64) -> f64 {
        let step = step.max(1) as f64;
        let warmup = self.warmup_steps.max(1) as f64;
        // The classic d^-0.5 factor cancels against the peak normalisation.
        let noam = |s: f64| f64::min(s.powf(-0.5), s * warmup.powf(-1.5));
        self.peak_lr * noam(step) / noam(warmup)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Strength of the `λ‖θ‖²` penalty; its gradient `2λθ` is folded in here.
    pub l2: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 1e-6,
        }
    }
}

impl Adam {
    /// Applies one update from the accumulated gradients and clears them.
    /// Returns the learning rate used.
    pub fn step(&self, store: &mut ParamStore, schedule: &NoamSchedule) -> f64 {
        let t = store.bump_step();
        let lr = schedule.lr(t);
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for p in store.iter_mut() {
            let values = p.value.data_mut();
            let grads = p.grad.data_mut();
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            for i in 0..values.len() {
                let g = grads[i] + 2.0 * self.l2 * values[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                grads[i] = 0.0;
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_peaks_at_warmup() {
        let s = NoamSchedule {
            peak_lr: 0.001,
            warmup_steps: 100,
            model_dim: 64,
        };
        assert!((s.lr(100) - 0.001).abs() < 1e-15);
        for step in 1..400 {
            assert!(s.lr(step) > 0.0);
            assert!(s.lr(step) <= s.lr(100) + 1e-18);
        }
        assert!(s.lr(50) < s.lr(99));
        assert!(s.lr(200) < s.lr(101));
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.0, -0.25] {
            let mut store = ParamStore::new();
            let id = store.insert("theta", Tensor::scalar(1.0)).unwrap();
            store.get_mut(id).grad = Tensor::scalar(g);
            let adam = Adam { l2: 0.0, ..Adam::default() };
            let sched = NoamSchedule { peak_lr: 0.01, warmup_steps: 1, model_dim: 1 };
            let lr = adam.step(&mut store, &sched);
            let delta = store.value(id).data()[0] - 1.0;
            assert!((delta + lr * g.signum()).abs() < 1e-8, "delta {delta}");
        }
    }

    #[test]
    fn pure_l2_flow_shrinks_magnitude() {
        let mut store = ParamStore::new();
        let id = store
            .insert("w", Tensor::row_vector(vec![0.8, -0.5, 0.3]))
            .unwrap();
        let adam = Adam { l2: 0.1, ..Adam::default() };
        let sched = NoamSchedule { peak_lr: 0.01, warmup_steps: 1, model_dim: 1 };
        let mut prev: Vec<f64> = store.value(id).data().iter().map(|x| x.abs()).collect();
        for _ in 0..20 {
            adam.step(&mut store, &sched);
            let now: Vec<f64> = store.value(id).data().iter().map(|x| x.abs()).collect();
            for (a, b) in now.iter().zip(&prev) {
                assert!(a < b);
            }
            prev = now;
        }
    }
}
