//! Adam with linear warmup, cosine learning-rate decay and loss-side L2
//! regularization, plus the gradient accumulator used for slide-at-a-time
//! batching.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::model::ModelWeights;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr_max: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Loss-side L2 coefficient, added to gradients as `wd * w`.
    pub weight_decay: f64,
}

impl OptimConfig {
    pub fn new(lr_max: f64, warmup_epochs: usize, total_epochs: usize, weight_decay: f64) -> Self {
        OptimConfig {
            lr_max,
            warmup_epochs,
            total_epochs,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Linear warmup from zero over the first `warmup_epochs`, then cosine decay
/// to zero at `total_epochs`.
pub fn learning_rate(epoch: usize, cfg: &OptimConfig) -> f64 {
    if cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs {
        return cfg.lr_max * (epoch + 1) as f64 / cfg.warmup_epochs as f64;
    }
    let span = cfg.total_epochs.saturating_sub(cfg.warmup_epochs).max(1);
    let progress = (epoch - cfg.warmup_epochs) as f64 / span as f64;
    cfg.lr_max * 0.5 * (1.0 + math::cos(math::PI * progress))
}

/// Accumulates parameter gradients across slides between optimizer steps.
/// Entries follow the order of the trainable weights.
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<(String, Vec<f64>)>,
}

impl GradBuffer {
    pub fn zeros_like(weights: &ModelWeights) -> Self {
        GradBuffer {
            grads: weights
                .entries()
                .iter()
                .filter(|e| e.trainable)
                .map(|e| (e.name.clone(), vec![0.0; e.tensor.len()]))
                .collect(),
        }
    }

    /// Add one backward pass worth of gradients (as returned by
    /// `Graph::param_gradients`).
    pub fn accumulate(&mut self, grads: &[(String, Tensor)]) {
        assert_eq!(grads.len(), self.grads.len(), "gradient set mismatch");
        for ((name, slot), (gname, g)) in self.grads.iter_mut().zip(grads) {
            assert_eq!(name, gname, "gradient order mismatch");
            for (s, &v) in slot.iter_mut().zip(g.data()) {
                *s += v;
            }
        }
    }

    pub fn clear(&mut self) {
        for (_, slot) in &mut self.grads {
            slot.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn entries(&self) -> &[(String, Vec<f64>)] {
        &self.grads
    }

    #[cfg(test)]
    pub(crate) fn entries_mut(&mut self) -> &mut [(String, Vec<f64>)] {
        &mut self.grads
    }
}

/// Per-tensor first and second moments.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        let sizes: Vec<usize> = weights
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over all trainable tensors. L2 regularization is
    /// applied to the gradient before the moment updates.
    pub fn step(
        &mut self,
        weights: &mut ModelWeights,
        grads: &GradBuffer,
        lr: f64,
        cfg: &OptimConfig,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - math::powi(cfg.beta1, t);
        let bias2 = 1.0 - math::powi(cfg.beta2, t);
        let mut slot = 0;
        for entry in weights.entries_mut() {
            if !entry.trainable {
                continue;
            }
            let (gname, g) = &grads.entries()[slot];
            assert_eq!(&entry.name, gname, "optimizer order mismatch");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let data = entry.tensor.data_mut();
            for i in 0..data.len() {
                let grad = g[i] + cfg.weight_decay * data[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad * grad;
                let mhat = m[i] / bias1;
                let vhat = v[i] / bias2;
                data[i] -= lr * mhat / (math::sqrt(vhat) + cfg.eps);
            }
            slot += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, SamplingMode};
    use crate::rng::Rng;

    fn tiny_weights() -> ModelWeights {
        let cfg = ModelConfig {
            n_points: 16,
            d_in: 4,
            base_width: 4,
            k_neighbors: 4,
            sampling: SamplingMode::Fcs,
            ..ModelConfig::default()
        };
        let mut rng = Rng::stream(3, "init", &[]);
        ModelWeights::init(&cfg, &mut rng).unwrap()
    }

    #[test]
    fn warmup_then_cosine_decay() {
        let cfg = OptimConfig::new(1e-3, 10, 200, 0.0);
        assert!((learning_rate(0, &cfg) - 1e-4).abs() < 1e-18);
        assert!((learning_rate(9, &cfg) - 1e-3).abs() < 1e-18);
        assert!(learning_rate(10, &cfg) <= 1e-3);
        let late = learning_rate(199, &cfg);
        assert!(late > 0.0 && late < 1e-4, "late lr {late}");
        let mut prev = learning_rate(10, &cfg);
        for k in 11..200 {
            let lr = learning_rate(k, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bitwise_unchanged() {
        let mut w = tiny_weights();
        let before = w.clone();
        let cfg = OptimConfig::new(1e-3, 0, 10, 1e-5);
        let mut grads = GradBuffer::zeros_like(&w);
        for (_, g) in grads.entries_mut() {
            g.iter_mut().for_each(|v| *v = 0.5);
        }
        let mut adam = AdamState::new(&w);
        adam.step(&mut w, &grads, 0.0, &cfg);
        assert_eq!(w.max_abs_diff(&before), 0.0);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize f(w) = sum w^2 on one tensor by feeding grad = 2w
        let mut w = tiny_weights();
        let cfg = OptimConfig::new(0.05, 0, 100, 0.0);
        let mut adam = AdamState::new(&w);
        let mut grads = GradBuffer::zeros_like(&w);
        let norm =
            |w: &ModelWeights| -> f64 { w.get("f_c.w").data().iter().map(|&x| x * x).sum() };
        let start = norm(&w);
        for _ in 0..100 {
            grads.clear();
            let snapshot: Vec<f64> = w.get("f_c.w").data().to_vec();
            for (name, g) in grads.entries_mut() {
                if name == "f_c.w" {
                    for (slot, &x) in g.iter_mut().zip(&snapshot) {
                        *slot = 2.0 * x;
                    }
                }
            }
            adam.step(&mut w, &grads, 0.05, &cfg);
        }
        assert!(norm(&w) < start * 0.05, "{} -> {}", start, norm(&w));
    }

    #[test]
    fn weight_decay_shrinks_untouched_parameters() {
        let mut w = tiny_weights();
        let cfg = OptimConfig::new(0.01, 0, 50, 0.1);
        let mut adam = AdamState::new(&w);
        let grads = GradBuffer::zeros_like(&w);
        let start: f64 = w.get("head.l1.w").data().iter().map(|&x| x.abs()).sum();
        for _ in 0..50 {
            adam.step(&mut w, &grads, 0.01, &cfg);
        }
        let end: f64 = w.get("head.l1.w").data().iter().map(|&x| x.abs()).sum();
        assert!(end < start, "{start} -> {end}");
    }

    #[test]
    fn running_stats_are_not_touched_by_the_optimizer() {
        let mut w = tiny_weights();
        let cfg = OptimConfig::new(0.01, 0, 50, 0.1);
        let mut adam = AdamState::new(&w);
        let mut grads = GradBuffer::zeros_like(&w);
        for (_, g) in grads.entries_mut() {
            g.iter_mut().for_each(|v| *v = 1.0);
        }
        let mean_before = w.get("s1.group.bn1.mean").clone();
        adam.step(&mut w, &grads, 0.01, &cfg);
        assert_eq!(w.get("s1.group.bn1.mean"), &mean_before);
    }
}
