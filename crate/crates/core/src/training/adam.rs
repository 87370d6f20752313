//! Adam with L2 weight decay folded into the gradient, plus global-norm clipping.

use crate::network::NetworkParameters;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: NetworkParameters,
    pub v: NetworkParameters,
    pub steps: u64,
}

impl Adam {
    pub fn new(params: &NetworkParameters) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            steps: 0,
        }
    }

    /// One update of `params` with gradient `grads`. Row 0 of the item table
    /// stays zero.
    pub fn step(&mut self, params: &mut NetworkParameters, grads: &NetworkParameters, cfg: &AdamConfig) {
        self.steps += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.steps as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.steps as i32);
        let blocks = params.blocks_mut();
        let ms = self.m.blocks_mut();
        let vs = self.v.blocks_mut();
        for (((p, g), m), v) in blocks.into_iter().zip(grads.blocks()).zip(ms).zip(vs) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + cfg.weight_decay * *p;
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            });
        }
        params.freeze_padding();
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping. A non-positive `max_norm` disables clipping.
pub fn clip_grad_norm(grads: &mut NetworkParameters, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / (norm + 1e-6));
    }
    norm
}
