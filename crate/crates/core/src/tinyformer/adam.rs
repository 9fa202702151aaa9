use serde::{Deserialize, Serialize};

use super::{cst, ModelWeights, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments, laid out like the trainable tensors of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, weights: &ModelWeights<T>) -> Self {
        let shapes: Vec<Vec<T>> = weights
            .trainable()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            cfg,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    /// One bias-corrected update of every trainable tensor.
    pub fn step(&mut self, weights: &mut ModelWeights<T>, grads: &ModelWeights<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = cst::<T>(1.0 - b1.powi(t));
        let bc2 = cst::<T>(1.0 - b2.powi(t));
        let (b1, b2) = (cst::<T>(b1), cst::<T>(b2));
        let (lr, eps) = (cst::<T>(self.cfg.lr), cst::<T>(self.cfg.eps));
        let one = T::one();
        let gs = grads.trainable();
        for (((w, g), m), v) in weights
            .trainable_mut()
            .into_iter()
            .zip(gs)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinyformer::{ModelConfig, PeKind};

    fn tiny() -> ModelConfig {
        ModelConfig {
            d: 6,
            max_len: 3,
            d_model: 4,
            heads: 2,
            head_dim: 2,
            d_ff: 4,
            classes: 2,
            pe_kind: PeKind::Fourier,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_gradient_keeps_weights_and_decays_moments() {
        let w0 = ModelWeights::<f64>::init(&tiny(), 1);
        let mut w = w0.clone();
        let mut opt = Adam::new(AdamConfig::default(), &w);
        let mut g = w.zeros_like();
        g.head.b[0] = 1.0;
        opt.step(&mut w, &g);
        let head_b_idx = w.trainable().len() - 2;
        let m1 = opt.first_moments()[head_b_idx][0];
        let w1 = w.clone();
        let zero = w.zeros_like();
        opt.step(&mut w, &zero);
        let m2 = opt.first_moments()[head_b_idx][0];
        assert!((m2 - 0.9 * m1).abs() < 1e-15);
        // Every tensor except the one that saw a gradient is untouched.
        assert_eq!(w.input_proj, w0.input_proj);
        assert_eq!(w1.input_proj, w0.input_proj);
    }

    #[test]
    fn first_step_closed_form() {
        let mut w = ModelWeights::<f64>::init(&tiny(), 2);
        let before = w.head.w[0];
        let mut g = w.zeros_like();
        let gv = 0.37;
        g.head.w[0] = gv;
        let cfg = AdamConfig::default();
        Adam::new(cfg, &w).step(&mut w, &g);
        // m̂ = g, v̂ = g², Δ = −lr·g/(|g| + ε)
        let expect = before - cfg.lr * gv / (gv.abs() + cfg.eps);
        assert!((w.head.w[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn deterministic_over_steps() {
        let run = || {
            let mut w = ModelWeights::<f32>::init(&tiny(), 3);
            let mut opt = Adam::new(AdamConfig::default(), &w);
            for s in 0..10 {
                let mut g = w.zeros_like();
                for (i, t) in g.trainable_mut().into_iter().enumerate() {
                    for (j, x) in t.iter_mut().enumerate() {
                        *x = ((i * 31 + j * 7 + s) % 11) as f32 / 11.0 - 0.5;
                    }
                }
                opt.step(&mut w, &g);
            }
            w
        };
        assert_eq!(run(), run());
    }
}
