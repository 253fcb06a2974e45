use serde::{Deserialize, Serialize};

use super::NsfParams;
use crate::error::{NsfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(NsfError::Config("learning rate must be finite and >= 0".into()));
        }
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(NsfError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(NsfError::Config("Adam eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction, holding first and second moments for every
/// tensor of an [`NsfParams`].
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &NsfParams) -> Result<Self> {
        cfg.validate()?;
        let n = params.num_params();
        Ok(Self {
            cfg,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Tensors named in `frozen` are left untouched.
    pub fn update(&mut self, params: &mut NsfParams, grads: &NsfParams, frozen: &[&str]) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let g = grads.to_flat();
        let mut pos = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |name, values| {
            let range = pos..pos + values.len();
            pos += values.len();
            if frozen.contains(&name) {
                return;
            }
            for ((p, gi), (mi, vi)) in values
                .iter_mut()
                .zip(&g[range.clone()])
                .zip(m[range.clone()].iter_mut().zip(&mut v[range]))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, NsfParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NsfParams {
        let cfg = ModelConfig {
            channels: 2,
            feature_dims: 2,
            cond_hidden: 2,
            cond_dims: 1,
            ..ModelConfig::default()
        };
        NsfParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn first_step_moves_each_parameter_by_lr() {
        let mut p = small();
        let before = p.to_flat();
        let mut g = p.zeros_like();
        g.set_flat(&before.iter().enumerate().map(|(i, _)| if i % 2 == 0 { 3.0 } else { -0.5 }).collect::<Vec<_>>())
            .unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        adam.update(&mut p, &g, &[]);
        for (i, (a, b)) in p.to_flat().iter().zip(&before).enumerate() {
            let expected = if i % 2 == 0 { -3e-4 } else { 3e-4 };
            assert!((a - b - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_lr_and_frozen_leave_parameters_unchanged() {
        let mut p = small();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.set_flat(&vec![1.0; p.num_params()]).unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            &p,
        )
        .unwrap();
        for _ in 0..5 {
            adam.update(&mut p, &g, &[]);
        }
        assert_eq!(p, before);

        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        adam.update(&mut p, &g, &["beta"]);
        assert_eq!(p.beta, before.beta);
        assert_ne!(p.mix.bias, before.mix.bias);
    }
}
