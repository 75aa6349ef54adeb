use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::models::{Gradients, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Add `weight_decay * param` to the gradient (L2) instead of decaying
    /// the parameter directly.
    pub coupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            coupled_weight_decay: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::contract(format!("invalid optimizer settings {self:?}")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::contract("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Per-parameter moments and the shared step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update of the parameters selected by `active`. Parameters that
/// are not active are left bitwise untouched, including by weight decay. An
/// active parameter without an entry in `grads` is treated as having zero
/// gradient.
pub fn adam_step<P: ParamSet>(
    params: &mut P,
    grads: &Gradients,
    state: &mut AdamState,
    config: &AdamConfig,
    active: impl Fn(&str) -> bool,
) -> Result<()> {
    if params.is_frozen() {
        return Err(Error::contract("optimizer step on frozen parameters"));
    }
    for (name, g) in grads {
        if active(name) && !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - config.beta1.powf(t);
    let bc2 = 1.0 - config.beta2.powf(t);
    for (name, p) in params.named_mut() {
        if !active(name) {
            continue;
        }
        let g = grads.get(name);
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        let mom = state.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: Tensor::zeros(p.rows(), p.cols()),
            v: Tensor::zeros(p.rows(), p.cols()),
        });
        let pv = p.values_mut();
        let m = mom.m.values_mut();
        let v = mom.v.values_mut();
        for i in 0..pv.len() {
            let mut gi = g.map_or(0.0, |g| g.values()[i]);
            if config.coupled_weight_decay {
                gi += config.weight_decay * pv[i];
            }
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let mut step = m_hat / (v_hat.sqrt() + config.eps);
            if !config.coupled_weight_decay {
                step += config.weight_decay * pv[i];
            }
            pv[i] -= config.lr * step;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ModelConfig, MainParams, PROMPTS};

    fn tiny() -> (MainParams, crate::models::GeneParams) {
        let c = ModelConfig {
            d: 3,
            n_prompts: 1,
            emb: 2,
            hidden_att: 2,
            num_subtypes: 2,
            num_domains: 2,
            gene_dim: 2,
            gated: false,
            domain_hidden: 0,
        };
        init_params(&c, 0).unwrap()
    }

    fn only_prompts(p: &MainParams, g: f64) -> Gradients {
        let t = p.prompts.clone();
        let mut grads = Gradients::new();
        grads.insert(PROMPTS.into(), Tensor::full(t.rows(), t.cols(), g));
        grads
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let (mut p, _) = tiny();
        let before = p.prompts.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new();
        let g = only_prompts(&p, 1.0);
        adam_step(&mut p, &g, &mut st, &cfg, |n| n == PROMPTS).unwrap();
        let expected = -5e-5 * (1.0 / (1.0 + 1e-8));
        for (a, b) in p.prompts.values().iter().zip(before.values()) {
            assert!((a - b - expected).abs() < 1e-16);
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let (mut p, _) = tiny();
        let before = p.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new();
        let g = only_prompts(&p, 0.0);
        adam_step(&mut p, &g, &mut st, &cfg, |_| true).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn decoupled_decay_arithmetic() {
        let (mut p, _) = tiny();
        p.prompts = Tensor::full(p.prompts.rows(), p.prompts.cols(), 1.0);
        let mut st = AdamState::new();
        let g = only_prompts(&p, 0.0);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default(), |n| n == PROMPTS).unwrap();
        for v in p.prompts.values() {
            assert!((1.0 - v - 5e-10).abs() < 1e-15);
        }
    }

    #[test]
    fn inactive_parameters_untouched() {
        let (mut p, _) = tiny();
        let before = p.clone();
        let mut st = AdamState::new();
        let g = only_prompts(&p, 1.0);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default(), |n| n == PROMPTS).unwrap();
        for ((n, a), (_, b)) in p.named().into_iter().zip(before.named()) {
            if n == PROMPTS {
                assert_ne!(a, b);
            } else {
                assert_eq!(a, b, "{n}");
            }
        }
    }

    #[test]
    fn frozen_and_non_finite_rejected() {
        let (mut p, mut g) = tiny();
        g.freeze();
        let mut st = AdamState::new();
        let err = adam_step(&mut g, &Gradients::new(), &mut st, &AdamConfig::default(), |_| true);
        assert!(matches!(err, Err(Error::Contract(_))));
        let g = only_prompts(&p, f64::NAN);
        let err = adam_step(&mut p, &g, &mut st, &AdamConfig::default(), |_| true);
        assert!(matches!(err, Err(Error::NonFiniteGradient(n)) if n == PROMPTS));
    }
}
