use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::ModelConfig;
use super::params::{GeneParams, Linear, MainParams};
use crate::error::Result;
use crate::gradcore::Tensor;

pub const PROMPT_INIT_STD: f64 = 0.02;

/// Weights `N(0, 1/fan_in)`, the initialization SELU layers need to self-normalize.
pub fn lecun_normal(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(fan_in, fan_out, |_, _| normal.sample(rng))
}

/// Weights `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let uni = Uniform::new_inclusive(-a, a).expect("finite bound");
    Tensor::from_fn(rows, cols, |_, _| uni.sample(rng))
}

fn lecun_linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Linear {
    Linear {
        weight: lecun_normal(rng, fan_in, fan_out),
        bias: Tensor::zeros(1, fan_out),
    }
}

fn xavier_linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Linear {
    Linear {
        weight: xavier_uniform(rng, fan_in, fan_out, fan_in, fan_out),
        bias: Tensor::zeros(1, fan_out),
    }
}

/// Deterministic initialization of both branches from one seed.
///
/// The main and gene branches draw from separate ChaCha streams so that
/// changing one branch's shape leaves the other's values untouched.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<(MainParams, GeneParams)> {
    config.validate()?;
    let c = config;

    // Prompts have their own stream so that every other tensor is identical
    // with and without prompts.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let prompt_dist = Normal::new(0.0, PROMPT_INIT_STD).expect("positive std");
    let prompts = Tensor::from_fn(c.n_prompts, c.d, |_, _| prompt_dist.sample(&mut rng));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let att_v = xavier_uniform(&mut rng, c.hidden_att, c.d, c.d, c.hidden_att);
    let att_w = xavier_uniform(&mut rng, c.hidden_att, 1, c.hidden_att, 1);
    let att_u = c
        .gated
        .then(|| xavier_uniform(&mut rng, c.hidden_att, c.d, c.d, c.hidden_att));
    let mut main = MainParams {
        config: c.clone(),
        prompts,
        att_v,
        att_w,
        att_u,
        extractor: lecun_linear(&mut rng, c.d, c.emb),
        head_hidden: lecun_linear(&mut rng, c.emb, c.emb),
        head_out: xavier_linear(&mut rng, c.emb, c.emb),
        label: xavier_linear(&mut rng, c.emb, c.num_subtypes),
        domain_hidden: None,
        domain: xavier_linear(&mut rng, c.domain_input(), c.num_domains),
    };
    if c.domain_hidden > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(4);
        main.domain_hidden = Some(lecun_linear(&mut rng, c.emb, c.domain_hidden));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let gene = GeneParams {
        config: c.clone(),
        encoder: lecun_linear(&mut rng, c.gene_dim, c.emb),
        classifier: xavier_linear(&mut rng, c.emb, c.num_subtypes),
        frozen: false,
    };
    Ok((main, gene))
}
