use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Instance embedding width.
    pub d: usize,
    /// Number of learnable prompt rows appended to each bag.
    pub n_prompts: usize,
    /// Width of the shared feature, the Siamese projection and the gene embedding.
    pub emb: usize,
    /// Hidden width of the attention scorer.
    pub hidden_att: usize,
    pub num_subtypes: usize,
    pub num_domains: usize,
    pub gene_dim: usize,
    /// Gated attention (sigmoid gate on the tanh branch).
    pub gated: bool,
    /// Width of a SELU hidden layer in the domain classifier; 0 keeps it linear.
    pub domain_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 192,
            n_prompts: 4,
            emb: 128,
            hidden_att: 64,
            num_subtypes: 4,
            num_domains: 8,
            gene_dim: 64,
            gated: false,
            domain_hidden: 0,
        }
    }
}

impl ModelConfig {
    /// Input width of the domain classifier's output layer.
    pub fn domain_input(&self) -> usize {
        if self.domain_hidden > 0 {
            self.domain_hidden
        } else {
            self.emb
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("emb", self.emb),
            ("hidden_att", self.hidden_att),
            ("num_domains", self.num_domains),
            ("gene_dim", self.gene_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::contract(format!("model config `{name}` must be positive")));
            }
        }
        if self.num_subtypes < 2 {
            return Err(Error::contract("model config `num_subtypes` must be at least 2"));
        }
        if self.num_domains > u16::MAX as usize + 1 {
            return Err(Error::contract("num_domains does not fit the dataset format"));
        }
        Ok(())
    }
}
