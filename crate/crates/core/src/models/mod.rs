//! The three-branch network: prompted attention-MIL main branch with shared
//! extractor, label and domain heads, Siamese projection head, and the SELU
//! gene encoder used as a frozen guide.

mod checkpoint;
mod config;
mod forward;
mod init;
mod params;

pub use checkpoint::{Branch, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use forward::{
    abmil_pool, append_prompts, check_bag, gene_forward, main_forward, predict, AttentionLeaves,
    GeneLeaves, GeneOutputs, LinearLeaves, MainLeaves, MainOutputs, Pooled, Prediction,
};
pub use init::{init_params, lecun_normal, xavier_uniform, PROMPT_INIT_STD};
pub use params::*;

use crate::gradcore::Tensor;

/// One sample: a bag of instance embeddings with its labels and, for
/// training samples, the paired gene-expression vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    /// `n x d` instance embeddings.
    pub instances: Tensor,
    pub subtype: usize,
    pub domain: usize,
    pub genes: Option<Vec<f64>>,
}
