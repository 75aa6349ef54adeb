//! Synthetic cohorts, their file format, and the hold-out / k-fold protocol.

mod generate;
mod io;
mod split;

use std::collections::{BTreeSet, HashMap};

pub use generate::{generate, GenConfig, SUBTYPE_COUNTS};
pub use io::{dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use split::{kfold, largest_remainder_quotas, stratified_split, SplitPlan, DEFAULT_FOLDS, DEFAULT_TEST_FRACTION};

use crate::error::{Error, Result};
use crate::models::Bag;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bags: Vec<Bag>,
    pub num_subtypes: usize,
    pub num_domains: usize,
    pub gen_config: Option<GenConfig>,
}

impl Dataset {
    pub fn new(bags: Vec<Bag>, num_subtypes: usize, num_domains: usize, gen_config: Option<GenConfig>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for b in &bags {
            if !ids.insert(b.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id `{}`", b.id)));
            }
            if b.subtype >= num_subtypes || b.domain >= num_domains {
                return Err(Error::Data(format!("labels of `{}` out of range", b.id)));
            }
            if b.instances.rows() == 0 {
                return Err(Error::Data(format!("bag `{}` is empty", b.id)));
            }
        }
        Ok(Dataset {
            bags,
            num_subtypes,
            num_domains,
            gen_config,
        })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Instance width shared by all bags (0 for an empty dataset).
    pub fn instance_dim(&self) -> usize {
        self.bags.first().map_or(0, |b| b.instances.cols())
    }

    pub fn gene_dim(&self) -> usize {
        self.bags
            .iter()
            .find_map(|b| b.genes.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    /// Bags with the given ids, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Bag>> {
        let index: HashMap<&str, &Bag> = self.bags.iter().map(|b| (b.id.as_str(), b)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("unknown sample id `{id}`")))
            })
            .collect()
    }
}
