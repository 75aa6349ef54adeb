use crate::error::{Error, Result};
use crate::gradcore::{NodeId, Tape};
use crate::losses::{batch_mean, cross_entropy, siamese_loss, total_loss};
use crate::models::{
    gene_forward, main_forward, Bag, GeneLeaves, MainLeaves, ATTENTION_GROUP, DOMAIN_GROUP, EXTRACTOR_GROUP,
    HEAD_GROUP, LABEL_GROUP,
};

use super::config::Components;

/// The loss terms a training stage optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    pub siamese: bool,
    pub label: bool,
    pub domain: bool,
    /// Mix as `(1 - λ) L_S + λ L_D` instead of summing the enabled terms.
    pub convex: bool,
}

impl Objective {
    /// Stage-one objective of a variant. With the Siamese term and the label
    /// term both present they are mixed by the schedule.
    pub fn one_stage(c: Components) -> Self {
        Objective {
            siamese: c.siamese,
            label: true,
            domain: c.dann,
            convex: c.siamese,
        }
    }

    pub const SIAMESE_ONLY: Objective = Objective {
        siamese: true,
        label: false,
        domain: false,
        convex: false,
    };

    pub fn adversarial(domain: bool) -> Self {
        Objective {
            siamese: false,
            label: true,
            domain,
            convex: false,
        }
    }

    /// Parameters that receive gradient under this objective.
    pub fn is_active(&self, name: &str) -> bool {
        let in_group = |g: &[&str]| g.contains(&name);
        in_group(ATTENTION_GROUP)
            || in_group(EXTRACTOR_GROUP)
            || (self.siamese && in_group(HEAD_GROUP))
            || (self.label && in_group(LABEL_GROUP))
            || (self.domain && in_group(DOMAIN_GROUP))
    }

    /// Weight of the gradient reversal in front of the domain head.
    pub fn reversal_weight(&self, lambda_p: f64) -> f64 {
        if self.domain {
            lambda_p
        } else {
            0.0
        }
    }
}

/// Batch-mean loss nodes. `total` is the optimised scalar; the others are
/// `None` when the term is not part of the objective.
#[derive(Debug, Clone, Copy)]
pub struct BatchTerms {
    pub total: NodeId,
    pub siamese: Option<NodeId>,
    pub label: Option<NodeId>,
    pub domain: Option<NodeId>,
    /// `L_y + L_d` (or `L_y` alone) when the label term is enabled.
    pub dann: Option<NodeId>,
}

pub fn batch_objective(
    tape: &mut Tape,
    main: &MainLeaves,
    gene: Option<&GeneLeaves>,
    bags: &[&Bag],
    objective: &Objective,
    lambda_p: f64,
) -> Result<BatchTerms> {
    if bags.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let gene = match (objective.siamese, gene) {
        (true, None) => return Err(Error::contract("Siamese objective needs the gene branch")),
        (true, Some(g)) => Some(g),
        (false, _) => None,
    };
    let grl = objective.reversal_weight(lambda_p);
    let mut ls = Vec::new();
    let mut ly = Vec::new();
    let mut ld = Vec::new();
    for bag in bags {
        let out = main_forward(tape, main, bag, grl)?;
        if let Some(g) = gene {
            let genes = bag
                .genes
                .as_deref()
                .ok_or_else(|| Error::Data(format!("training bag `{}` has no gene vector", bag.id)))?;
            let z_g = gene_forward(tape, g, genes)?;
            ls.push(siamese_loss(tape, out.projection, z_g.embedding)?);
        }
        if objective.label {
            ly.push(cross_entropy(tape, out.y_logits, bag.subtype)?);
        }
        if objective.domain {
            ld.push(cross_entropy(tape, out.d_logits, bag.domain)?);
        }
    }
    let mean = |tape: &mut Tape, v: &[NodeId]| -> Result<Option<NodeId>> {
        if v.is_empty() {
            Ok(None)
        } else {
            batch_mean(tape, v).map(Some)
        }
    };
    let siamese = mean(tape, &ls)?;
    let label = mean(tape, &ly)?;
    let domain = mean(tape, &ld)?;
    let dann = match (label, domain) {
        (Some(y), Some(d)) => Some(tape.add(y, d)?),
        (Some(y), None) => Some(y),
        (None, Some(d)) => Some(d),
        (None, None) => None,
    };
    let total = match (siamese, dann) {
        (Some(s), Some(d)) if objective.convex => total_loss(tape, s, d, lambda_p)?,
        (Some(s), Some(d)) => tape.add(s, d)?,
        (Some(s), None) => s,
        (None, Some(d)) => d,
        (None, None) => return Err(Error::contract("objective has no terms")),
    };
    Ok(BatchTerms {
        total,
        siamese,
        label,
        domain,
        dann,
    })
}
