//! Objective terms: Siamese negative cosine with stop-gradient, label and
//! domain cross-entropy, the warm-up schedule and their convex combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{NodeId, Tape};

/// Adversarial warm-up schedule `λ(p) = 2 / (1 + exp(-γ p)) - 1`, `p = epoch / max_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub gamma: f64,
    pub max_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            gamma: 10.0,
            max_epochs: 100,
        }
    }
}

pub fn lambda_schedule(epoch: usize, sched: &Schedule) -> Result<f64> {
    if !(sched.gamma > 0.0) || sched.max_epochs == 0 {
        return Err(Error::contract(format!("invalid schedule {sched:?}")));
    }
    if epoch > sched.max_epochs {
        return Err(Error::contract(format!(
            "epoch {epoch} exceeds max_epochs {}",
            sched.max_epochs
        )));
    }
    let p = epoch as f64 / sched.max_epochs as f64;
    Ok(2.0 / (1.0 + (-sched.gamma * p).exp()) - 1.0)
}

/// `-cos(p_x, z_g)`.
pub fn neg_cosine(tape: &mut Tape, p_x: NodeId, z_g: NodeId) -> Result<NodeId> {
    let c = tape.cosine(p_x, z_g)?;
    Ok(tape.scale(c, -1.0))
}

/// Negative cosine with the gene embedding held constant.
pub fn siamese_loss(tape: &mut Tape, p_x: NodeId, z_g: NodeId) -> Result<NodeId> {
    let anchor = tape.stop_grad(z_g);
    neg_cosine(tape, p_x, anchor)
}

/// `-log softmax(logits)[label]` for a single `1 x C` row.
pub fn cross_entropy(tape: &mut Tape, logits: NodeId, label: usize) -> Result<NodeId> {
    let (rows, classes) = tape.value(logits).shape();
    if rows != 1 {
        return Err(Error::contract(format!("cross_entropy expects one row, got {rows}")));
    }
    if label >= classes {
        return Err(Error::contract(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let log_p = tape.log_softmax_row(logits)?;
    let picked = tape.pick(log_p, 0, label)?;
    Ok(tape.scale(picked, -1.0))
}

#[derive(Debug, Clone, Copy)]
pub struct DannTerms {
    /// `L_y + L_d`
    pub total: NodeId,
    pub label: NodeId,
    pub domain: NodeId,
}

/// Label plus domain cross-entropy. The adversarial sign lives in the
/// gradient reversal inside the forward pass, not here.
pub fn dann_loss(
    tape: &mut Tape,
    y_logits: NodeId,
    y_label: usize,
    d_logits: NodeId,
    d_label: usize,
) -> Result<DannTerms> {
    let label = cross_entropy(tape, y_logits, y_label)?;
    let domain = cross_entropy(tape, d_logits, d_label)?;
    let total = tape.add(label, domain)?;
    Ok(DannTerms { total, label, domain })
}

/// `(1 - λ) L_S + λ L_D`
pub fn total_loss(tape: &mut Tape, siamese: NodeId, dann: NodeId, lambda_p: f64) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&lambda_p) {
        return Err(Error::contract(format!("lambda_p {lambda_p} outside [0, 1]")));
    }
    let a = tape.scale(siamese, 1.0 - lambda_p);
    let b = tape.scale(dann, lambda_p);
    tape.add(a, b)
}

/// Arithmetic mean of scalar nodes.
pub fn batch_mean(tape: &mut Tape, terms: &[NodeId]) -> Result<NodeId> {
    let (first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::contract("batch_mean of an empty batch"))?;
    let mut acc = *first;
    for t in rest {
        acc = tape.add(acc, *t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

/// Scalar values of every loss term for one batch or epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub siamese: f64,
    pub label: f64,
    pub domain: f64,
    pub dann: f64,
    pub total: f64,
    pub lambda_p: f64,
}
