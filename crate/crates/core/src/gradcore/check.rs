//! Central finite-difference verification of tape gradients.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LeafCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.max_rel_err <= self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }

    /// Leaves whose error exceeds the tolerance.
    pub fn failing(&self) -> Vec<&str> {
        self.leaves
            .iter()
            .filter(|l| l.max_rel_err > self.tolerance)
            .map(|l| l.name.as_str())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(leaves: &[(String, Tensor)], builder: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let root = builder(&mut tape, &ids)?;
    Ok(tape.value(root).item())
}

/// Central-difference gradient of the scalar built by `builder` with
/// respect to every entry of every leaf.
pub fn numeric_gradient<F>(leaves: &[(String, Tensor)], builder: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut work: Vec<(String, Tensor)> = leaves.to_vec();
    let mut out = Vec::with_capacity(leaves.len());
    for li in 0..leaves.len() {
        let (rows, cols) = leaves[li].1.shape();
        let mut g = Tensor::zeros(rows, cols);
        for k in 0..g.len() {
            let orig = work[li].1.values()[k];
            work[li].1.values_mut()[k] = orig + FD_STEP;
            let plus = evaluate(&work, builder)?;
            work[li].1.values_mut()[k] = orig - FD_STEP;
            let minus = evaluate(&work, builder)?;
            work[li].1.values_mut()[k] = orig;
            g.values_mut()[k] = (plus - minus) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    Ok(out)
}

/// Worst entry-wise relative error between two gradients of one leaf.
pub fn compare_leaf(name: &str, analytic: &Tensor, numeric: &Tensor) -> LeafCheck {
    let worst = analytic
        .values()
        .iter()
        .zip(numeric.values())
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    LeafCheck {
        name: name.to_string(),
        max_rel_err: worst,
    }
}

/// Compares `backward()` gradients of the scalar built by `builder` against
/// central differences for every entry of every named leaf.
///
/// `builder` receives the leaf ids in the order given and must return a 1x1
/// node. Two unperturbed evaluations that disagree bitwise are reported as
/// [`Error::Reproducibility`].
pub fn grad_check<F>(leaves: &[(String, Tensor)], builder: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    for (name, t) in leaves {
        if !t.is_finite() {
            return Err(Error::Numeric(format!("leaf `{name}` is not finite")));
        }
    }
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let root = builder(&mut tape, &ids)?;
    let base = tape.value(root).item();
    tape.backward(root)?;

    let again = evaluate(leaves, &builder)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Reproducibility(format!(
            "builder returned {base} then {again} for identical inputs"
        )));
    }

    let numeric = numeric_gradient(leaves, &builder)?;
    let report = leaves
        .iter()
        .zip(&ids)
        .zip(&numeric)
        .map(|(((name, _), id), num)| compare_leaf(name, tape.grad(*id), num))
        .collect();
    Ok(GradCheckReport {
        leaves: report,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(name: &str, t: Tensor) -> (String, Tensor) {
        (name.to_string(), t)
    }

    #[test]
    fn linear_model_passes() {
        let leaves = vec![
            named("w", Tensor::from_rows(&[&[0.3], &[-1.1], &[0.7]])),
            named("b", Tensor::scalar(0.2)),
        ];
        let x = Tensor::from_rows(&[&[1.0, 2.0, -0.5], &[0.1, -0.3, 0.9]]);
        let report = grad_check(
            &leaves,
            |t, ids| {
                let xi = t.constant(x.clone());
                let y = t.matmul(xi, ids[0])?;
                let y = t.add(y, ids[1])?;
                let y = t.tanh(y);
                t.mean(y)
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn wrong_adjoint_is_caught_and_named() {
        // grad_reverse is identity forward, so its adjoint is "wrong" for FD.
        let leaves = vec![
            named("good", Tensor::row_vector(&[0.4, -0.2])),
            named("bad", Tensor::row_vector(&[1.2, 0.5])),
        ];
        let report = grad_check(
            &leaves,
            |t, ids| {
                let r = t.grad_reverse(ids[1], 1.0)?;
                let s = t.add(ids[0], r)?;
                let s = t.tanh(s);
                Ok(t.sum(s))
            },
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failing(), vec!["bad"]);
    }

    #[test]
    fn nondeterministic_builder_is_rejected() {
        use std::cell::Cell;
        let counter = Cell::new(0.0);
        let leaves = vec![named("x", Tensor::scalar(1.0))];
        let err = grad_check(
            &leaves,
            |t, ids| {
                counter.set(counter.get() + 1.0);
                let c = t.constant(Tensor::scalar(counter.get()));
                t.mul(ids[0], c)
            },
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Reproducibility(_)));
    }
}
