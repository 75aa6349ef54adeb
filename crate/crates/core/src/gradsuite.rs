//! Finite-difference verification of every differentiable tape op and of the
//! complete training objectives on a miniature model.
//!
//! Gradient reversal and stop-gradient deliberately disagree with the
//! derivative of their forward pass, so they are not FD-checked as ops. The
//! objective checks instead split the loss into the part that does not pass
//! through the reversal and the domain term, and compare `backward()` with
//! `FD(rest) - λ FD(domain)` for parameters upstream of the reversal and
//! `FD(rest) + FD(domain)` for the domain head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gradcore::{compare_leaf, grad_check, numeric_gradient, GradCheckReport, NodeId, Tape, Tensor};
use crate::losses::{cross_entropy, siamese_loss};
use crate::models::{
    abmil_pool, init_params, AttentionLeaves, Bag, GeneLeaves, MainLeaves, ModelConfig, ParamSet, DOMAIN_GROUP,
};
use crate::train::{batch_objective, Components, Objective};

pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Ops covered by [`op_case`].
pub const OPS: &[&str] = &[
    "matmul",
    "add",
    "add_broadcast",
    "sub",
    "mul",
    "scale",
    "tanh",
    "selu",
    "sigmoid",
    "softmax_row",
    "log_softmax_row",
    "log",
    "exp",
    "mean",
    "sum",
    "concat_rows",
    "transpose",
    "pick",
    "cosine",
    "cross_entropy",
    "siamese_loss",
    "abmil_pool",
    "gated_abmil_pool",
];

/// Objectives covered by [`objective_case`].
pub const OBJECTIVES: &[&str] = &["one_stage", "one_stage_gated", "one_stage_deep_domain", "phase_a", "phase_b"];

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// Entries pushed at least 0.05 away from zero, clear of the SELU kink.
fn away_from_zero(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let v: f64 = gaussian(rng);
        v.signum() * (0.05 + v.abs())
    })
}

fn named(pairs: Vec<(&str, Tensor)>) -> Vec<(String, Tensor)> {
    pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

/// `sum(out ⊙ R)` for a fixed random `R`, so every output entry matters.
fn project(tape: &mut Tape, out: NodeId, weights: &Tensor) -> Result<NodeId> {
    let r = tape.constant(weights.clone());
    let m = tape.mul(out, r)?;
    Ok(tape.sum(m))
}

/// FD check of one op on random inputs drawn from `seed`.
pub fn op_case(op: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(1..=4);
    let c = rng.random_range(2..=4);
    let k = rng.random_range(1..=4);
    let proj = random(&mut rng, r, c);
    let tol = SUITE_TOLERANCE;

    macro_rules! unary {
        ($input:expr, $f:expr) => {{
            let leaves = named(vec![("x", $input)]);
            grad_check(
                &leaves,
                |t, ids| {
                    let y = $f(t, ids[0])?;
                    project(t, y, &proj)
                },
                tol,
            )
        }};
    }

    match op {
        "matmul" => {
            let leaves = named(vec![("a", random(&mut rng, r, k)), ("b", random(&mut rng, k, c))]);
            grad_check(
                &leaves,
                |t, ids| {
                    let y = t.matmul(ids[0], ids[1])?;
                    project(t, y, &proj)
                },
                tol,
            )
        }
        "add" | "sub" | "mul" | "add_broadcast" => {
            let b_rows = if op == "add_broadcast" { 1 } else { r };
            let leaves = named(vec![("a", random(&mut rng, r, c)), ("b", random(&mut rng, b_rows, c))]);
            grad_check(
                &leaves,
                |t, ids| {
                    let y = match op {
                        "sub" => t.sub(ids[0], ids[1])?,
                        "mul" => t.mul(ids[0], ids[1])?,
                        _ => t.add(ids[0], ids[1])?,
                    };
                    project(t, y, &proj)
                },
                tol,
            )
        }
        "scale" => {
            let f = gaussian(&mut rng);
            unary!(random(&mut rng, r, c), |t: &mut Tape, x| Ok::<_, Error>(t.scale(x, f)))
        }
        "tanh" => unary!(random(&mut rng, r, c), |t: &mut Tape, x| Ok::<_, Error>(t.tanh(x))),
        "selu" => unary!(away_from_zero(&mut rng, r, c), |t: &mut Tape, x| Ok::<_, Error>(t.selu(x))),
        "sigmoid" => unary!(random(&mut rng, r, c), |t: &mut Tape, x| Ok::<_, Error>(t.sigmoid(x))),
        "softmax_row" => unary!(random(&mut rng, r, c), |t: &mut Tape, x| t.softmax_row(x)),
        "log_softmax_row" => unary!(random(&mut rng, r, c), |t: &mut Tape, x| t.log_softmax_row(x)),
        "log" => {
            let x = random(&mut rng, r, c).map(|v| 0.5 + v.abs());
            unary!(x, |t: &mut Tape, x| t.log(x))
        }
        "exp" => unary!(random(&mut rng, r, c), |t: &mut Tape, x| t.exp(x)),
        "mean" | "sum" => {
            let w = gaussian(&mut rng);
            let leaves = named(vec![("x", random(&mut rng, r, c))]);
            grad_check(
                &leaves,
                |t, ids| {
                    let y = if op == "mean" { t.mean(ids[0])? } else { t.sum(ids[0]) };
                    Ok(t.scale(y, w))
                },
                tol,
            )
        }
        "concat_rows" => {
            let leaves = named(vec![("a", random(&mut rng, r, c)), ("b", random(&mut rng, k, c))]);
            let proj = random(&mut rng, r + k, c);
            grad_check(
                &leaves,
                |t, ids| {
                    let y = t.concat_rows(&[ids[0], ids[1]])?;
                    project(t, y, &proj)
                },
                tol,
            )
        }
        "transpose" => {
            let leaves = named(vec![("x", random(&mut rng, c, r))]);
            grad_check(
                &leaves,
                |t, ids| {
                    let y = t.transpose(ids[0]);
                    project(t, y, &proj)
                },
                tol,
            )
        }
        "pick" => {
            let (pr, pc) = (rng.random_range(0..r), rng.random_range(0..c));
            let leaves = named(vec![("x", random(&mut rng, r, c))]);
            grad_check(
                &leaves,
                |t, ids| {
                    let y = t.pick(ids[0], pr, pc)?;
                    let y = t.tanh(y);
                    Ok(t.scale(y, 1.7))
                },
                tol,
            )
        }
        "cosine" => {
            let leaves = named(vec![("a", random(&mut rng, 1, c)), ("b", random(&mut rng, 1, c))]);
            grad_check(&leaves, |t, ids| t.cosine(ids[0], ids[1]), tol)
        }
        "cross_entropy" => {
            let label = rng.random_range(0..c);
            let leaves = named(vec![("logits", random(&mut rng, 1, c))]);
            grad_check(&leaves, |t, ids| cross_entropy(t, ids[0], label), tol)
        }
        "siamese_loss" => {
            // Only the online side is a leaf; the anchor is held constant.
            let anchor = random(&mut rng, 1, c);
            let leaves = named(vec![("p", random(&mut rng, 1, c))]);
            grad_check(
                &leaves,
                |t, ids| {
                    let z = t.constant(anchor.clone());
                    siamese_loss(t, ids[0], z)
                },
                tol,
            )
        }
        "abmil_pool" | "gated_abmil_pool" => {
            let gated = op == "gated_abmil_pool";
            let hid = k + 1;
            let proj = random(&mut rng, 1, c);
            let mut pairs = vec![
                ("h", random(&mut rng, r + 1, c)),
                ("V", random(&mut rng, hid, c)),
                ("w", random(&mut rng, hid, 1)),
            ];
            if gated {
                pairs.push(("U", random(&mut rng, hid, c)));
            }
            let leaves = named(pairs);
            grad_check(
                &leaves,
                |t, ids| {
                    let v_t = t.transpose(ids[1]);
                    let (u, u_t) = if gated {
                        (Some(ids[3]), Some(t.transpose(ids[3])))
                    } else {
                        (None, None)
                    };
                    let att = AttentionLeaves {
                        v: ids[1],
                        v_t,
                        w: ids[2],
                        u,
                        u_t,
                    };
                    let pooled = abmil_pool(t, ids[0], &att)?;
                    project(t, pooled.z, &proj)
                },
                tol,
            )
        }
        other => Err(Error::contract(format!("no gradient case for op `{other}`"))),
    }
}

fn tiny_config(gated: bool, domain_hidden: usize) -> ModelConfig {
    ModelConfig {
        d: 6,
        n_prompts: 2,
        emb: 5,
        hidden_att: 4,
        num_subtypes: 4,
        num_domains: 3,
        gene_dim: 4,
        gated,
        domain_hidden,
    }
}

fn tiny_bags(rng: &mut impl Rng, config: &ModelConfig, count: usize) -> Vec<Bag> {
    (0..count)
        .map(|i| {
            let n = rng.random_range(1..=5);
            Bag {
                id: format!("g{i}"),
                instances: random(rng, n, config.d),
                subtype: rng.random_range(0..config.num_subtypes),
                domain: rng.random_range(0..config.num_domains),
                genes: Some((0..config.gene_dim).map(|_| gaussian(rng)).collect()),
            }
        })
        .collect()
}

/// FD check of a whole training objective on a miniature model.
pub fn objective_case(name: &str, seed: u64) -> Result<GradCheckReport> {
    let full = Objective::one_stage(Components {
        prompts: true,
        siamese: true,
        dann: true,
    });
    let (config, objective) = match name {
        "one_stage" => (tiny_config(false, 0), full),
        "one_stage_gated" => (tiny_config(true, 0), full),
        "one_stage_deep_domain" => (tiny_config(false, 3), full),
        "phase_a" => (tiny_config(false, 0), Objective::SIAMESE_ONLY),
        "phase_b" => (tiny_config(false, 0), Objective::adversarial(true)),
        other => return Err(Error::contract(format!("no gradient case for objective `{other}`"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (main, gene) = init_params(&config, seed)?;
    // Prompts start near zero; widen them so the check exercises real values.
    let mut main = main;
    main.prompts = random(&mut rng, config.n_prompts, config.d);
    let bags = tiny_bags(&mut rng, &config, 3);
    let lambda = rng.random_range(0.1..0.9);
    check_objective(&main.named_owned(), &gene, &bags, objective, lambda, &config)
}

trait NamedOwned {
    fn named_owned(&self) -> Vec<(String, Tensor)>;
}

impl<P: ParamSet> NamedOwned for P {
    fn named_owned(&self) -> Vec<(String, Tensor)> {
        self.named().into_iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }
}

fn check_objective(
    leaves: &[(String, Tensor)],
    gene: &crate::models::GeneParams,
    bags: &[Bag],
    objective: Objective,
    lambda: f64,
    config: &ModelConfig,
) -> Result<GradCheckReport> {
    let refs: Vec<&Bag> = bags.iter().collect();
    let build = |t: &mut Tape, ids: &[NodeId], obj: &Objective| -> Result<crate::train::BatchTerms> {
        let main = MainLeaves::bind(t, config, ids)?;
        let g = GeneLeaves::register(t, gene, false);
        batch_objective(t, &main, Some(&g), &refs, obj, lambda)
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|(_, v)| tape.leaf(v.clone())).collect();
    let terms = build(&mut tape, &ids, &objective)?;
    tape.backward(terms.total)?;

    let rest_objective = Objective {
        domain: false,
        ..objective
    };
    let has_rest = rest_objective.siamese || rest_objective.label;
    let rest = if has_rest {
        numeric_gradient(leaves, &|t: &mut Tape, ids: &[NodeId]| Ok(build(t, ids, &rest_objective)?.total))?
    } else {
        leaves.iter().map(|(_, v)| Tensor::zeros(v.rows(), v.cols())).collect()
    };
    let domain_weight = if objective.convex { lambda } else { 1.0 };
    let domain = if objective.domain {
        Some(numeric_gradient(leaves, &|t: &mut Tape, ids: &[NodeId]| {
            let terms = build(t, ids, &objective)?;
            let d = terms.domain.expect("domain term enabled");
            Ok(t.scale(d, domain_weight))
        })?)
    } else {
        None
    };

    let reversal = objective.reversal_weight(lambda);
    let checks = leaves
        .iter()
        .zip(&ids)
        .enumerate()
        .map(|(i, ((name, _), id))| {
            let mut expected = rest[i].clone();
            if let Some(dom) = &domain {
                let s = if DOMAIN_GROUP.contains(&name.as_str()) { 1.0 } else { -reversal };
                for (e, d) in expected.values_mut().iter_mut().zip(dom[i].values()) {
                    *e += s * d;
                }
            }
            compare_leaf(name, tape.grad(*id), &expected)
        })
        .collect();
    Ok(GradCheckReport {
        leaves: checks,
        tolerance: SUITE_TOLERANCE,
    })
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub failing: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.failing.is_empty())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.failing.is_empty())
    }
}

/// Every op and objective case for seeds `base_seed .. base_seed + seeds`.
pub fn run_suite(seeds: u64, base_seed: u64) -> Result<SuiteReport> {
    let mut cases = Vec::new();
    let mut record = |name: &str, seed: u64, r: GradCheckReport| {
        cases.push(CaseResult {
            name: name.to_string(),
            seed,
            max_rel_err: r.max_rel_err(),
            failing: r.failing().into_iter().map(String::from).collect(),
        });
    };
    for seed in base_seed..base_seed + seeds {
        for op in OPS {
            record(op, seed, op_case(op, seed)?);
        }
        for obj in OBJECTIVES {
            record(obj, seed, objective_case(obj, seed)?);
        }
    }
    Ok(SuiteReport {
        cases,
        tolerance: SUITE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_for_a_few_seeds() {
        let report = run_suite(3, 0).unwrap();
        let bad: Vec<_> = report.failures().collect();
        assert!(bad.is_empty(), "{bad:?}");
        assert_eq!(report.cases.len(), 3 * (OPS.len() + OBJECTIVES.len()));
    }

    #[test]
    fn objective_check_detects_a_wrong_sign() {
        // Using +λ instead of −λ for the upstream parameters must fail.
        let config = tiny_config(false, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (main, gene) = init_params(&config, 5).unwrap();
        let bags = tiny_bags(&mut rng, &config, 2);
        let refs: Vec<&Bag> = bags.iter().collect();
        let obj = Objective::adversarial(true);
        let leaves = main.named_owned();
        let report = grad_check(
            &leaves,
            |t, ids| {
                let m = MainLeaves::bind(t, &config, ids)?;
                let g = GeneLeaves::register(t, &gene, false);
                Ok(batch_objective(t, &m, Some(&g), &refs, &obj, 0.5)?.total)
            },
            SUITE_TOLERANCE,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.failing().iter().all(|n| !n.starts_with("domain")));
    }
}
