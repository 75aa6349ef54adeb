//! Forward passes of the three branches, recorded on a [`Tape`].

use super::config::ModelConfig;
use super::params::*;
use super::Bag;
use crate::error::{Error, Result};
use crate::gradcore::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct LinearLeaves {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl LinearLeaves {
    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let y = tape.matmul(x, self.weight)?;
        tape.add(y, self.bias)
    }
}

/// Attention pool parameters as they appear on the tape. The projections are
/// stored transposed (`d x hidden`) so every bag reuses one transpose.
#[derive(Debug, Clone, Copy)]
pub struct AttentionLeaves {
    pub v: NodeId,
    pub v_t: NodeId,
    pub w: NodeId,
    pub u: Option<NodeId>,
    pub u_t: Option<NodeId>,
}

/// Main-branch parameters registered as tape leaves for one forward batch.
#[derive(Debug, Clone)]
pub struct MainLeaves {
    pub prompts: NodeId,
    pub attention: AttentionLeaves,
    pub extractor: LinearLeaves,
    pub head_hidden: LinearLeaves,
    pub head_out: LinearLeaves,
    pub label: LinearLeaves,
    pub domain_hidden: Option<LinearLeaves>,
    pub domain: LinearLeaves,
    names: Vec<(&'static str, NodeId)>,
}

impl MainLeaves {
    pub fn register(tape: &mut Tape, params: &MainParams) -> Self {
        let ids: Vec<NodeId> = params.named().into_iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        MainLeaves::bind(tape, &params.config, &ids).expect("ids follow ParamSet::named order")
    }

    /// Wraps existing nodes given in [`ParamSet::named`] order for a model
    /// shaped by `config`.
    pub fn bind(tape: &mut Tape, config: &ModelConfig, ids: &[NodeId]) -> Result<Self> {
        let gated = config.gated;
        let deep_domain = config.domain_hidden > 0;
        let expected = 13 + usize::from(gated) + 2 * usize::from(deep_domain);
        if ids.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} main-branch leaves, got {}",
                ids.len()
            )));
        }
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("length checked");
        let prompts = next();
        let v = next();
        let w = next();
        let u = gated.then(&mut next);
        let mut linear = || LinearLeaves {
            weight: next(),
            bias: next(),
        };
        let extractor = linear();
        let head_hidden = linear();
        let head_out = linear();
        let label = linear();
        let domain_hidden = deep_domain.then(&mut linear);
        let domain = linear();
        let v_t = tape.transpose(v);
        let u_t = u.map(|u| tape.transpose(u));

        let mut names = vec![(PROMPTS, prompts), (ATT_V, v), (ATT_W, w)];
        if let Some(u) = u {
            names.push((ATT_U, u));
        }
        names.extend([
            (EXTRACTOR_W, extractor.weight),
            (EXTRACTOR_B, extractor.bias),
            (HEAD_HIDDEN_W, head_hidden.weight),
            (HEAD_HIDDEN_B, head_hidden.bias),
            (HEAD_OUT_W, head_out.weight),
            (HEAD_OUT_B, head_out.bias),
            (LABEL_W, label.weight),
            (LABEL_B, label.bias),
        ]);
        if let Some(h) = domain_hidden {
            names.extend([(DOMAIN_HIDDEN_W, h.weight), (DOMAIN_HIDDEN_B, h.bias)]);
        }
        names.extend([(DOMAIN_W, domain.weight), (DOMAIN_B, domain.bias)]);
        Ok(MainLeaves {
            prompts,
            attention: AttentionLeaves { v, v_t, w, u, u_t },
            extractor,
            head_hidden,
            head_out,
            label,
            domain_hidden,
            domain,
            names,
        })
    }

    pub fn ids(&self) -> &[(&'static str, NodeId)] {
        &self.names
    }

    pub fn gradients(&self, tape: &Tape) -> Gradients {
        self.names
            .iter()
            .map(|(n, id)| (n.to_string(), tape.grad(*id).clone()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneLeaves {
    pub encoder: LinearLeaves,
    pub classifier: LinearLeaves,
    names: Vec<(&'static str, NodeId)>,
}

impl GeneLeaves {
    /// Registers the gene branch. With `trainable == false` its tensors are
    /// constants and cannot receive gradient at all.
    pub fn register(tape: &mut Tape, params: &GeneParams, trainable: bool) -> Self {
        let ids: Vec<NodeId> = params
            .named()
            .into_iter()
            .map(|(_, t)| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        GeneLeaves::bind(&ids).expect("ids follow ParamSet::named order")
    }

    /// Wraps existing nodes given in [`ParamSet::named`] order.
    pub fn bind(ids: &[NodeId]) -> Result<Self> {
        if ids.len() != 4 {
            return Err(Error::contract(format!("expected 4 gene leaves, got {}", ids.len())));
        }
        let encoder = LinearLeaves {
            weight: ids[0],
            bias: ids[1],
        };
        let classifier = LinearLeaves {
            weight: ids[2],
            bias: ids[3],
        };
        let names = vec![
            (GENE_FC_W, encoder.weight),
            (GENE_FC_B, encoder.bias),
            (GENE_CLF_W, classifier.weight),
            (GENE_CLF_B, classifier.bias),
        ];
        Ok(GeneLeaves {
            encoder,
            classifier,
            names,
        })
    }

    pub fn ids(&self) -> &[(&'static str, NodeId)] {
        &self.names
    }

    pub fn gradients(&self, tape: &Tape) -> Gradients {
        self.names
            .iter()
            .map(|(n, id)| (n.to_string(), tape.grad(*id).clone()))
            .collect()
    }
}

/// `[H, P]`: instance rows followed by prompt rows. With no prompt rows the
/// instance node itself is returned.
pub fn append_prompts(tape: &mut Tape, instances: NodeId, prompts: NodeId) -> Result<NodeId> {
    let (n, d) = tape.value(instances).shape();
    let (n_p, dp) = tape.value(prompts).shape();
    if d != dp {
        return Err(Error::Shape {
            op: "append_prompts",
            lhs: (n, d),
            rhs: (n_p, dp),
        });
    }
    if n_p == 0 {
        return Ok(instances);
    }
    tape.concat_rows(&[instances, prompts])
}

#[derive(Debug, Clone, Copy)]
pub struct Pooled {
    /// `1 x d` attention-weighted sum of rows.
    pub z: NodeId,
    /// `K x 1` attention weights.
    pub attention: NodeId,
}

/// Attention MIL pooling: `a = softmax_k(wᵀ tanh(V h_k))`, `z = Σ a_k h_k`.
pub fn abmil_pool(tape: &mut Tape, h: NodeId, att: &AttentionLeaves) -> Result<Pooled> {
    let (k, d) = tape.value(h).shape();
    let d_att = tape.value(att.v_t).rows();
    if k == 0 {
        return Err(Error::contract("abmil_pool needs at least one row"));
    }
    if d != d_att {
        return Err(Error::Shape {
            op: "abmil_pool",
            lhs: (k, d),
            rhs: tape.value(att.v).shape(),
        });
    }
    let proj = tape.matmul(h, att.v_t)?;
    let mut hidden = tape.tanh(proj);
    if let Some(u_t) = att.u_t {
        let gate = tape.matmul(h, u_t)?;
        let gate = tape.sigmoid(gate);
        hidden = tape.mul(hidden, gate)?;
    }
    let scores = tape.matmul(hidden, att.w)?;
    let scores = tape.transpose(scores);
    let weights = tape.softmax_row(scores)?;
    let z = tape.matmul(weights, h)?;
    let attention = tape.transpose(weights);
    Ok(Pooled { z, attention })
}

#[derive(Debug, Clone, Copy)]
pub struct MainOutputs {
    pub pooled: NodeId,
    /// Shared feature `SELU(F_c(z))`.
    pub feature: NodeId,
    /// Siamese projection `h(feature)`.
    pub projection: NodeId,
    pub y_logits: NodeId,
    pub d_logits: NodeId,
    pub attention: NodeId,
}

pub fn check_bag(bag: &Bag, params: &MainParams) -> Result<()> {
    let c = &params.config;
    if bag.instances.rows() == 0 {
        return Err(Error::Data(format!("bag `{}` has no instances", bag.id)));
    }
    if bag.instances.cols() != c.d {
        return Err(Error::Shape {
            op: "bag instances",
            lhs: bag.instances.shape(),
            rhs: (bag.instances.rows(), c.d),
        });
    }
    Ok(())
}

/// Full WSI branch. The domain head sits behind a gradient reversal weighted
/// by `lambda_p`; forward values do not depend on it.
pub fn main_forward(tape: &mut Tape, leaves: &MainLeaves, bag: &Bag, lambda_p: f64) -> Result<MainOutputs> {
    if bag.instances.rows() == 0 {
        return Err(Error::Data(format!("bag `{}` has no instances", bag.id)));
    }
    let h = tape.constant(bag.instances.clone());
    let h_prime = append_prompts(tape, h, leaves.prompts)?;
    let pooled = abmil_pool(tape, h_prime, &leaves.attention)?;
    let f = leaves.extractor.apply(tape, pooled.z)?;
    let feature = tape.selu(f);
    let hidden = leaves.head_hidden.apply(tape, feature)?;
    let hidden = tape.selu(hidden);
    let projection = leaves.head_out.apply(tape, hidden)?;
    let y_logits = leaves.label.apply(tape, feature)?;
    let mut reversed = tape.grad_reverse(feature, lambda_p)?;
    if let Some(h) = &leaves.domain_hidden {
        let pre = h.apply(tape, reversed)?;
        reversed = tape.selu(pre);
    }
    let d_logits = leaves.domain.apply(tape, reversed)?;
    Ok(MainOutputs {
        pooled: pooled.z,
        feature,
        projection,
        y_logits,
        d_logits,
        attention: pooled.attention,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GeneOutputs {
    pub embedding: NodeId,
    pub logits: NodeId,
}

pub fn gene_forward(tape: &mut Tape, leaves: &GeneLeaves, genes: &[f64]) -> Result<GeneOutputs> {
    let expected = tape.value(leaves.encoder.weight).rows();
    if genes.len() != expected {
        return Err(Error::Shape {
            op: "gene_forward",
            lhs: (1, genes.len()),
            rhs: (1, expected),
        });
    }
    let x = tape.constant(Tensor::row_vector(genes));
    let z = leaves.encoder.apply(tape, x)?;
    let embedding = tape.selu(z);
    let logits = leaves.classifier.apply(tape, embedding)?;
    Ok(GeneOutputs { embedding, logits })
}

#[derive(Debug, Clone)]
pub struct Prediction {
    /// `1 x num_subtypes`
    pub logits: Tensor,
    /// `1 x emb` shared feature.
    pub feature: Tensor,
}

impl Prediction {
    /// Softmax of the subtype logits.
    pub fn probabilities(&self) -> Vec<f64> {
        let row = self.logits.values();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

const PREDICT_CHUNK: usize = 64;

/// Forward-only evaluation of many bags.
pub fn predict(params: &MainParams, bags: &[&Bag]) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(bags.len());
    for chunk in bags.chunks(PREDICT_CHUNK) {
        let mut tape = Tape::new();
        let leaves = MainLeaves::register(&mut tape, params);
        for bag in chunk {
            check_bag(bag, params)?;
            let o = main_forward(&mut tape, &leaves, bag, 0.0)?;
            out.push(Prediction {
                logits: tape.value(o.y_logits).clone(),
                feature: tape.value(o.feature).clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ModelConfig};

    fn small(n_prompts: usize) -> ModelConfig {
        ModelConfig {
            d: 5,
            n_prompts,
            emb: 4,
            hidden_att: 3,
            num_domains: 3,
            gene_dim: 4,
            ..ModelConfig::default()
        }
    }

    fn bag(n: usize) -> Bag {
        Bag {
            id: "b".into(),
            instances: Tensor::from_fn(n, 5, |r, c| ((r * 5 + c) as f64 * 0.37).sin()),
            subtype: 1,
            domain: 2,
            genes: Some(vec![0.5, -1.0, 0.25, 2.0]),
        }
    }

    #[test]
    fn prompts_are_appended_as_rows() {
        let (params, _) = init_params(&small(4), 1).unwrap();
        let mut tape = Tape::new();
        let leaves = MainLeaves::register(&mut tape, &params);
        let h = tape.constant(bag(3).instances);
        let out = append_prompts(&mut tape, h, leaves.prompts).unwrap();
        assert_eq!(tape.value(out).shape(), (7, 5));
        assert_eq!(tape.value(out).slice_rows(3, 7), params.prompts);

        let wide = tape.constant(Tensor::zeros(2, 6));
        assert!(matches!(append_prompts(&mut tape, wide, leaves.prompts), Err(Error::Shape { .. })));
    }

    #[test]
    fn single_row_and_zero_scores() {
        let (mut params, _) = init_params(&small(0), 2).unwrap();
        let mut tape = Tape::new();
        let leaves = MainLeaves::register(&mut tape, &params);
        let one = tape.constant(bag(1).instances);
        let p = abmil_pool(&mut tape, one, &leaves.attention).unwrap();
        assert_eq!(tape.value(p.attention).values(), &[1.0]);
        assert_eq!(tape.value(p.z), tape.value(one));

        params.att_w = Tensor::zeros(3, 1);
        let mut tape = Tape::new();
        let leaves = MainLeaves::register(&mut tape, &params);
        let b = bag(4);
        let h = tape.constant(b.instances.clone());
        let p = abmil_pool(&mut tape, h, &leaves.attention).unwrap();
        assert!(tape.value(p.attention).values().iter().all(|a| *a == 0.25));
        for c in 0..5 {
            let mean = (0..4).map(|r| b.instances.get(r, c)).sum::<f64>() / 4.0;
            assert!((tape.value(p.z).get(0, c) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_does_not_depend_on_lambda() {
        let (params, _) = init_params(&small(2), 3).unwrap();
        let run = |lambda| {
            let mut tape = Tape::new();
            let leaves = MainLeaves::register(&mut tape, &params);
            let o = main_forward(&mut tape, &leaves, &bag(6), lambda).unwrap();
            [o.projection, o.y_logits, o.d_logits].map(|id| tape.value(id).clone())
        };
        assert_eq!(run(0.0), run(0.5));
        assert_eq!(run(0.0), run(1.0));
    }

    #[test]
    fn zero_lambda_blocks_domain_gradient() {
        let (params, _) = init_params(&small(2), 4).unwrap();
        let mut tape = Tape::new();
        let leaves = MainLeaves::register(&mut tape, &params);
        let o = main_forward(&mut tape, &leaves, &bag(6), 0.0).unwrap();
        let root = tape.sum(o.d_logits);
        tape.backward(root).unwrap();
        for (name, grad) in leaves.gradients(&tape) {
            let zero = grad.values().iter().all(|g| *g == 0.0);
            assert_eq!(zero, !name.starts_with("domain."), "{name}");
        }
    }

    #[test]
    fn gene_forward_shapes() {
        let (_, mut gene) = init_params(&small(0), 5).unwrap();
        gene.encoder.bias = Tensor::zeros(1, 4);
        let mut tape = Tape::new();
        let leaves = GeneLeaves::register(&mut tape, &gene, false);
        let o = gene_forward(&mut tape, &leaves, &[0.0; 4]).unwrap();
        assert!(tape.value(o.embedding).values().iter().all(|v| *v == 0.0));
        assert_eq!(tape.value(o.logits).shape(), (1, 4));
        assert!(matches!(gene_forward(&mut tape, &leaves, &[0.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn bad_bags_are_rejected() {
        let (params, _) = init_params(&small(0), 6).unwrap();
        let mut b = bag(2);
        b.instances = Tensor::zeros(2, 4);
        assert!(matches!(check_bag(&b, &params), Err(Error::Shape { .. })));
        assert!(MainLeaves::bind(&mut Tape::new(), &params.config, &[]).is_err());
    }
}
