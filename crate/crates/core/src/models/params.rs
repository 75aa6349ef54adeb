use std::collections::BTreeMap;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Dense layer `y = x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }
}

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// Named view over a set of trainable tensors.
pub trait ParamSet {
    fn named(&self) -> Vec<(&'static str, &Tensor)>;
    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)>;

    fn is_frozen(&self) -> bool {
        false
    }

    fn get(&self, name: &str) -> Option<&Tensor> {
        self.named().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    fn num_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Trainable tensors of the WSI branch: prompts, attention pool, shared
/// extractor, Siamese head, label predictor and domain classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MainParams {
    pub config: ModelConfig,
    pub prompts: Tensor,
    /// `hidden_att x d`
    pub att_v: Tensor,
    /// `hidden_att x 1`
    pub att_w: Tensor,
    /// Gate projection, `hidden_att x d`, present only for gated attention.
    pub att_u: Option<Tensor>,
    pub extractor: Linear,
    pub head_hidden: Linear,
    pub head_out: Linear,
    pub label: Linear,
    /// Optional hidden layer of the domain classifier, `emb x domain_hidden`.
    pub domain_hidden: Option<Linear>,
    pub domain: Linear,
}

pub const PROMPTS: &str = "prompts";
pub const ATT_V: &str = "att.V";
pub const ATT_W: &str = "att.w";
pub const ATT_U: &str = "att.U";
pub const EXTRACTOR_W: &str = "extractor.weight";
pub const EXTRACTOR_B: &str = "extractor.bias";
pub const HEAD_HIDDEN_W: &str = "head.0.weight";
pub const HEAD_HIDDEN_B: &str = "head.0.bias";
pub const HEAD_OUT_W: &str = "head.1.weight";
pub const HEAD_OUT_B: &str = "head.1.bias";
pub const LABEL_W: &str = "label.weight";
pub const LABEL_B: &str = "label.bias";
pub const DOMAIN_HIDDEN_W: &str = "domain.hidden.weight";
pub const DOMAIN_HIDDEN_B: &str = "domain.hidden.bias";
pub const DOMAIN_W: &str = "domain.weight";
pub const DOMAIN_B: &str = "domain.bias";
pub const GENE_FC_W: &str = "gene.fc.weight";
pub const GENE_FC_B: &str = "gene.fc.bias";
pub const GENE_CLF_W: &str = "gene.clf.weight";
pub const GENE_CLF_B: &str = "gene.clf.bias";

/// Parameter groups, used to decide which tensors a training stage updates.
pub const ATTENTION_GROUP: &[&str] = &[PROMPTS, ATT_V, ATT_W, ATT_U];
pub const EXTRACTOR_GROUP: &[&str] = &[EXTRACTOR_W, EXTRACTOR_B];
pub const HEAD_GROUP: &[&str] = &[HEAD_HIDDEN_W, HEAD_HIDDEN_B, HEAD_OUT_W, HEAD_OUT_B];
pub const LABEL_GROUP: &[&str] = &[LABEL_W, LABEL_B];
pub const DOMAIN_GROUP: &[&str] = &[DOMAIN_HIDDEN_W, DOMAIN_HIDDEN_B, DOMAIN_W, DOMAIN_B];

impl MainParams {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config;
        MainParams {
            config: c.clone(),
            prompts: Tensor::zeros(c.n_prompts, c.d),
            att_v: Tensor::zeros(c.hidden_att, c.d),
            att_w: Tensor::zeros(c.hidden_att, 1),
            att_u: c.gated.then(|| Tensor::zeros(c.hidden_att, c.d)),
            extractor: Linear::zeros(c.d, c.emb),
            head_hidden: Linear::zeros(c.emb, c.emb),
            head_out: Linear::zeros(c.emb, c.emb),
            label: Linear::zeros(c.emb, c.num_subtypes),
            domain_hidden: (c.domain_hidden > 0).then(|| Linear::zeros(c.emb, c.domain_hidden)),
            domain: Linear::zeros(c.domain_input(), c.num_domains),
        }
    }

    /// Rebuilds parameters from `(name, tensor)` pairs, checking every shape.
    pub fn from_named(config: &ModelConfig, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut out = MainParams::zeros(config);
        fill_from(&mut out, entries)?;
        Ok(out)
    }
}

impl ParamSet for MainParams {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![(PROMPTS, &self.prompts), (ATT_V, &self.att_v), (ATT_W, &self.att_w)];
        if let Some(u) = &self.att_u {
            v.push((ATT_U, u));
        }
        v.extend([
            (EXTRACTOR_W, &self.extractor.weight),
            (EXTRACTOR_B, &self.extractor.bias),
            (HEAD_HIDDEN_W, &self.head_hidden.weight),
            (HEAD_HIDDEN_B, &self.head_hidden.bias),
            (HEAD_OUT_W, &self.head_out.weight),
            (HEAD_OUT_B, &self.head_out.bias),
            (LABEL_W, &self.label.weight),
            (LABEL_B, &self.label.bias),
        ]);
        if let Some(h) = &self.domain_hidden {
            v.extend([(DOMAIN_HIDDEN_W, &h.weight), (DOMAIN_HIDDEN_B, &h.bias)]);
        }
        v.extend([(DOMAIN_W, &self.domain.weight), (DOMAIN_B, &self.domain.bias)]);
        v
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v = vec![
            (PROMPTS, &mut self.prompts),
            (ATT_V, &mut self.att_v),
            (ATT_W, &mut self.att_w),
        ];
        if let Some(u) = &mut self.att_u {
            v.push((ATT_U, u));
        }
        v.extend([
            (EXTRACTOR_W, &mut self.extractor.weight),
            (EXTRACTOR_B, &mut self.extractor.bias),
            (HEAD_HIDDEN_W, &mut self.head_hidden.weight),
            (HEAD_HIDDEN_B, &mut self.head_hidden.bias),
            (HEAD_OUT_W, &mut self.head_out.weight),
            (HEAD_OUT_B, &mut self.head_out.bias),
            (LABEL_W, &mut self.label.weight),
            (LABEL_B, &mut self.label.bias),
        ]);
        if let Some(h) = &mut self.domain_hidden {
            v.extend([(DOMAIN_HIDDEN_W, &mut h.weight), (DOMAIN_HIDDEN_B, &mut h.bias)]);
        }
        v.extend([(DOMAIN_W, &mut self.domain.weight), (DOMAIN_B, &mut self.domain.bias)]);
        v
    }
}

/// Gene encoder (single FC + SELU) and its pretraining classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneParams {
    pub config: ModelConfig,
    pub encoder: Linear,
    pub classifier: Linear,
    pub frozen: bool,
}

impl GeneParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        GeneParams {
            config: config.clone(),
            encoder: Linear::zeros(config.gene_dim, config.emb),
            classifier: Linear::zeros(config.emb, config.num_subtypes),
            frozen: false,
        }
    }

    pub fn from_named(config: &ModelConfig, entries: Vec<(String, Tensor)>, frozen: bool) -> Result<Self> {
        let mut out = GeneParams::zeros(config);
        fill_from(&mut out, entries)?;
        out.frozen = frozen;
        Ok(out)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

impl ParamSet for GeneParams {
    fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            (GENE_FC_W, &self.encoder.weight),
            (GENE_FC_B, &self.encoder.bias),
            (GENE_CLF_W, &self.classifier.weight),
            (GENE_CLF_B, &self.classifier.bias),
        ]
    }

    fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            (GENE_FC_W, &mut self.encoder.weight),
            (GENE_FC_B, &mut self.encoder.bias),
            (GENE_CLF_W, &mut self.classifier.weight),
            (GENE_CLF_B, &mut self.classifier.bias),
        ]
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

fn fill_from(target: &mut impl ParamSet, entries: Vec<(String, Tensor)>) -> Result<()> {
    let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, t) in entries {
        if by_name.insert(name.clone(), t).is_some() {
            return Err(Error::Data(format!("duplicate parameter `{name}`")));
        }
    }
    for (name, slot) in target.named_mut() {
        let t = by_name
            .remove(name)
            .ok_or_else(|| Error::Data(format!("missing parameter `{name}`")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Shape {
                op: name,
                lhs: slot.shape(),
                rhs: t.shape(),
            });
        }
        *slot = t;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Data(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}
