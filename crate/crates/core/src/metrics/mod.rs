//! Ranking and classification metrics, a domain-leakage probe, and
//! embedding export.

mod classification;
mod pca;
mod probe;
mod ranking;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classification::{accuracy_f1, ClassificationSummary};
pub use pca::{pca_2d, Pca2d};
pub use probe::domain_leakage_probe;
pub use ranking::{average_precision, binary_roc_auc, pr_auc_macro, roc_auc_macro_ovr};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    /// Within-domain macro OVR ROC AUC; `None` when the domain holds a single class.
    pub rocauc: Option<f64>,
    pub acc: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rocauc: f64,
    pub prauc: f64,
    pub acc: f64,
    pub f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_domain: Option<BTreeMap<usize, DomainMetrics>>,
    pub n_samples: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Full report from class probabilities. `domains`, when given, adds the
/// per-domain breakdown.
pub fn evaluate(probs: &[Vec<f64>], labels: &[usize], domains: Option<&[usize]>) -> Result<MetricsReport> {
    let classes = probs.first().map_or(0, Vec::len);
    let pred: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    let cls = accuracy_f1(&pred, labels, classes)?;
    let per_domain = match domains {
        None => None,
        Some(doms) => {
            if doms.len() != labels.len() {
                return Err(Error::contract("domain labels differ in length"));
            }
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, d) in doms.iter().enumerate() {
                groups.entry(*d).or_default().push(i);
            }
            let mut out = BTreeMap::new();
            for (d, idx) in groups {
                let p: Vec<Vec<f64>> = idx.iter().map(|&i| probs[i].clone()).collect();
                let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let rocauc = match roc_auc_macro_ovr(&p, &l) {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedMetric(_)) => None,
                    Err(e) => return Err(e),
                };
                let correct = idx.iter().filter(|&&i| pred[i] == labels[i]).count();
                out.insert(
                    d,
                    DomainMetrics {
                        rocauc,
                        acc: correct as f64 / idx.len() as f64,
                        n_samples: idx.len(),
                    },
                );
            }
            Some(out)
        }
    };
    Ok(MetricsReport {
        rocauc: roc_auc_macro_ovr(probs, labels)?,
        prauc: pr_auc_macro(probs, labels)?,
        acc: cls.acc,
        f1: cls.f1_macro,
        confusion: cls.confusion,
        per_domain,
        n_samples: labels.len(),
    })
}

#[derive(Debug, Clone)]
pub struct EmbeddingRow {
    pub sample_id: String,
    pub domain: usize,
    pub subtype: usize,
    pub embedding: Vec<f64>,
}

/// CSV with header `sample_id,domain,subtype,e_0..e_{k-1}` plus
/// `pca_x,pca_y` when coordinates are supplied.
pub fn embeddings_csv(rows: &[EmbeddingRow], pca: Option<&[[f64; 2]]>) -> Result<String> {
    let width = rows.first().map_or(0, |r| r.embedding.len());
    if let Some(p) = pca {
        if p.len() != rows.len() {
            return Err(Error::contract("pca coordinates differ in length from rows"));
        }
    }
    let mut out = String::from("sample_id,domain,subtype");
    for j in 0..width {
        write!(out, ",e_{j}").expect("write to string");
    }
    if pca.is_some() {
        out.push_str(",pca_x,pca_y");
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        if r.embedding.len() != width {
            return Err(Error::contract("embeddings have unequal widths"));
        }
        write!(out, "{},{},{}", r.sample_id, r.domain, r.subtype).expect("write to string");
        for v in &r.embedding {
            write!(out, ",{v}").expect("write to string");
        }
        if let Some(p) = pca {
            write!(out, ",{},{}", p[i][0], p[i][1]).expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow], pca: Option<&[[f64; 2]]>) -> Result<()> {
    fs::write(path, embeddings_csv(rows, pca)?)?;
    Ok(())
}
