//! Stratified hold-out split and stratified k-fold assignment.
//!
//! Strata are `(subtype, domain)` pairs. Within a stratum, ids are sorted and
//! then shuffled with a seeded ChaCha stream, so every result is a pure
//! function of the dataset and the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_TEST_FRACTION: f64 = 0.15;
pub const DEFAULT_FOLDS: usize = 5;

type Stratum = (usize, usize);

fn strata<'a>(dataset: &'a Dataset, ids: Option<&BTreeSet<&str>>) -> BTreeMap<Stratum, Vec<&'a str>> {
    let mut out: BTreeMap<Stratum, Vec<&str>> = BTreeMap::new();
    for bag in &dataset.bags {
        if ids.is_none_or(|s| s.contains(bag.id.as_str())) {
            out.entry((bag.subtype, bag.domain)).or_default().push(bag.id.as_str());
        }
    }
    for members in out.values_mut() {
        members.sort_unstable();
    }
    out
}

/// Per-stratum test counts: floors of the exact share plus largest-remainder
/// top-up so the total is exactly `round(fraction * N)`.
pub fn largest_remainder_quotas(sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let exact: Vec<f64> = sizes.iter().map(|s| fraction * *s as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(assigned);
    for i in order {
        if missing == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            missing -= 1;
        }
    }
    quotas
}

/// Ids held out for final testing, stratified by `(subtype, domain)`.
pub fn stratified_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::contract(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let groups = strata(dataset, None);
    for t in 0..dataset.num_subtypes {
        for o in 0..dataset.num_domains {
            if !groups.contains_key(&(t, o)) {
                warn!("stratum (subtype {t}, domain {o}) is empty");
            }
        }
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let quotas = largest_remainder_quotas(&sizes, test_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    for (members, q) in groups.values().zip(quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        test.extend(shuffled.into_iter().take(q).map(str::to_string));
    }
    test.sort();
    Ok(test)
}

/// Stratified k-fold assignment of `train_ids`. Members of each stratum are
/// dealt round-robin with a counter carried across strata, so both the
/// per-stratum and the overall fold sizes differ by at most one.
pub fn kfold(dataset: &Dataset, train_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::contract(format!("k-fold needs k >= 2, got {k}")));
    }
    let wanted: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    let known: BTreeSet<&str> = dataset.bags.iter().map(|b| b.id.as_str()).collect();
    if let Some(missing) = wanted.iter().find(|id| !known.contains(*id)) {
        return Err(Error::Data(format!("unknown sample id `{missing}`")));
    }
    let groups = strata(dataset, Some(&wanted));
    if let Some(((t, o), m)) = groups.iter().find(|(_, m)| m.len() < k) {
        warn!(
            "stratum (subtype {t}, domain {o}) has {} samples for {k} folds; stratification relaxed",
            m.len()
        );
    }
    // Distinct stream from the hold-out split.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0usize;
    for members in groups.values() {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for id in shuffled {
            folds[next % k].push(id.to_string());
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// Held-out test ids plus k folds over the remaining training ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub test_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl SplitPlan {
    pub fn new(dataset: &Dataset, test_fraction: f64, k: usize, seed: u64) -> Result<Self> {
        let test_ids = stratified_split(dataset, test_fraction, seed)?;
        let test: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
        let train: Vec<String> = dataset
            .bags
            .iter()
            .filter(|b| !test.contains(b.id.as_str()))
            .map(|b| b.id.clone())
            .collect();
        let folds = kfold(dataset, &train, k, seed)?;
        Ok(SplitPlan { seed, test_ids, folds })
    }

    pub fn num_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn train_ids(&self) -> Vec<String> {
        let mut all: Vec<String> = self.folds.iter().flatten().cloned().collect();
        all.sort();
        all
    }

    fn check_fold(&self, fold: usize) -> Result<()> {
        if fold >= self.folds.len() {
            return Err(Error::contract(format!(
                "fold {fold} out of range for {} folds",
                self.folds.len()
            )));
        }
        Ok(())
    }

    /// Validation ids of run `fold`.
    pub fn fold_val(&self, fold: usize) -> Result<Vec<String>> {
        self.check_fold(fold)?;
        Ok(self.folds[fold].clone())
    }

    /// Training ids of run `fold`: every other fold.
    pub fn fold_train(&self, fold: usize) -> Result<Vec<String>> {
        self.check_fold(fold)?;
        let mut ids: Vec<String> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Checks disjointness of test and folds and that together they cover `dataset`.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.test_ids.iter().chain(self.folds.iter().flatten()) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("id `{id}` assigned twice in split plan")));
            }
        }
        let all: BTreeSet<&str> = dataset.bags.iter().map(|b| b.id.as_str()).collect();
        if seen != all {
            return Err(Error::Data("split plan does not cover the dataset exactly".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
