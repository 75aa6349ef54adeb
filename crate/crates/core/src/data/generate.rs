use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::models::Bag;

/// Class proportions of the four TME subtypes (D, IE, F, IE/F) in the
/// reference cohort.
pub const SUBTYPE_COUNTS: [f64; 4] = [3133.0, 1912.0, 1718.0, 1261.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_samples: usize,
    pub num_domains: usize,
    pub d: usize,
    pub gene_dim: usize,
    /// Echoed into the dataset header; the generator itself does not use it.
    pub emb: usize,
    pub bag_size_range: [usize; 2],
    /// Magnitude of the subtype direction in signal instances and genes.
    pub subtype_signal: f64,
    /// Magnitude of the origin direction in every instance and in genes.
    pub domain_signal: f64,
    /// Fraction of instances per bag that carry the subtype direction.
    pub signal_fraction: f64,
    pub noise_std: f64,
    pub class_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_samples: 600,
            num_domains: 8,
            d: 192,
            gene_dim: 64,
            emb: 128,
            bag_size_range: [8, 64],
            subtype_signal: 1.0,
            domain_signal: 1.0,
            signal_fraction: 0.3,
            noise_std: 1.0,
            class_weights: SUBTYPE_COUNTS.to_vec(),
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn num_subtypes(&self) -> usize {
        self.class_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.bag_size_range;
        if lo == 0 || lo > hi {
            return Err(Error::contract(format!("invalid bag_size_range [{lo}, {hi}]")));
        }
        if self.class_weights.len() < 2 || self.class_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::contract("class_weights must hold at least two positive weights"));
        }
        if self.num_domains == 0 || self.num_domains > u16::MAX as usize + 1 {
            return Err(Error::contract("num_domains must be in 1..=65536"));
        }
        if self.d == 0 || self.gene_dim == 0 {
            return Err(Error::contract("d and gene_dim must be positive"));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return Err(Error::contract("signal_fraction must lie in (0, 1]"));
        }
        if !(self.subtype_signal >= 0.0 && self.domain_signal >= 0.0 && self.noise_std >= 0.0) {
            return Err(Error::contract("signal strengths and noise_std must be >= 0"));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `count` orthonormal directions in `R^dim` (QR of a Gaussian matrix). When
/// `count > dim` the directions are independent unit vectors instead.
fn directions(rng: &mut impl Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let m = DMatrix::from_fn(dim, count, |_, _| gaussian(rng));
    if count <= dim {
        let q = m.qr().q();
        (0..count).map(|c| q.column(c).iter().copied().collect()).collect()
    } else {
        (0..count)
            .map(|c| {
                let col: Vec<f64> = m.column(c).iter().copied().collect();
                let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                col.into_iter().map(|v| v / n).collect()
            })
            .collect()
    }
}

/// Synthetic cohort with a planted subtype signal and an origin confounder
/// present in both the instance bags and the gene vectors.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let c = config;
    let t_count = c.num_subtypes();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let dirs = directions(&mut rng, c.d, t_count + c.num_domains);
    let (subtype_dirs, domain_dirs) = dirs.split_at(t_count);
    let gene_subtype: Vec<Vec<f64>> = (0..t_count)
        .map(|_| (0..c.gene_dim).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let gene_domain: Vec<Vec<f64>> = (0..c.num_domains)
        .map(|_| (0..c.gene_dim).map(|_| gaussian(&mut rng)).collect())
        .collect();

    let subtype_dist = WeightedIndex::new(&c.class_weights)
        .map_err(|e| Error::contract(format!("class_weights: {e}")))?;
    let [lo, hi] = c.bag_size_range;

    let mut bags = Vec::with_capacity(c.num_samples);
    for i in 0..c.num_samples {
        let subtype = subtype_dist.sample(&mut rng);
        let domain = rng.random_range(0..c.num_domains);
        let n = rng.random_range(lo..=hi);
        let n_signal = ((c.signal_fraction * n as f64).round() as usize).clamp(1, n);
        let mut is_signal = vec![false; n];
        for k in index::sample(&mut rng, n, n_signal) {
            is_signal[k] = true;
        }

        let u = &subtype_dirs[subtype];
        let v = &domain_dirs[domain];
        let mut data = Vec::with_capacity(n * c.d);
        for signal in is_signal {
            for j in 0..c.d {
                let mut x = c.domain_signal * v[j] + c.noise_std * gaussian(&mut rng);
                if signal {
                    x += c.subtype_signal * u[j];
                }
                data.push(x);
            }
        }
        let genes: Vec<f64> = (0..c.gene_dim)
            .map(|j| {
                c.subtype_signal * gene_subtype[subtype][j]
                    + c.domain_signal * gene_domain[domain][j]
                    + c.noise_std * gaussian(&mut rng)
            })
            .collect();

        bags.push(Bag {
            id: format!("S{i:05}"),
            instances: Tensor::new(n, c.d, data)?,
            subtype,
            domain,
            genes: Some(genes),
        });
    }

    Dataset::new(bags, t_count, c.num_domains, Some(c.clone()))
}
