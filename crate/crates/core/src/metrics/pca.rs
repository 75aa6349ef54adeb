use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Pca2d {
    pub coords: Vec<[f64; 2]>,
    pub mean: Vec<f64>,
    /// Unit principal directions, largest variance first.
    pub components: [Vec<f64>; 2],
    pub explained_variance_ratio: [f64; 2],
}

impl Pca2d {
    pub fn reconstruct(&self, i: usize) -> Vec<f64> {
        let [a, b] = self.coords[i];
        self.mean
            .iter()
            .zip(self.components[0].iter().zip(&self.components[1]))
            .map(|(m, (u, v))| m + a * u + b * v)
            .collect()
    }
}

/// Projection onto the top two principal directions of the sample covariance.
/// Each component's sign makes its largest-magnitude coordinate positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Pca2d> {
    let n = points.len();
    if n < 3 {
        return Err(Error::contract(format!("pca_2d needs at least 3 points, got {n}")));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::contract("pca_2d points must share a positive width"));
    }
    let mean: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components: [Vec<f64>; 2] = [vec![0.0; dim], vec![0.0; dim]];
    let mut ratio = [0.0; 2];
    let mut coords = vec![[0.0; 2]; n];
    for c in 0..2.min(dim) {
        let k = order[c];
        let mut dir: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let proj: Vec<f64> = (0..n)
            .map(|i| x.row(i).iter().zip(&dir).map(|(a, b)| a * b).sum())
            .collect();
        let extreme = proj
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if extreme < 0.0 { -1.0 } else { 1.0 };
        dir.iter_mut().for_each(|v| *v *= sign);
        for (i, p) in proj.iter().enumerate() {
            coords[i][c] = sign * p;
        }
        ratio[c] = eig.eigenvalues[k].max(0.0) / total;
        components[c] = dir;
    }
    Ok(Pca2d {
        coords,
        mean,
        components,
        explained_variance_ratio: ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn planar_points_reconstruct_exactly() {
        let u = [1.0, 2.0, 0.0, -1.0];
        let v = [0.0, 1.0, 1.0, 1.0];
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let (a, b) = ((i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.91).cos());
                (0..4).map(|j| 5.0 + a * u[j] + b * v[j]).collect()
            })
            .collect();
        let pca = pca_2d(&pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let r = pca.reconstruct(i);
            for (a, b) in p.iter().zip(&r) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!((pca.explained_variance_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_noise_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 16;
        let pts: Vec<Vec<f64>> = (0..20_000)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let pca = pca_2d(&pts).unwrap();
        let ratio: f64 = pca.explained_variance_ratio.iter().sum();
        assert!((ratio - 2.0 / dim as f64).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn row_order_invariance_and_degenerate() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64 * 0.1, 1.0]).collect();
        let mut rev = pts.clone();
        rev.reverse();
        let a = pca_2d(&pts).unwrap();
        let b = pca_2d(&rev).unwrap();
        for i in 0..7 {
            for c in 0..2 {
                assert!((a.coords[i][c] - b.coords[6 - i][c]).abs() < 1e-9);
            }
        }
        assert!(matches!(pca_2d(&vec![vec![1.0, 2.0]; 4]), Err(Error::Degenerate(_))));
    }
}
