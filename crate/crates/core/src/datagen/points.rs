use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

const PLACEMENT_RETRIES: usize = 1000;

/// Isotropic Gaussian point cloud with well-separated centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointCloudSpec {
    pub n_points: usize,
    pub k_true: usize,
    pub dim: usize,
    /// Minimum pairwise center distance, in units of `noise_std`.
    pub separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl PointCloudSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_true == 0 || self.n_points < self.k_true {
            return Err(Error::Config(format!(
                "need n_points >= k_true >= 1, got n_points={} k_true={}",
                self.n_points, self.k_true
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!("separation must be >= 0, got {}", self.separation)));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be > 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Points plus the generating component of each, assigned round-robin.
pub fn gen_point_cloud(spec: &PointCloudSpec) -> Result<(Matrix, Vec<u32>)> {
    gen_point_cloud_with_centers(spec).map(|(_, labels, points)| (points, labels))
}

/// Like [`gen_point_cloud`] but also returns the K×dim centers.
pub fn gen_point_cloud_with_centers(spec: &PointCloudSpec) -> Result<(Matrix, Vec<u32>, Matrix)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let min_dist = spec.separation * spec.noise_std;
    let half = min_dist * (spec.k_true as f64).powf(1.0 / spec.dim as f64);

    let centers = place_centers(&mut rng, spec.k_true, spec.dim, min_dist, half)?;

    let labels: Vec<u32> = (0..spec.n_points).map(|n| (n % spec.k_true) as u32).collect();
    let points = Matrix::from_fn(spec.n_points, spec.dim, |n, c| {
        let noise: f64 = rng.sample(StandardNormal);
        centers[labels[n] as usize][c] + spec.noise_std * noise
    });
    let centers = Matrix::from_fn(spec.k_true, spec.dim, |k, c| centers[k][c]);
    Ok((centers, labels, points))
}

/// Rejection-samples `k` centers in `[-half, half]^dim` with pairwise
/// distance at least `min_dist`.
fn place_centers(rng: &mut ChaCha8Rng, k: usize, dim: usize, min_dist: f64, half: f64) -> Result<Vec<Vec<f64>>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for idx in 0..k {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let cand: Vec<f64> = (0..dim)
                .map(|_| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 })
                .collect();
            let ok = centers.iter().all(|c| {
                let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= min_dist
            });
            if ok {
                centers.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place center {idx} at distance {min_dist} after {PLACEMENT_RETRIES} attempts"
            )));
        }
    }
    Ok(centers)
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Data(format!("labelings differ in length: {} vs {}", a.len(), b.len())));
    }
    let ka = a.iter().copied().max().map_or(0, |m| m as usize + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut table = vec![0u64; ka * kb];
    for (&i, &j) in a.iter().zip(b) {
        table[i as usize * kb + j as usize] += 1;
    }
    let index: f64 = table.iter().map(|&n| pairs(n)).sum();
    let rows: f64 = (0..ka).map(|i| pairs(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = pairs(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
