use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshcore::SplitDataset;

/// Greedy kernel-herding subset and its discrepancy from the full pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdSelection {
    /// Pool indices in selection order.
    pub indices: Vec<usize>,
    /// MMD of the final subset.
    pub mmd: f64,
    /// MMD after each selection step.
    pub trace: Vec<f64>,
    pub bandwidth: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the pairwise Euclidean distances, falling back to 1 when every
/// point coincides.
pub fn median_bandwidth(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    let med = if d.len() % 2 == 1 {
        d[m]
    } else {
        0.5 * (d[m - 1] + d[m])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// RBF kernel matrix `exp(−‖a − b‖² / (2σ²))` over a pool, with helpers for
/// subset discrepancies.
pub struct KernelPool {
    k: Vec<Vec<f64>>,
    /// `mean_j k(i, j)` over the whole pool.
    row_mean: Vec<f64>,
    pool_mean: f64,
}

impl KernelPool {
    pub fn new(points: &[Vec<f64>], bandwidth: f64) -> Self {
        let n = points.len();
        let denom = 2.0 * bandwidth * bandwidth;
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (-sq_dist(&points[i], &points[j]) / denom).exp())
                    .collect()
            })
            .collect();
        let row_mean: Vec<f64> = k.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let pool_mean = row_mean.iter().sum::<f64>() / n as f64;
        KernelPool {
            k,
            row_mean,
            pool_mean,
        }
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// Squared MMD between `subset` and the pool. The sums run in the same
    /// order as the pool terms, so the full pool in index order gives
    /// exactly zero.
    pub fn mmd_squared(&self, subset: &[usize]) -> f64 {
        let mut s = subset.to_vec();
        s.sort_unstable();
        let m = s.len() as f64;
        let within = s
            .iter()
            .map(|&i| s.iter().map(|&j| self.k[i][j]).sum::<f64>() / m)
            .sum::<f64>()
            / m;
        let cross = s.iter().map(|&i| self.row_mean[i]).sum::<f64>() / m;
        within - 2.0 * cross + self.pool_mean
    }

    pub fn mmd(&self, subset: &[usize]) -> f64 {
        self.mmd_squared(subset).max(0.0).sqrt()
    }
}

/// Kernel herding: a seeded random first index, then at each step the pool
/// index whose addition gives the smallest MMD (lowest index on ties).
pub fn select_hr_mmd(
    points: &[Vec<f64>],
    n_h: usize,
    bandwidth: Option<f64>,
    seed: u64,
) -> Result<MmdSelection> {
    if n_h == 0 || n_h > points.len() {
        return Err(Error::Validation(format!(
            "cannot select {n_h} samples from a pool of {}",
            points.len()
        )));
    }
    let bandwidth = bandwidth.unwrap_or_else(|| median_bandwidth(points));
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Config(format!(
            "kernel bandwidth must be positive, got {bandwidth}"
        )));
    }
    let pool = KernelPool::new(points, bandwidth);
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    // Σ_{s ∈ S} k(s, c) and Σ_{s ∈ S} row_mean(s), maintained incrementally
    let mut to_set: Vec<f64> = pool.k[first].clone();
    let mut within = pool.k[first][first];
    let mut cross = pool.row_mean[first];
    let mut trace = vec![pool.mmd(&chosen)];
    while chosen.len() < n_h {
        let m = (chosen.len() + 1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for c in (0..n).filter(|&c| !taken[c]) {
            let w = within + 2.0 * to_set[c] + pool.k[c][c];
            let x = cross + pool.row_mean[c];
            let score = w / (m * m) - 2.0 * x / m;
            if best.is_none_or(|(b, _)| score < b) {
                best = Some((score, c));
            }
        }
        let (_, c) = best.expect("pool has unselected points");
        within += 2.0 * to_set[c] + pool.k[c][c];
        cross += pool.row_mean[c];
        for (t, kc) in to_set.iter_mut().zip(&pool.k[c]) {
            *t += kc;
        }
        taken[c] = true;
        chosen.push(c);
        trace.push(pool.mmd(&chosen));
    }
    Ok(MmdSelection {
        mmd: pool.mmd(&chosen),
        indices: chosen,
        trace,
        bandwidth,
    })
}

/// MMD of `draws` uniformly random `n_h`-subsets of the pool, in draw order.
pub fn random_subset_mmds(
    pool: &KernelPool,
    n_h: usize,
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_h == 0 || n_h > pool.len() {
        return Err(Error::Validation(format!(
            "cannot draw {n_h} samples from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..draws)
        .map(|_| pool.mmd(&rand::seq::index::sample(&mut rng, pool.len(), n_h).into_vec()))
        .collect())
}

/// Flattened normalized LR fields of the paired samples, the embedding used
/// to choose which of them keep their HR labels.
pub fn paired_lr_embeddings(ds: &SplitDataset) -> Result<Vec<Vec<f64>>> {
    let width = ds.paired.first().map(|p| p.lr.values.len());
    ds.paired
        .iter()
        .map(|p| {
            if Some(p.lr.values.len()) != width {
                return Err(Error::Validation(
                    "LR samples differ in size; cannot flatten".into(),
                ));
            }
            Ok(ds.stats.field.normalize(&p.lr.values)?.into_data())
        })
        .collect()
}
