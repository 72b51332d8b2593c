use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::poisson::draw_rng;
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::meshcore::{compute_stats, FieldSample, Mesh, Pair, SplitDataset, Unpaired};

/// Analytic fields `u*(x, y; μ) = μ₀ sin(πμ₁x) sin(πμ₂y)` on per-sample
/// jittered grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterSpec {
    pub n_lr: usize,
    pub n_hr: usize,
    /// Maximum interior-node displacement per axis, as a fraction of the
    /// grid spacing.
    pub jitter: f64,
    /// Blend between the sampled LR field (0) and its 1-ring average (1).
    pub smoothing: f64,
    pub amplitude: [f64; 2],
    pub frequency: [f64; 2],
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            n_lr: 9,
            n_hr: 17,
            jitter: 0.25,
            smoothing: 0.5,
            amplitude: [0.5, 1.5],
            frequency: [1.0, 3.0],
        }
    }
}

impl JitterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_lr < 2 || self.n_hr < 2 {
            return Err(Error::Config(
                "jitter grids need at least 2 nodes per side".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config(format!(
                "jitter must lie in [0, 0.5), got {}",
                self.jitter
            )));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!(
                "smoothing must lie in [0, 1], got {}",
                self.smoothing
            )));
        }
        for (name, [lo, hi]) in [("amplitude", self.amplitude), ("frequency", self.frequency)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] is invalid"
                )));
            }
        }
        Ok(())
    }
}

pub fn manufactured_field(mu: &[f64], x: f64, y: f64) -> f64 {
    mu[0] * (PI * mu[1] * x).sin() * (PI * mu[2] * y).sin()
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Regular `n × n` grid with every interior node moved independently by up
/// to `jitter · spacing` per axis.
pub fn jittered_grid(n: usize, jitter: f64, rng: &mut impl Rng) -> Result<Mesh> {
    let base = Mesh::unit_square_grid(n, n)?;
    let h = 1.0 / (n - 1) as f64;
    let mut pos = base.positions().clone();
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let row = pos.row_mut(j * n + i);
            for v in row.iter_mut() {
                if jitter > 0.0 {
                    *v += rng.random_range(-jitter..jitter) * h;
                }
            }
        }
    }
    Mesh::new(pos, base.edges().to_vec())
}

fn sample_field(mesh: &Mesh, mu: &[f64]) -> Vec<f64> {
    (0..mesh.n_nodes())
        .map(|i| {
            let p = mesh.position(i);
            manufactured_field(mu, p[0], p[1])
        })
        .collect()
}

/// `(1 − s)·u_i + s·mean(u over i and its neighbours)`.
pub fn ring_smooth(mesh: &Mesh, values: &[f64], s: f64) -> Vec<f64> {
    let adj = mesh.neighbors();
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ring: f64 = v + adj[i].iter().map(|&j| values[j]).sum::<f64>();
            let avg = ring / (adj[i].len() + 1) as f64;
            (1.0 - s) * v + s * avg
        })
        .collect()
}

/// `n` training draws (first `n_h` paired) and `n_test` test pairs, each on
/// its own jittered LR and HR meshes.
pub fn gen_jitter_dataset(
    spec: &JitterSpec,
    n: usize,
    n_h: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitDataset> {
    spec.validate()?;
    if n_h < 2 || n_h > n {
        return Err(Error::Validation(format!(
            "need 2 <= N_h <= N, got N_h = {n_h}, N = {n}"
        )));
    }
    let mut meshes = Vec::new();
    let mut paired = Vec::new();
    let mut unpaired = Vec::new();
    let mut test = Vec::new();
    for index in 0..n + n_test {
        let mut rng = draw_rng(seed, index);
        let mu = vec![
            uniform(&mut rng, spec.amplitude),
            uniform(&mut rng, spec.frequency),
            uniform(&mut rng, spec.frequency),
        ];
        let lr_mesh = jittered_grid(spec.n_lr, spec.jitter, &mut rng)?;
        let hr_mesh = jittered_grid(spec.n_hr, spec.jitter, &mut rng)?;
        let lr_values = ring_smooth(&lr_mesh, &sample_field(&lr_mesh, &mu), spec.smoothing);
        let lr = FieldSample {
            mesh_id: meshes.len(),
            values: Tensor::matrix(lr_mesh.n_nodes(), 1, lr_values),
            mu: mu.clone(),
        };
        let hr_id = meshes.len() + 1;
        let hr_values = sample_field(&hr_mesh, &mu);
        let hr_nodes = hr_mesh.n_nodes();
        meshes.push(lr_mesh);
        meshes.push(hr_mesh);
        if index < n_h || index >= n {
            let hr = FieldSample {
                mesh_id: hr_id,
                values: Tensor::matrix(hr_nodes, 1, hr_values),
                mu,
            };
            if index < n {
                paired.push(Pair { lr, hr });
            } else {
                test.push(Pair { lr, hr });
            }
        } else {
            unpaired.push(Unpaired {
                lr,
                hr_mesh_id: hr_id,
            });
        }
    }
    let stats = compute_stats(
        &meshes,
        paired
            .iter()
            .map(|p| &p.lr)
            .chain(unpaired.iter().map(|u| &u.lr)),
    )?;
    let ds = SplitDataset {
        meshes,
        paired,
        unpaired,
        test,
        stats,
        provenance: serde_json::json!({
            "generator": "jitter",
            "spec": spec,
            "seed": seed,
            "n": n,
            "n_h": n_h,
            "n_test": n_test,
        }),
    };
    ds.validate()?;
    Ok(ds)
}
