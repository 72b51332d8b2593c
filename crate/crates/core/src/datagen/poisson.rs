use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::meshcore::{compute_stats, FieldSample, Mesh, NormStats, Pair, SplitDataset, Unpaired};

/// `∇²u = f` on the unit square with zero Dirichlet data, where
/// `f = A·exp(−((x−cx)² + (y−cy)²)/w²)` and `μ = (cx, cy, w, A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonSpec {
    pub n_lr: usize,
    pub n_hr: usize,
    pub cx: [f64; 2],
    pub cy: [f64; 2],
    pub width: [f64; 2],
    pub amplitude: [f64; 2],
    pub omega: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PoissonSpec {
    fn default() -> Self {
        PoissonSpec {
            n_lr: 17,
            n_hr: 33,
            cx: [0.25, 0.75],
            cy: [0.25, 0.75],
            width: [0.05, 0.12],
            amplitude: [50.0, 150.0],
            omega: 1.9,
            tolerance: 1e-10,
            max_iterations: 100_000,
        }
    }
}

impl PoissonSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_lr < 3 || self.n_hr < self.n_lr {
            return Err(Error::Config(format!(
                "grid sizes n_lr = {}, n_hr = {} need 3 <= n_lr <= n_hr",
                self.n_lr, self.n_hr
            )));
        }
        if !(self.n_hr - 1).is_multiple_of(self.n_lr - 1) {
            return Err(Error::Config(format!(
                "n_hr - 1 = {} must be a multiple of n_lr - 1 = {}",
                self.n_hr - 1,
                self.n_lr - 1
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::Config(format!(
                "omega must lie in (0, 2), got {}",
                self.omega
            )));
        }
        for (name, [lo, hi]) in [
            ("cx", self.cx),
            ("cy", self.cy),
            ("width", self.width),
            ("amplitude", self.amplitude),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] is invalid"
                )));
            }
        }
        if self.width[0] <= 0.0 {
            return Err(Error::Config("width must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_mu(&self, rng: &mut impl Rng) -> Vec<f64> {
        let draw = |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        };
        vec![
            draw(rng, self.cx),
            draw(rng, self.cy),
            draw(rng, self.width),
            draw(rng, self.amplitude),
        ]
    }

    fn check_mu(&self, mu: &[f64]) -> Result<()> {
        let ranges = [self.cx, self.cy, self.width, self.amplitude];
        if mu.len() != 4
            || mu
                .iter()
                .zip(&ranges)
                .any(|(v, [lo, hi])| !(lo <= v && v <= hi))
        {
            return Err(Error::Validation(format!(
                "mu {mu:?} lies outside the spec ranges"
            )));
        }
        Ok(())
    }
}

pub fn gaussian_source(mu: &[f64]) -> impl Fn(f64, f64) -> f64 + '_ {
    move |x, y| {
        let (cx, cy, w, a) = (mu[0], mu[1], mu[2], mu[3]);
        a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (w * w)).exp()
    }
}

/// Converged grid solution with its final residual.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution {
    /// Node values, index `j * n + i`.
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Max over interior nodes of `|Δ_h u − f|`.
    pub residual: f64,
}

fn max_residual(u: &[f64], f: &[f64], n: usize, inv_h2: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let c = j * n + i;
            let lap = (u[c - 1] + u[c + 1] + u[c - n] + u[c + n] - 4.0 * u[c]) * inv_h2;
            worst = worst.max((lap - f[c]).abs());
        }
    }
    worst
}

/// Five-point finite differences for `∇²u = f` on an `n × n` grid over the
/// unit square, zero on the boundary, solved by SOR until the max residual
/// is at most `tolerance`.
pub fn solve_fd(
    n: usize,
    source: impl Fn(f64, f64) -> f64,
    omega: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<FdSolution> {
    if n < 3 {
        return Err(Error::Config(format!(
            "grid of {n} nodes per side has no interior"
        )));
    }
    let h = 1.0 / (n - 1) as f64;
    let h2 = h * h;
    let inv_h2 = 1.0 / h2;
    let mut f = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            f[j * n + i] = source(i as f64 * h, j as f64 * h);
        }
    }
    let mut u = vec![0.0; n * n];
    let mut residual = max_residual(&u, &f, n, inv_h2);
    let mut iterations = 0;
    while residual > tolerance {
        if iterations == max_iterations {
            return Err(Error::Solver {
                iterations,
                residual,
            });
        }
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let c = j * n + i;
                let gs = 0.25 * (u[c - 1] + u[c + 1] + u[c - n] + u[c + n] - h2 * f[c]);
                u[c] += omega * (gs - u[c]);
            }
        }
        iterations += 1;
        residual = max_residual(&u, &f, n, inv_h2);
    }
    Ok(FdSolution {
        values: u,
        iterations,
        residual,
    })
}

/// Solves the instance `mu` on an `n × n` grid attached to mesh `mesh_id`.
pub fn solve_poisson_fd(
    spec: &PoissonSpec,
    mu: &[f64],
    n: usize,
    mesh_id: usize,
) -> Result<(FieldSample, FdSolution)> {
    spec.check_mu(mu)?;
    let sol = solve_fd(
        n,
        gaussian_source(mu),
        spec.omega,
        spec.tolerance,
        spec.max_iterations,
    )?;
    let sample = FieldSample {
        mesh_id,
        values: Tensor::matrix(n * n, 1, sol.values.clone()),
        mu: mu.to_vec(),
    };
    Ok((sample, sol))
}

/// Independent generator for draw `index` of a dataset seeded with `seed`.
pub(crate) fn draw_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n` training draws (the first `n_h` paired) plus `n_test` test pairs.
/// LR fields come from the coarse solve of every draw; HR fields are solved
/// only where a pair needs them.
pub fn gen_poisson_dataset(
    spec: &PoissonSpec,
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
    let meshes = vec![
        Mesh::unit_square_grid(spec.n_lr, spec.n_lr)?,
        Mesh::unit_square_grid(spec.n_hr, spec.n_hr)?,
    ];
    let mut worst: f64 = 0.0;
    let mut max_iter = 0;
    let mut solve = |mu: &[f64], grid: usize, mesh: usize| -> Result<FieldSample> {
        let (s, sol) = solve_poisson_fd(spec, mu, grid, mesh)?;
        worst = worst.max(sol.residual);
        max_iter = max_iter.max(sol.iterations);
        Ok(s)
    };
    let mut paired = Vec::new();
    let mut unpaired = Vec::new();
    let mut test = Vec::new();
    for index in 0..n + n_test {
        let mu = spec.sample_mu(&mut draw_rng(seed, index));
        let lr = solve(&mu, spec.n_lr, 0)?;
        if index < n_h || index >= n {
            let hr = solve(&mu, spec.n_hr, 1)?;
            let pair = Pair { lr, hr };
            if index < n {
                paired.push(pair);
            } else {
                test.push(pair);
            }
        } else {
            unpaired.push(Unpaired { lr, hr_mesh_id: 1 });
        }
    }
    let stats: NormStats = compute_stats(
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
            "generator": "poisson",
            "spec": spec,
            "seed": seed,
            "n": n,
            "n_h": n_h,
            "n_test": n_test,
            "max_residual": worst,
            "max_iterations": max_iter,
        }),
    };
    ds.validate()?;
    Ok(ds)
}
