use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;

/// Node positions plus undirected, loop-free edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    positions: Tensor,
    edges: Vec<(usize, usize)>,
}

impl Mesh {
    pub fn new(positions: Tensor, edges: Vec<(usize, usize)>) -> Result<Self> {
        let (n, dim) = positions.dims2("mesh")?;
        if dim == 0 {
            return Err(Error::Validation(
                "mesh positions need at least one coordinate".into(),
            ));
        }
        if !positions.all_finite() {
            return Err(Error::Validation("mesh positions must be finite".into()));
        }
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("self-loop on node {a}")));
            }
        }
        Ok(Mesh { positions, edges })
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.positions.rows()
    }

    pub fn dim(&self) -> usize {
        self.positions.cols()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        self.positions.row(i)
    }

    /// Each undirected edge as two `(source, target)` pairs, `a→b` then `b→a`.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .flat_map(|&(a, b)| [(a, b), (b, a)])
            .collect()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Regular `nx × ny` grid over `[0,1]²` with 4-connectivity and one
    /// diagonal (lower-left to upper-right) per cell.
    pub fn unit_square_grid(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Validation(format!(
                "grid {nx}x{ny} needs at least 2 nodes per side"
            )));
        }
        let mut pos = Vec::with_capacity(nx * ny * 2);
        for j in 0..ny {
            for i in 0..nx {
                pos.push(i as f64 / (nx - 1) as f64);
                pos.push(j as f64 / (ny - 1) as f64);
            }
        }
        Mesh::new(Tensor::matrix(nx * ny, 2, pos), grid_edges(nx, ny))
    }
}

/// Edge list of the triangulated `nx × ny` grid, node index `j * nx + i`.
pub fn grid_edges(nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let id = |i: usize, j: usize| j * nx + i;
    let mut edges = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx {
                edges.push((id(i, j), id(i + 1, j)));
            }
            if j + 1 < ny {
                edges.push((id(i, j), id(i, j + 1)));
            }
            if i + 1 < nx && j + 1 < ny {
                edges.push((id(i, j), id(i + 1, j + 1)));
            }
        }
    }
    edges
}

/// Per-node field values on a mesh for one PDE instance `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub mesh_id: usize,
    pub values: Tensor,
    pub mu: Vec<f64>,
}

/// A training or test item with both resolutions available.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub lr: FieldSample,
    pub hr: FieldSample,
}

/// An LR sample without an HR solution. Only the HR mesh geometry is known,
/// which is all a prediction needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Unpaired {
    pub lr: FieldSample,
    pub hr_mesh_id: usize,
}

/// Per-column z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    pub fn identity(cols: usize) -> Self {
        ColumnStats {
            mean: vec![0.0; cols],
            std: vec![1.0; cols],
        }
    }

    /// Mean and population standard deviation over all rows of all inputs.
    /// Zero-variance columns get std 1.
    pub fn from_rows<'a>(cols: usize, blocks: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let mut sum = vec![0.0; cols];
        let mut count = 0usize;
        let blocks: Vec<&Tensor> = blocks.into_iter().collect();
        for b in &blocks {
            for r in 0..b.rows() {
                for (s, v) in sum.iter_mut().zip(b.row(r)) {
                    *s += v;
                }
                count += 1;
            }
        }
        let denom = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / denom).collect();
        let mut sq = vec![0.0; cols];
        for b in &blocks {
            for r in 0..b.rows() {
                for ((s, v), m) in sq.iter_mut().zip(b.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / denom).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        ColumnStats { mean, std }
    }

    pub fn cols(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.dims2("normalize")?;
        if c != self.cols() || self.std.len() != c {
            return Err(Error::Config(format!(
                "normalization stats cover {} columns, data has {c}",
                self.cols()
            )));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(Tensor::matrix(r, c, out))
    }

    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.dims2("denormalize")?;
        if c != self.cols() {
            return Err(Error::Config(format!(
                "normalization stats cover {} columns, data has {c}",
                self.cols()
            )));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(Tensor::matrix(r, c, out))
    }
}

/// Normalization for field values, node positions and directed-edge features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub field: ColumnStats,
    pub position: ColumnStats,
    pub edge: ColumnStats,
}

impl NormStats {
    pub fn identity(d: usize, dim: usize) -> Self {
        NormStats {
            field: ColumnStats::identity(d),
            position: ColumnStats::identity(dim),
            edge: ColumnStats::identity(2 * dim),
        }
    }
}
