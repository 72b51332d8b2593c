use crate::error::{Error, Result};
use crate::grad::{SparseMix, Tensor};

/// Below this nearest-neighbor distance a target copies the source value.
pub const COINCIDENCE_TOL: f64 = 1e-12;

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Uniform-grid spatial hash over a fixed set of source points.
///
/// Queries return the exact k nearest sources, ordered by distance and then
/// by source index.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    dim: usize,
    points: Vec<f64>,
    origin: Vec<f64>,
    cell: f64,
    counts: Vec<usize>,
    cell_start: Vec<usize>,
    cell_items: Vec<usize>,
}

impl KnnIndex {
    pub fn build(positions: &Tensor) -> Result<Self> {
        let (n, dim) = positions.dims2("knn_index")?;
        if n == 0 || dim == 0 {
            return Err(Error::Contract("knn index over an empty point set".into()));
        }
        let provisional = Self::with_cell(positions, volume_spacing(positions));
        if n < 2 {
            return Ok(provisional);
        }
        let mut total = 0.0;
        for i in 0..n {
            let hits = provisional.query(positions.row(i), 2)?;
            total += hits.iter().find(|h| h.0 != i).map_or(0.0, |h| h.1);
        }
        let spacing = total / n as f64;
        if spacing > 0.0 && spacing.is_finite() {
            Ok(Self::with_cell(positions, spacing))
        } else {
            Ok(provisional)
        }
    }

    fn with_cell(positions: &Tensor, cell: f64) -> Self {
        let (n, dim) = (positions.rows(), positions.cols());
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for i in 0..n {
            for (d, &v) in positions.row(i).iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        let mut cell = if cell > 0.0 && cell.is_finite() {
            cell
        } else {
            1.0
        };
        // keep the grid within a few cells per point
        let counts = loop {
            let counts: Vec<usize> = lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| ((h - l) / cell).floor() as usize + 1)
                .collect();
            let total = counts.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
            match total {
                Some(t) if t <= 4 * n + 16 => break counts,
                _ => cell *= 2.0,
            }
        };

        let mut index = KnnIndex {
            dim,
            points: positions.data().to_vec(),
            origin: lo,
            cell,
            counts,
            cell_start: Vec::new(),
            cell_items: Vec::new(),
        };
        let n_cells: usize = index.counts.iter().product();
        let cell_of: Vec<usize> = (0..n)
            .map(|i| {
                let c = index.cell_coords(positions.row(i));
                index.flatten(&c)
            })
            .collect();
        let mut start = vec![0usize; n_cells + 1];
        for &c in &cell_of {
            start[c + 1] += 1;
        }
        for c in 0..n_cells {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut items = vec![0usize; n];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        index.cell_start = start;
        index.cell_items = items;
        index
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn cell_coords(&self, p: &[f64]) -> Vec<i64> {
        p.iter()
            .zip(&self.origin)
            .map(|(v, o)| ((v - o) / self.cell).floor() as i64)
            .collect()
    }

    fn flatten(&self, c: &[i64]) -> usize {
        let mut idx = 0usize;
        for (d, &v) in c.iter().enumerate().rev() {
            let v = v.clamp(0, self.counts[d] as i64 - 1) as usize;
            idx = idx * self.counts[d] + v;
        }
        idx
    }

    /// The `min(k, n)` nearest sources as `(index, distance)`.
    pub fn query(&self, point: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if self.is_empty() {
            return Err(Error::Contract("query on an empty knn index".into()));
        }
        if k == 0 {
            return Err(Error::Contract("knn query with k = 0".into()));
        }
        if point.len() != self.dim {
            return Err(Error::dim(
                "knn_query",
                format!(
                    "point has {} coordinates, index has {}",
                    point.len(),
                    self.dim
                ),
            ));
        }
        let k = k.min(self.len());
        let center = self.cell_coords(point);

        let mut r_start = 0i64;
        let mut r_max = 0i64;
        for (d, &c) in center.iter().enumerate() {
            let last = self.counts[d] as i64 - 1;
            r_start = r_start.max(-c).max(c - last);
            r_max = r_max.max((c).abs()).max((c - last).abs());
        }

        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut r = r_start.max(0);
        loop {
            self.visit_ring(&center, r, |i| {
                found.push((distance(point, self.point(i)), i))
            });
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                found.truncate(k);
                // unvisited cells lie at least r cells away
                let reach = r as f64 * self.cell * (1.0 - 1e-9);
                if found[k - 1].0 < reach {
                    break;
                }
            }
            if r >= r_max {
                break;
            }
            r += 1;
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(found.into_iter().take(k).map(|(d, i)| (i, d)).collect())
    }

    /// Calls `f` for every point in grid cells at Chebyshev distance exactly
    /// `r` from `center`.
    fn visit_ring(&self, center: &[i64], r: i64, mut f: impl FnMut(usize)) {
        let dim = self.dim;
        let lo: Vec<i64> = center.iter().map(|c| (c - r).max(0)).collect();
        let hi: Vec<i64> = center
            .iter()
            .zip(&self.counts)
            .map(|(c, &n)| (c + r).min(n as i64 - 1))
            .collect();
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return;
        }
        let mut cur = lo.clone();
        loop {
            let cheb = cur
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b).abs())
                .max()
                .unwrap_or(0);
            if cheb == r {
                let c = self.flatten(&cur);
                for &i in &self.cell_items[self.cell_start[c]..self.cell_start[c + 1]] {
                    f(i);
                }
            }
            let mut d = 0;
            loop {
                if d == dim {
                    return;
                }
                if cur[d] < hi[d] {
                    cur[d] += 1;
                    break;
                }
                cur[d] = lo[d];
                d += 1;
            }
        }
    }
}

fn volume_spacing(positions: &Tensor) -> f64 {
    let (n, dim) = (positions.rows(), positions.cols());
    let mut vol = 1.0;
    let mut any = false;
    for d in 0..dim {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            lo = lo.min(positions.get(i, d));
            hi = hi.max(positions.get(i, d));
        }
        if hi > lo {
            vol *= hi - lo;
            any = true;
        }
    }
    if !any {
        return 1.0;
    }
    (vol / n as f64).powf(1.0 / dim as f64)
}

/// Inverse-square-distance weights from `src` nodes onto `dst` nodes.
///
/// Each target row lists its `min(k, n_src)` nearest sources with weights
/// summing to one; a target within [`COINCIDENCE_TOL`] of a source copies it.
pub fn interpolation_weights(index: &KnnIndex, dst: &Tensor, k: usize) -> Result<SparseMix> {
    let (n_dst, dim) = dst.dims2("knn_interpolate")?;
    if dim != index.dim() {
        return Err(Error::dim(
            "knn_interpolate",
            format!(
                "target points have {dim} coordinates, sources {}",
                index.dim()
            ),
        ));
    }
    let mut rows = Vec::with_capacity(n_dst);
    for t in 0..n_dst {
        let hits = index.query(dst.row(t), k)?;
        if hits[0].1 < COINCIDENCE_TOL {
            rows.push(vec![(hits[0].0, 1.0)]);
            continue;
        }
        let w: Vec<f64> = hits.iter().map(|&(_, d)| 1.0 / (d * d)).collect();
        let total: f64 = w.iter().sum();
        rows.push(
            hits.iter()
                .zip(&w)
                .map(|(&(i, _), &wi)| (i, wi / total))
                .collect(),
        );
    }
    SparseMix::new(index.len(), rows)
}

/// Projects `values` (one row per source node) onto the target nodes.
pub fn knn_interpolate(
    values: &Tensor,
    src_pos: &Tensor,
    dst_pos: &Tensor,
    k: usize,
) -> Result<Tensor> {
    if values.rows() != src_pos.rows() {
        return Err(Error::dim(
            "knn_interpolate",
            format!(
                "{} value rows for {} source nodes",
                values.rows(),
                src_pos.rows()
            ),
        ));
    }
    let index = KnnIndex::build(src_pos)?;
    interpolation_weights(&index, dst_pos, k)?.apply(values)
}
