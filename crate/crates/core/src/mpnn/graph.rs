use std::rc::Rc;

use crate::error::{Error, Result};
use crate::grad::SparseMix;

/// Directed connectivity prepared for message passing.
#[derive(Debug, Clone)]
pub struct MeshGraph {
    n: usize,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
    gcn: Rc<SparseMix>,
}

impl MeshGraph {
    /// `directed` holds `(source, target)` pairs.
    pub fn new(n: usize, directed: &[(usize, usize)]) -> Result<Self> {
        for (k, &(a, b)) in directed.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::Index {
                    op: "mesh_graph",
                    index: k,
                    len: n,
                });
            }
        }
        let src: Rc<[usize]> = directed.iter().map(|e| e.0).collect();
        let dst: Rc<[usize]> = directed.iter().map(|e| e.1).collect();
        let weights = gcn_edge_weights(directed, n);
        let mut rows = vec![Vec::new(); n];
        for (&(a, b), &w) in weights.edges.iter().zip(&weights.weights) {
            rows[b].push((a, w));
        }
        Ok(MeshGraph {
            n,
            src,
            dst,
            gcn: Rc::new(SparseMix::new(n, rows)?),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn src(&self) -> &Rc<[usize]> {
        &self.src
    }

    pub fn dst(&self) -> &Rc<[usize]> {
        &self.dst
    }

    /// Normalized propagation matrix with self-loops.
    pub fn gcn_mix(&self) -> &Rc<SparseMix> {
        &self.gcn
    }
}

/// GCN edge weights: the input edges followed by one self-loop per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnWeights {
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

/// Symmetric normalization `1/√(deg_i·deg_j)` where degrees count incoming
/// edges plus the inserted self-loop.
pub fn gcn_edge_weights(directed: &[(usize, usize)], n: usize) -> GcnWeights {
    let mut deg = vec![1.0f64; n];
    for &(_, b) in directed {
        deg[b] += 1.0;
    }
    let edges: Vec<(usize, usize)> = directed
        .iter()
        .copied()
        .chain((0..n).map(|i| (i, i)))
        .collect();
    let weights = edges
        .iter()
        .map(|&(a, b)| 1.0 / (deg[a] * deg[b]).sqrt())
        .collect();
    GcnWeights { edges, weights }
}
