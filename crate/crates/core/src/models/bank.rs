use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::grad::{SparseMix, Tensor};
use crate::meshcore::{
    interpolation_weights, raw_edge_features, FieldSample, KnnIndex, Mesh, NormStats,
};
use crate::mpnn::MeshGraph;

/// Per-mesh inputs that do not depend on the field values.
#[derive(Debug)]
pub struct MeshEntry {
    pub graph: MeshGraph,
    /// Normalized node positions.
    pub positions: Tensor,
    /// Normalized directed-edge features, rows aligned with the graph edges.
    pub edges: Tensor,
}

/// Meshes plus normalization, with lazily cached graphs and kNN projections.
///
/// Projections between two distinct meshes are inverse-square-distance
/// interpolations on raw positions; a mesh projected onto itself is the
/// identity and never touches the kNN code.
#[derive(Debug)]
pub struct MeshBank {
    meshes: Vec<Mesh>,
    stats: NormStats,
    entries: RefCell<Vec<Option<Rc<MeshEntry>>>>,
    projections: RefCell<HashMap<(usize, usize, usize), Rc<SparseMix>>>,
}

impl MeshBank {
    pub fn new(meshes: Vec<Mesh>, stats: NormStats) -> Self {
        let n = meshes.len();
        MeshBank {
            meshes,
            stats,
            entries: RefCell::new(vec![None; n]),
            projections: RefCell::new(HashMap::new()),
        }
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn meshes(&self) -> &[Mesh] {
        &self.meshes
    }

    pub fn mesh(&self, id: usize) -> Result<&Mesh> {
        self.meshes
            .get(id)
            .ok_or_else(|| Error::Validation(format!("unknown mesh id {id}")))
    }

    pub fn entry(&self, id: usize) -> Result<Rc<MeshEntry>> {
        if let Some(e) = self.entries.borrow().get(id).and_then(Clone::clone) {
            return Ok(e);
        }
        let mesh = self.mesh(id)?;
        let entry = Rc::new(MeshEntry {
            graph: MeshGraph::new(mesh.n_nodes(), &mesh.directed_edges())?,
            positions: self.stats.position.normalize(mesh.positions())?,
            edges: self.stats.edge.normalize(&raw_edge_features(mesh))?,
        });
        self.entries.borrow_mut()[id] = Some(entry.clone());
        Ok(entry)
    }

    /// Interpolation operator from mesh `src` to mesh `dst`, or `None` when
    /// they are the same mesh.
    pub fn projection(&self, src: usize, dst: usize, k: usize) -> Result<Option<Rc<SparseMix>>> {
        if src == dst {
            self.mesh(src)?;
            return Ok(None);
        }
        if let Some(p) = self.projections.borrow().get(&(src, dst, k)) {
            return Ok(Some(p.clone()));
        }
        let index = KnnIndex::build(self.mesh(src)?.positions())?;
        let mix = Rc::new(interpolation_weights(
            &index,
            self.mesh(dst)?.positions(),
            k,
        )?);
        self.projections
            .borrow_mut()
            .insert((src, dst, k), mix.clone());
        Ok(Some(mix))
    }

    /// Applies [`MeshBank::projection`] to a plain tensor.
    pub fn project(&self, values: &Tensor, src: usize, dst: usize, k: usize) -> Result<Tensor> {
        match self.projection(src, dst, k)? {
            None => Ok(values.clone()),
            Some(mix) => mix.apply(values),
        }
    }

    /// Field values of `sample` in normalized units, checked against its mesh.
    pub fn field(&self, sample: &FieldSample) -> Result<Tensor> {
        let mesh = self.mesh(sample.mesh_id)?;
        if sample.values.rows() != mesh.n_nodes() {
            return Err(Error::Validation(format!(
                "sample has {} rows, mesh {} has {} nodes",
                sample.values.rows(),
                sample.mesh_id,
                mesh.n_nodes()
            )));
        }
        self.stats.field.normalize(&sample.values)
    }

    /// `n × (d + D)` encoder input: normalized field then normalized position.
    pub fn node_features(&self, sample: &FieldSample) -> Result<Tensor> {
        let field = self.field(sample)?;
        let entry = self.entry(sample.mesh_id)?;
        let (n, d) = (field.rows(), field.cols());
        let dim = entry.positions.cols();
        let mut data = Vec::with_capacity(n * (d + dim));
        for i in 0..n {
            data.extend_from_slice(field.row(i));
            data.extend_from_slice(entry.positions.row(i));
        }
        Ok(Tensor::matrix(n, d + dim, data))
    }
}
