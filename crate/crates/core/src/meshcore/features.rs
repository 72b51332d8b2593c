use super::dataset::raw_edge_features;
use super::mesh::{FieldSample, Mesh, NormStats};
use crate::error::{Error, Result};
use crate::grad::Tensor;

/// Normalized model inputs for one LR sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    /// `n × (d + D)`: field values then position.
    pub node: Tensor,
    /// `2E × 2D`: source position then target position, per directed edge.
    pub edge: Tensor,
    /// `(source, target)` per row of `edge`.
    pub directed: Vec<(usize, usize)>,
}

pub fn build_graph_features(
    sample: &FieldSample,
    mesh: &Mesh,
    stats: &NormStats,
) -> Result<GraphFeatures> {
    if sample.values.rows() != mesh.n_nodes() {
        return Err(Error::Validation(format!(
            "sample has {} rows, mesh has {} nodes",
            sample.values.rows(),
            mesh.n_nodes()
        )));
    }
    let d = sample.values.cols();
    if stats.field.cols() != d
        || stats.position.cols() != mesh.dim()
        || stats.edge.cols() != 2 * mesh.dim()
    {
        return Err(Error::Config(format!(
            "normalization stats (field {}, position {}, edge {}) do not cover d = {d}, D = {}",
            stats.field.cols(),
            stats.position.cols(),
            stats.edge.cols(),
            mesh.dim()
        )));
    }
    let field = stats.field.normalize(&sample.values)?;
    let pos = stats.position.normalize(mesh.positions())?;
    let n = mesh.n_nodes();
    let width = d + mesh.dim();
    let mut node = Vec::with_capacity(n * width);
    for i in 0..n {
        node.extend_from_slice(field.row(i));
        node.extend_from_slice(pos.row(i));
    }
    Ok(GraphFeatures {
        node: Tensor::matrix(n, width, node),
        edge: stats.edge.normalize(&raw_edge_features(mesh))?,
        directed: mesh.directed_edges(),
    })
}
