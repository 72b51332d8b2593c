//! Message-passing layers with optional node- and message-level centering.

mod graph;
mod layer;
mod mlp;

pub use graph::{gcn_edge_weights, GcnWeights, MeshGraph};
pub use layer::{Centering, LayerKind, LayerOutput, LayerParams, MpnnLayer, MLP_HIDDEN_LAYERS};
pub use mlp::{Affine, MlpBlock};
