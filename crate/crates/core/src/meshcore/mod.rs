//! Meshes, fields, kNN projection between node sets, and dataset storage.

mod dataset;
mod features;
mod knn;
mod mesh;

pub use dataset::{
    compute_stats, dataset_files, load_dataset, raw_edge_features, save_dataset, SplitDataset,
    MANIFEST_FILE, MESHES_FILE, SAMPLES_FILE,
};
pub use features::{build_graph_features, GraphFeatures};
pub use knn::{distance, interpolation_weights, knn_interpolate, KnnIndex, COINCIDENCE_TOL};
pub use mesh::{grid_edges, ColumnStats, FieldSample, Mesh, NormStats, Pair, Unpaired};
