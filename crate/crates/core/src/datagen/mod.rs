//! Synthetic datasets and HR-subset selection.

mod jitter;
mod mmd;
mod poisson;

pub use jitter::{gen_jitter_dataset, jittered_grid, manufactured_field, ring_smooth, JitterSpec};
pub use mmd::{
    median_bandwidth, paired_lr_embeddings, random_subset_mmds, select_hr_mmd, KernelPool,
    MmdSelection,
};
pub use poisson::{
    gaussian_source, gen_poisson_dataset, solve_fd, solve_poisson_fd, FdSolution, PoissonSpec,
};
