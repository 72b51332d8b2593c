//! Semi-supervised super-resolution for mesh-based PDE fields.

pub mod datagen;
pub mod error;
pub mod grad;
pub mod meshcore;
pub mod models;
pub mod mpnn;
pub mod train;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
