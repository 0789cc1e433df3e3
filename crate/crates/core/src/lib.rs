//! Open-world node classification: nodes of an attributed graph are assigned
//! to known classes or to newly discovered ones.
//!
//! Pipeline: per-layer prototypes score node representations, the prototype
//! co-association graph is clustered into groups, group-aware attention
//! propagates representations, and an ensemble of layer predictions yields
//! pseudo-labels that refine the graph structure.

pub mod assignment;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod kmeans;
pub mod pan;
pub mod prototype;
pub mod pseudo;
pub mod refine;
pub mod seed;

pub use error::{Error, Result};
