//! Model-to-data distillation for graph neural networks.
//!
//! A lightweight student GNN is trained jointly with a feature learner and a
//! structure learner so that a teacher's behaviour ends up encoded in an
//! augmented graph (extra node features and a reweighted adjacency), which
//! can then be audited directly.

pub mod audit;
pub mod autodiff;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod graphdata;
pub mod layout;
pub mod metrics;
pub mod models;
pub mod seed;

pub use error::{Error, Result};
