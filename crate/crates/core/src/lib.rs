//! Ontology-informed pretraining of gene-function representations.
//!
//! The crate parses a Gene Ontology release into a DAG, turns gene
//! annotation sets into training examples, and trains an order-invariant
//! transformer with two objectives: recovering masked annotations and
//! predicting each term's ontology neighbourhood.

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod error;
pub mod kmeans;
pub mod masking;
pub mod model;
pub mod ontology;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
