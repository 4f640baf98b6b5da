//! Structural causal models learned over schema-level variables of a
//! heterogeneous graph, for node classification.
//!
//! The pipeline: [`hetgraph`] loads a typed graph and enumerates meta-paths;
//! [`encoders`] turns each target node into `q + 2` variable representations
//! (ego, one per meta-path, label); [`scm`] reconstructs every variable from
//! its weighted causes through a trainable DAG matrix and predicts labels
//! from the reconstructed label variable; [`losses`] and [`train`] fit the
//! whole thing under an acyclicity penalty; [`interpret`] trims the learned
//! matrix into a causal diagram. [`splits`] and [`synth`] produce
//! distribution-shifted evaluation data.

pub mod cli;
pub mod encoders;
pub mod error;
pub mod exec;
pub mod hetgraph;
pub mod interpret;
pub mod losses;
pub mod numcore;
pub mod rng;
pub mod scm;
pub mod splits;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
