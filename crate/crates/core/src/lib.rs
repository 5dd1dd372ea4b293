//! Incomplete multi-view clustering with a cross-view transformer
//! autoencoder and a recurrent neighbor-graph constraint.
//!
//! Pipeline: [`data`] loads, masks and normalizes views; [`model`] encodes
//! them with masked cross-view attention on top of the [`autodiff`] tape;
//! [`training`] runs the recovery and clustering stages with [`graph`]
//! regularization; [`cluster_eval`] clusters the fused representation and
//! scores it. [`cli`] wires everything to the `recformer` binary.

pub mod autodiff;
pub mod cli;
pub mod cluster_eval;
pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
