//! Few-shot class-incremental node classification with a prototypical GCN,
//! task-level loss attention and node-level prototype attention, trained by
//! pseudo-incremental episodes.

pub mod attention;
pub mod config;
pub mod dataset;
pub mod diffnum;
pub mod episodes;
pub mod error;
pub mod fsutil;
pub mod graph;
pub mod harness;
pub mod model;
pub mod output;
pub mod protonet;
pub mod rng;
pub mod splits;

pub use error::{Error, Result};
pub use graph::{ClassId, Graph, NodeId};
