//! Black-market account detection on interaction graphs: an inductive GNN
//! encoder, two contrastive structural encoders, a self-supervised attribute
//! encoder, boosted-tree probes, and the two-phase pretrain/detect pipeline,
//! runnable end to end on synthetic graphs with planted motifs.

pub mod checkpoint;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod gbdt;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod ssa;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use error::{CheckpointError, Error, Result};
