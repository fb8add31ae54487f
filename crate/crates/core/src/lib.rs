//! Federated learning under data poisoning.
//!
//! This crate simulates a small federation of clients training the BAU1
//! multilayer perceptron with FedAvg, where one client's shard may be poisoned
//! by label flipping (LF) or feature poisoning (FP). It covers the whole
//! pipeline: CSV ingestion and preprocessing, stratified splitting, the
//! network and its training loop, the two attacks and their attack success
//! rate (ASR) test transforms, random-forest permutation importance for
//! picking the FP target column, and result records.
//!
//! All randomness flows from explicit seeds (see [`seeds`]), so a run is
//! reproducible from its configuration alone.

pub mod attacks;
pub mod data;
pub mod error;
pub mod federation;
pub mod importance;
pub mod nn;
pub mod report;
pub mod seeds;

pub use error::{Error, Result};
