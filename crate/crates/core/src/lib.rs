//! Smart-contract reputability analysis.
//!
//! The pipeline disassembles EVM bytecode into opcode categories, learns
//! category embeddings, balances the illicit class by oversampling, classifies
//! contracts with gradient-boosted trees and scores hourly transaction
//! behaviour with a convolutional autoencoder.

pub mod augment;
pub mod cae;
pub mod disasm;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixture;
pub mod gbdt;
pub mod ingest;
pub mod nn;
pub mod stats;

pub use error::{Error, Result};
