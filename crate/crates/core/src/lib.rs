//! Active data selection and continuous training for binary real/fake
//! detectors.
//!
//! A detector is trained on a seed corpus, then repeatedly scores a labeled
//! pool, moves the samples it is least certain about into its training set
//! and is fine-tuned on the combined set. Modules:
//!
//! - [`datapool`]: samples, split sets, manifests, the synthetic benchmark
//! - [`model`]: MLP detector, AdamW training, checkpoints
//! - [`scoring`]: negative-energy and random certainty scores
//! - [`selection`]: lowest-score selection and pool/train moves
//! - [`run_loop`]: the iterated select / fine-tune / evaluate loop
//! - [`metrics`]: equal error rate and selection composition
//! - [`cli`]: config file and subcommands

pub mod cli;
pub mod datapool;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod run_loop;
pub mod scoring;
pub mod selection;

pub use error::{Error, Result};
