//! Search gene-expression data for sub-networks of a gene regulatory network
//! that compute arithmetic and classification tasks, then measure how
//! reliably they compute under propagated gene perturbations.
//!
//! Module map:
//! - [`model`]: expression tensor, regulatory network, extracted sub-networks
//! - [`ingest`]: file formats and count → TPM normalization
//! - [`stability`]: cross-dataset edge consistency scoring
//! - [`tasks`]: integer-sequence oracles and task specs
//! - [`search`]: output-gene search, match counting, upstream extraction
//! - [`perturb`]: propagation rows, Monte Carlo perturbation, reliability metrics
//! - [`lyapunov`]: Lyapunov functions, trajectory derivative, critical levels
//! - [`synth`]: planted synthetic benchmarks

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod ingest;
pub mod keyed;
pub mod lyapunov;
pub mod model;
pub mod perturb;
pub mod search;
pub mod stability;
pub mod synth;
pub mod tasks;

pub use error::{Error, Result};
pub use model::{Edge, ExpressionDataset, GeneId, RegulatoryNetwork, SubGrnn};
