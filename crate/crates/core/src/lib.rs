//! Streaming variational inference for normalized generalized gamma process
//! (NGGP) mixtures of multinomials.
//!
//! The crate is `no_std` (with `alloc`) so the inference core can be embedded
//! anywhere; file formats, the CLI and parallel job fan-out live in the
//! `nrm-stream` companion crate.
//!
//! Module map:
//!
//! - [`prior`]: Lévy-measure moments, Laplace exponent, the auxiliary
//!   variable density and the approximate predictive rule over clusters.
//! - [`obs`]: Dirichlet posteriors over word probabilities and Pólya
//!   predictive integrals.
//! - [`adf`]: the single-pass streaming engine, merge moves.
//! - [`ep`]: multi-pass refinement with stored per-document contributions.
//! - [`gibbs`]: collapsed Gibbs sampler used as a gold-standard baseline.
//! - [`eval`]: held-out predictive log-likelihood, curves, grid search and
//!   permutation replicates.
//! - [`corpus`]: in-memory corpus, vocabulary filtering, train/test split.
//! - [`checkpoint`]: versioned binary container for model state.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adf;
pub mod checkpoint;
pub mod corpus;
pub mod ep;
mod error;
pub mod eval;
pub mod gibbs;
pub mod math;
pub mod obs;
pub mod prior;

pub use adf::{AdfConfig, ClusterState, ExpectedK, ModelState, StepOutcome};
pub use corpus::Corpus;
pub use ep::{ContributionRecorder, EpState, LocalContribution};
pub use error::{Error, Result};
pub use obs::{DirichletPosterior, SparseDoc};
pub use prior::{AuxiliaryU, NggpParams};
