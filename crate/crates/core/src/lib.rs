//! # ldta-core
//!
//! Dirichlet-Tree distributions and Latent Dirichlet-Tree Allocation (LDTA),
//! a topic model that replaces the Dirichlet prior of LDA with a Dirichlet-Tree
//! over an arbitrary rooted tree of topics.
//!
//! The crate is `no_std` and only needs `alloc`. It carries every numerical
//! piece of the model:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`tree`] | Rooted topologies, branch/leaf indexing, the selection operator |
//! | [`dtree`] | Dirichlet-Tree densities, expectations, conjugate updates, sampling, prior families |
//! | [`moment_match`] | Digamma family and recovery of parameters from expected sufficient statistics |
//! | [`model`] | Corpus types, the generative process, exact and Monte-Carlo evidence, matrix utilities |
//! | [`mfvi`] | Mean-field variational E-step, ELBO and the EM loop |
//! | [`ep`] | Expectation Propagation per document and the EP-embedded EM loop |
//! | [`eval`] | Perplexity, UMass coherence and topic diversity |
//!
//! IO, file formats and the command line live in the companion `ldta` crate.
//!
//! ## Conventions
//!
//! - Branch `d` of a topology is identified with its child node; branches and
//!   leaves are numbered in depth-first (preorder) discovery order, children in
//!   declaration order. Leaf `k` is topic `k`.
//! - Parameter vectors `xi`/`zeta` are indexed by branch, length `D`.
//! - Word ids are 0-based inside the library.
//! - Every normalizer is computed in log space.

#![no_std]
// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dtree;
pub mod ep;
mod error;
mod math;
pub mod eval;
pub mod exec;
pub mod linalg;
pub mod mfvi;
pub mod model;
pub mod moment_match;
pub mod tree;

pub use dtree::{DTParams, DensityForm, Simplex};
pub use error::{Error, Result};
pub use exec::{DocRunner, Sequential};
pub use linalg::Matrix;
pub use model::{Corpus, Document, ModelParams};
pub use tree::{SelectionOperator, TreeTopology};
