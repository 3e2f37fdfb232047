//! Temporal chunking for small recurrent learners.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the numerical parts
//! of the experiment platform:
//!
//! * [`environment`]: the two-community token graph with its hub token and
//!   the direction rule driven by the last two community visits.
//! * [`nn`]: a dense recurrent kernel with truncated backpropagation through
//!   time, SGD and a finite-difference gradient checker.
//! * [`naive`]: the plain online learner, its windowed prediction error and
//!   ablation sweeps.
//! * [`chunking`]: the offline sleep phase (cosine-distance boundary
//!   detection, the context tagger and the tag stream).
//! * [`chunked`]: the two-layer context-tagged model, its three-phase
//!   protocol, the constant-tag ablation and source to target transfer.
//! * [`analysis`]: cosine distance matrices, classical MDS with a Jacobi
//!   eigensolver, scree knees and community separation.
//!
//! All file formats, configuration parsing and process orchestration live in
//! the `chunkrnn` companion crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod chunked;
pub mod chunking;
pub mod environment;
mod error;
pub mod naive;
pub mod nn;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
