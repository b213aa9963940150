//! Deterministic simulator for federated learning over clients with noisy labels.
//!
//! The crate is organised around the stages of a federated round:
//!
//! - [`numcore`] — dense matrices, flattened parameter vectors, deterministic
//!   random streams, and a Jacobi eigensolver shared by everything else.
//! - [`data`] — synthetic dataset generation, Non-IID partitioners (IID,
//!   sharding, Dirichlet), and label-noise injection with a retained
//!   clean-label oracle.
//! - [`model`] — small differentiable classifiers (softmax regression and a
//!   one-hidden-layer MLP) with exact manual gradients, cross-entropy,
//!   symmetric cross-entropy, a representation-decorrelation penalty, and a
//!   proximal term.
//! - [`strategy`] — client-side local training: plain SGD, proximal SGD,
//!   robust-loss training, and co-teaching peer-network small-loss selection.
//! - [`aggregate`] — server-side aggregation rules: FedAvg, FedExP,
//!   coordinate median, trimmed mean, Krum, and the geometric median (RFA).
//! - [`engine`] — round-loop orchestration, client sampling, evaluation, and
//!   experiment reporting.
//! - [`diagnostics`] — representation-covariance spectra, the collapse gap,
//!   and selection-quality measurement against the noise oracle.
//!
//! All arithmetic is 64-bit floating point and every source of randomness is
//! an explicit [`numcore::RngStream`], so identical configurations produce
//! byte-identical reports regardless of worker-thread count.

// Index loops here mirror the row/column math they implement.
#![allow(clippy::needless_range_loop)]

pub mod aggregate;
pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod model;
pub mod numcore;
pub mod strategy;

pub use error::{Error, Result};
