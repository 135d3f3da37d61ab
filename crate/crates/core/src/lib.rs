// index loops over several parallel buffers are clearer than zipped iterators
// in the matrix kernels below
#![allow(clippy::needless_range_loop)]

//! Random adaptation dynamics over time-varying stochastic chains.
//!
//! Each row of a stochastic matrix Q(t) is read as a probability mass
//! function: agent i copies agent j's state with probability q_ij(t). This
//! crate simulates that dynamics and its Friedkin-Johnsen-style variants,
//! diagnoses ergodicity of the underlying chain numerically, computes
//! absolute probability sequences, and checks the closed-form limit laws
//! against Monte Carlo ensembles.

pub mod analysis;
pub mod chain;
pub mod dynamics;
pub mod error;
pub mod generators;
pub mod lemma;
pub mod rng;
pub mod sampling;
pub mod stochastic;

pub use chain::{
    absolute_probability_sequence, backward_product, ergodicity_diagnostic,
    AbsoluteProbabilitySequence, ChainSource, ErgodicityDiagnostic, Provenance, Verdict,
};
pub use error::{Error, Result};
pub use rng::RngStream;
pub use stochastic::{make_stochastic, StochasticMatrix, StochasticVector};
