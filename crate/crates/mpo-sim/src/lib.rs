//! Truncated Fock-space simulator for multi-photon parametric optics.
//!
//! Builds the multi-mode Hamiltonian and measurement/loss channels, propagates
//! the reduced Lindblad dynamics, samples photocounting and homodyne
//! measurement records, and runs a suite of finite-truncation checks of the
//! model's structural identities and bounds.

pub mod config;
pub mod dynamics;
pub mod fock;
pub mod linalg;
pub mod model;
pub mod observables;
pub mod output;
pub mod par;
pub mod rng;
pub mod sparse;
pub mod state;
pub mod trajectories;
pub mod verify;

pub use fock::ModeLayout;
pub use model::{ChannelSet, ModelParams};
pub use sparse::OperatorMatrix;
pub use state::QuantumState;
