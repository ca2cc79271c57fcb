//! Koopman analysis of recurrent hidden states.
//!
//! Stacked hidden states are compressed into an orthonormal basis, a linear
//! operator is fitted to their one-step evolution, and its eigensystem is
//! used to read off memory horizons, influential inputs, and mode
//! subspaces.

pub mod harness;
pub mod koopman;
pub mod metrics;
pub mod numerics;
pub mod spectral;
pub mod state_io;
