//! Synthetic sequence models with known dynamics: seeded linear systems, a
//! hand-built counting RNN, and random Elman/GRU cells.

mod cell;
mod counter;
mod linear;

pub use cell::{run_cell, CellKind, GateWeights, RecurrentCell, SequenceBatch};
pub use counter::{build_counter_rnn, gen_token_streams, CounterRnn, StreamConfig, TokenClass, Vocab};
pub use linear::{
    gen_linear, gen_linear_from, gen_two_class, linear_decoder, random_orthogonal, rotation, LinearDynamics, SpectrumBlock,
    MAX_STABLE_RADIUS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::NumericsError;
use crate::state_io::StateIoError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("spectral radius {radius} exceeds {max}; pass the force flag to allow it")]
    Unstable { radius: f64, max: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    StateIo(#[from] StateIoError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
