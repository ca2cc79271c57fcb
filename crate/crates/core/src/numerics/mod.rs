//! Dense real and complex linear algebra kernels.
//!
//! Everything here is a pure function of its inputs. The kernels are small
//! and tuned for the matrix sizes that show up when fitting Koopman operators
//! to hidden states: a few hundred to a few thousand stacked rows and at
//! most a few hundred columns.

mod eig;
mod inverse;
mod lstsq;
mod matrix;
mod svd;

pub use eig::{eig, eig_with, EigResult};
pub use inverse::{inverse, inverse_with, InverseResult};
pub use lstsq::{lstsq, lstsq_with};
pub use matrix::{ComplexMatrix, RealMatrix};
pub use svd::{svd, svd_with, SvdResult};

pub use num_complex::Complex64;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("{algorithm} did not converge within the iteration cap of {cap}")]
    NoConvergence { algorithm: &'static str, cap: usize },
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },
}

/// Tolerances and iteration caps shared by the kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericsConfig {
    /// Maximum number of one-sided Jacobi sweeps.
    pub svd_max_sweeps: usize,
    /// Maximum QR iterations per eigenvalue.
    pub eig_max_iterations: usize,
    /// Relative singular-value cutoff for least squares.
    pub lstsq_rcond: f64,
    /// Inversion refuses matrices whose 1-norm condition estimate exceeds this.
    pub max_condition: f64,
    /// Eigenvector matrices above this condition estimate are flagged defective.
    pub defective_condition: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            svd_max_sweeps: 80,
            eig_max_iterations: 300,
            lstsq_rcond: 1e-12,
            max_condition: 1e12,
            defective_condition: 1e10,
        }
    }
}
