//! Eigendecomposition of a fitted operator and the quantities derived from
//! it: eigen-coordinates, separability, memory horizons, projection
//! magnitudes, and mode-subspace projectors.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::koopman::{KoopmanError, KoopmanOperator, SpectralBasis};
use crate::numerics::{
    eig_with, inverse_with, lstsq_with, Complex64, ComplexMatrix, NumericsConfig, NumericsError, RealMatrix,
};
use crate::state_io::{HiddenStateTensor, StateIoError};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("mode index {index} is out of range for {r} modes")]
    Index { index: usize, r: usize },
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    Epsilon(f64),
    #[error("mode set {requested:?} is not closed under conjugation; use {completion:?}")]
    NotClosed {
        requested: Vec<usize>,
        completion: Vec<usize>,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("selected modes leave an imaginary part of {0:e}")]
    ImaginaryResidue(f64),
    #[error("mode list: {0}")]
    Parse(String),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    StateIo(#[from] StateIoError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub const DEFAULT_EPSILON: f64 = 1e-2;

/// Modes whose modulus lies within this distance of 1 have infinite memory.
pub const UNIT_BAND: f64 = 1e-12;

/// Eigenvalues are treated as real when their imaginary part is below this
/// (relative to `max(1, |λ|)`).
const REAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EigenSystem {
    lambdas: Vec<Complex64>,
    v: ComplexMatrix,
    u: ComplexMatrix,
    condition: f64,
    defective: bool,
}

impl EigenSystem {
    /// Builds a system from eigenvalues and matching right eigenvector
    /// columns, computing `U = V⁻¹` and the condition estimate.
    pub fn from_parts(
        lambdas: Vec<Complex64>,
        v: ComplexMatrix,
        config: &NumericsConfig,
    ) -> Result<Self, SpectralError> {
        let r = lambdas.len();
        if v.shape() != (r, r) {
            return Err(SpectralError::Dimension(format!(
                "{r} eigenvalues with a {}x{} eigenvector matrix",
                v.rows(),
                v.cols()
            )));
        }
        let unbounded = NumericsConfig {
            max_condition: f64::INFINITY,
            ..*config
        };
        let (u, condition) = match inverse_with(&v, &unbounded) {
            Ok(inv) => (inv.inverse, inv.condition),
            Err(NumericsError::IllConditioned { .. }) => (pseudo_inverse(&v, config)?, f64::INFINITY),
            Err(other) => return Err(other.into()),
        };
        Ok(Self {
            lambdas,
            v,
            u,
            condition,
            defective: !(condition <= config.defective_condition),
        })
    }

    pub fn lambdas(&self) -> &[Complex64] {
        &self.lambdas
    }

    /// Right eigenvectors of `C` in columns.
    pub fn v(&self) -> &ComplexMatrix {
        &self.v
    }

    /// `V⁻¹`; its rows are the Koopman eigenvectors.
    pub fn u(&self) -> &ComplexMatrix {
        &self.u
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn is_defective(&self) -> bool {
        self.defective
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn is_real(&self, j: usize) -> bool {
        let l = self.lambdas[j];
        l.im.abs() <= REAL_TOL * l.norm().max(1.0)
    }

    /// Index of the eigenvalue closest to `conj(λ_j)`; `None` for real modes.
    pub fn conjugate_partner(&self, j: usize) -> Option<usize> {
        if self.is_real(j) {
            return None;
        }
        let target = self.lambdas[j].conj();
        (0..self.len())
            .filter(|&i| i != j)
            .min_by(|&a, &b| {
                (self.lambdas[a] - target)
                    .norm()
                    .total_cmp(&(self.lambdas[b] - target).norm())
                    .then(a.cmp(&b))
            })
    }

    fn check_index(&self, j: usize) -> Result<(), SpectralError> {
        if j >= self.len() {
            return Err(SpectralError::Index { index: j, r: self.len() });
        }
        Ok(())
    }
}

pub fn decompose(op: &KoopmanOperator) -> Result<EigenSystem, SpectralError> {
    decompose_with(op, &NumericsConfig::default())
}

pub fn decompose_with(op: &KoopmanOperator, config: &NumericsConfig) -> Result<EigenSystem, SpectralError> {
    decompose_matrix(op.matrix(), config)
}

/// Eigensystem of a bare square matrix.
pub fn decompose_matrix(c: &RealMatrix, config: &NumericsConfig) -> Result<EigenSystem, SpectralError> {
    let e = eig_with(c, config)?;
    EigenSystem::from_parts(e.values, e.vectors, config)
}

/// Pseudoinverse of a complex matrix through its real `2n x 2n` embedding
/// `[[Re, −Im], [Im, Re]]`, for eigenvector matrices that are exactly singular.
fn pseudo_inverse(m: &ComplexMatrix, config: &NumericsConfig) -> Result<ComplexMatrix, SpectralError> {
    let n = m.rows();
    let mut big = RealMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            big[(i, j)] = z.re;
            big[(i, j + n)] = -z.im;
            big[(i + n, j)] = z.im;
            big[(i + n, j + n)] = z.re;
        }
    }
    let pinv = lstsq_with(&big, &RealMatrix::identity(2 * n), config)?;
    let mut out = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = Complex64::new(pinv[(i, j)], pinv[(i + n, j)]);
        }
    }
    Ok(out)
}

/// Sorted eigen-indices closed under conjugate pairing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeIndexSet {
    indices: Vec<usize>,
}

impl ModeIndexSet {
    /// Validates range and conjugate closure.
    pub fn new(indices: &[usize], eigsys: &EigenSystem) -> Result<Self, SpectralError> {
        let closed = Self::closure(indices, eigsys)?;
        let requested: BTreeSet<usize> = indices.iter().copied().collect();
        if closed.indices.len() != requested.len() {
            return Err(SpectralError::NotClosed {
                requested: requested.into_iter().collect(),
                completion: closed.indices,
            });
        }
        Ok(closed)
    }

    /// Smallest conjugate-closed set containing `indices`.
    pub fn closure(indices: &[usize], eigsys: &EigenSystem) -> Result<Self, SpectralError> {
        let mut set = BTreeSet::new();
        for &j in indices {
            eigsys.check_index(j)?;
            set.insert(j);
            if let Some(p) = eigsys.conjugate_partner(j) {
                set.insert(p);
            }
        }
        Ok(Self {
            indices: set.into_iter().collect(),
        })
    }

    pub fn all(eigsys: &EigenSystem) -> Self {
        Self {
            indices: (0..eigsys.len()).collect(),
        }
    }

    pub fn empty() -> Self {
        Self { indices: Vec::new() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Parses a comma-separated list of mode indices such as `"0, 3,4"`.
pub fn parse_mode_list(text: &str) -> Result<Vec<usize>, SpectralError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(SpectralError::Parse("empty mode list".into()));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let j: usize = part
            .parse()
            .map_err(|_| SpectralError::Parse(format!("`{part}` is not a mode index")))?;
        if !seen.insert(j) {
            return Err(SpectralError::Parse(format!("mode {j} is listed twice")));
        }
        out.push(j);
    }
    Ok(out)
}

/// Decay time of a mode: finite steps, infinite memory, or unstable growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Infinite,
    Unstable,
}

impl Horizon {
    pub fn finite(self) -> Option<f64> {
        match self {
            Horizon::Finite(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(t) => write!(f, "{t:?}"),
            Horizon::Infinite => f.write_str("inf"),
            Horizon::Unstable => f.write_str("unstable"),
        }
    }
}

/// `τ = log ε / log |λ|`, the number of steps for the mode to decay to `ε`.
pub fn memory_horizon(lambda: Complex64, epsilon: f64) -> Result<Horizon, SpectralError> {
    horizon_for_modulus(lambda.norm(), epsilon)
}

pub fn horizon_for_modulus(modulus: f64, epsilon: f64) -> Result<Horizon, SpectralError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SpectralError::Epsilon(epsilon));
    }
    Ok(if modulus <= 1e-300 {
        Horizon::Finite(0.0)
    } else if (modulus - 1.0).abs() <= UNIT_BAND {
        Horizon::Infinite
    } else if modulus > 1.0 {
        Horizon::Unstable
    } else {
        Horizon::Finite(epsilon.ln() / modulus.ln())
    })
}

/// Eigen-coordinates `Ĥ = project(H) · V` of each state row.
pub fn eigen_coords(
    states: &RealMatrix,
    basis: &SpectralBasis,
    eigsys: &EigenSystem,
) -> Result<ComplexMatrix, SpectralError> {
    check_rank(basis, eigsys)?;
    Ok(basis.project(states)?.to_complex().matmul(eigsys.v())?)
}

fn check_rank(basis: &SpectralBasis, eigsys: &EigenSystem) -> Result<(), SpectralError> {
    if basis.rank() != eigsys.len() {
        return Err(SpectralError::Dimension(format!(
            "basis rank {} does not match {} eigenvalues",
            basis.rank(),
            eigsys.len()
        )));
    }
    Ok(())
}

/// Mean over time steps of `‖Ĥ_{t+1} − Ĥ_t Λ‖_F / ‖Ĥ_{t+1}‖_F`, where each
/// step compares the samples valid at both `t` and `t + 1`.
pub fn separability_residual(
    h: &HiddenStateTensor,
    basis: &SpectralBasis,
    eigsys: &EigenSystem,
) -> Result<f64, SpectralError> {
    let (s, n, _) = h.shape();
    for i in 0..s {
        let len = h.valid_len(i);
        if len < 2 {
            return Err(StateIoError::TooShort { sample: i, valid: len }.into());
        }
    }
    let lambda = ComplexMatrix::from_diag(eigsys.lambdas());
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..n - 1 {
        let rows: Vec<usize> = (0..s).filter(|&i| h.is_valid(i, t + 1)).collect();
        if rows.is_empty() {
            continue;
        }
        let now = eigen_coords(&h.time_slice(t, &rows), basis, eigsys)?;
        let next = eigen_coords(&h.time_slice(t + 1, &rows), basis, eigsys)?;
        let diff = next.sub(&now.matmul(&lambda)?)?;
        total += diff.frobenius_norm() / next.frobenius_norm().max(1e-30);
        count += 1;
    }
    Ok(total / count as f64)
}

/// `s(j, h) = |h̃ᵀ V_j|` for a coefficient vector `h̃`.
pub fn projection_magnitude(coeffs: &[f64], eigsys: &EigenSystem, j: usize) -> Result<f64, SpectralError> {
    eigsys.check_index(j)?;
    if coeffs.len() != eigsys.len() {
        return Err(SpectralError::Dimension(format!(
            "{} coefficients for {} modes",
            coeffs.len(),
            eigsys.len()
        )));
    }
    let v = eigsys.v();
    let dot: Complex64 = coeffs.iter().enumerate().map(|(i, &c)| v[(i, j)] * c).sum();
    Ok(dot.norm())
}

/// `s x n` matrix of `Σ_{j ∈ modes} s(j, h[s, t])`; padded steps are zero.
pub fn magnitude_series(
    h: &HiddenStateTensor,
    basis: &SpectralBasis,
    eigsys: &EigenSystem,
    modes: &ModeIndexSet,
) -> Result<RealMatrix, SpectralError> {
    check_rank(basis, eigsys)?;
    let (s, n, _) = h.shape();
    let coeffs = basis.project_tensor(h)?;
    let mut out = RealMatrix::zeros(s, n);
    for i in 0..s {
        for t in 0..h.valid_len(i) {
            let c = coeffs.state(i, t);
            let mut acc = 0.0;
            for &j in modes.indices() {
                acc += projection_magnitude(c, eigsys, j)?;
            }
            out[(i, t)] = acc;
        }
    }
    Ok(out)
}

/// Which real matrix to build from the complex product `V_I U_I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectorKind {
    /// Elementwise complex modulus.
    #[default]
    Modulus,
    /// Real part; an exact (oblique) projector, unlike the modulus form.
    RealPart,
}

/// `B · |V_I U_I| · Bᵀ` for a conjugate-closed mode set.
pub fn subspace_projector(
    basis: &SpectralBasis,
    eigsys: &EigenSystem,
    modes: &ModeIndexSet,
) -> Result<RealMatrix, SpectralError> {
    subspace_projector_with(basis, eigsys, modes, ProjectorKind::Modulus)
}

pub fn subspace_projector_with(
    basis: &SpectralBasis,
    eigsys: &EigenSystem,
    modes: &ModeIndexSet,
    kind: ProjectorKind,
) -> Result<RealMatrix, SpectralError> {
    check_rank(basis, eigsys)?;
    let checked = ModeIndexSet::new(modes.indices(), eigsys)?;
    let idx = checked.indices();
    let product = eigsys.v().select_columns(idx).matmul(&eigsys.u().select_rows(idx))?;
    let residue = product.im().max_abs();
    if residue > 1e-10 * product.max_abs().max(1.0) {
        return Err(SpectralError::ImaginaryResidue(residue));
    }
    let inner = match kind {
        ProjectorKind::Modulus => product.abs(),
        ProjectorKind::RealPart => product.re(),
    };
    let b = basis.matrix();
    Ok(b.matmul(&inner)?.matmul(&b.transpose())?)
}

/// Applies a `k x k` projector to state rows, centering first for a
/// mean-centered basis.
pub fn apply_projector(
    states: &RealMatrix,
    basis: &SpectralBasis,
    projector: &RealMatrix,
) -> Result<RealMatrix, SpectralError> {
    let k = basis.hidden_dim();
    if states.cols() != k || projector.shape() != (k, k) {
        return Err(SpectralError::Dimension(format!(
            "states {:?} and projector {:?} do not match hidden size {k}",
            states.shape(),
            projector.shape()
        )));
    }
    let Some(mean) = basis.mean() else {
        return Ok(states.matmul(projector)?);
    };
    let mut centered = states.clone();
    for i in 0..centered.rows() {
        for (x, m) in centered.row_mut(i).iter_mut().zip(mean) {
            *x -= m;
        }
    }
    let mut out = centered.matmul(projector)?;
    for i in 0..out.rows() {
        for (x, m) in out.row_mut(i).iter_mut().zip(mean) {
            *x += m;
        }
    }
    Ok(out)
}

/// States after `1..=steps` steps computed in eigen-coordinates:
/// `Re(Ĥ Λ^l U) · Bᵀ`, plus the mean for a centered basis.
pub fn eigen_rollout(
    states: &RealMatrix,
    basis: &SpectralBasis,
    eigsys: &EigenSystem,
    steps: usize,
) -> Result<Vec<RealMatrix>, SpectralError> {
    let mut coords = eigen_coords(states, basis, eigsys)?;
    let lambda = ComplexMatrix::from_diag(eigsys.lambdas());
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        coords = coords.matmul(&lambda)?;
        let coeffs = coords.matmul(eigsys.u())?.re();
        out.push(basis.lift(&coeffs)?);
    }
    Ok(out)
}

/// The `count` most influential modes, expanded to conjugate closure.
///
/// With states, modes are ranked by their mean single-mode projection
/// magnitude over all valid steps; without, by eigenvalue modulus. Ties go
/// to the lower index.
pub fn dominant_modes(
    eigsys: &EigenSystem,
    count: usize,
    states: Option<(&HiddenStateTensor, &SpectralBasis)>,
) -> Result<ModeIndexSet, SpectralError> {
    let r = eigsys.len();
    if count > r {
        return Err(SpectralError::Index { index: count, r });
    }
    let order: Vec<usize> = match states {
        None => (0..r).collect(),
        Some((h, basis)) => {
            let scores = mode_scores(h, basis, eigsys)?;
            let mut order: Vec<usize> = (0..r).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            order
        }
    };
    ModeIndexSet::closure(&order[..count], eigsys)
}

/// Mean projection magnitude of each mode over the valid states.
pub fn mode_scores(
    h: &HiddenStateTensor,
    basis: &SpectralBasis,
    eigsys: &EigenSystem,
) -> Result<Vec<f64>, SpectralError> {
    check_rank(basis, eigsys)?;
    let coeffs = basis.project_tensor(h)?;
    let (s, _, _) = h.shape();
    let mut scores = vec![0.0; eigsys.len()];
    let mut count = 0usize;
    for i in 0..s {
        for t in 0..h.valid_len(i) {
            let c = coeffs.state(i, t);
            for (j, score) in scores.iter_mut().enumerate() {
                *score += projection_magnitude(c, eigsys, j)?;
            }
            count += 1;
        }
    }
    if count > 0 {
        scores.iter_mut().for_each(|v| *v /= count as f64);
    }
    Ok(scores)
}
