//! Spectral basis, least-squares Koopman operator, and state prediction.
//!
//! States are represented by their coefficients `h̃ = (h − m) · B` in an
//! orthonormal basis `B` (with `m = 0` for the plain SVD basis). The
//! operator `C` advances coefficients one step, so a state advances as
//! `h ↦ ((h − m) · B · C) · Bᵀ + m`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{lstsq_with, svd_with, NumericsConfig, NumericsError, RealMatrix};
use crate::state_io::{flatten_with, HiddenStateTensor, PaddingMode, StateIoError};

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("rank {r} is out of range, expected 1..={max}")]
    Rank { r: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid basis: {0}")]
    Basis(String),
    #[error("actual state ({sample}, {step}) has zero norm")]
    ZeroState { sample: usize, step: usize },
    #[error(transparent)]
    StateIo(#[from] StateIoError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMethod {
    #[default]
    Svd,
    PcaCentered,
}

/// How many basis vectors to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankChoice {
    Fixed(usize),
    /// Smallest rank whose squared singular values reach this fraction of
    /// the total.
    Energy(f64),
}

impl Default for RankChoice {
    fn default() -> Self {
        RankChoice::Energy(DEFAULT_ENERGY)
    }
}

pub const DEFAULT_ENERGY: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitConfig {
    pub padding: PaddingMode,
    pub numerics: NumericsConfig,
}

const ORTHONORMAL_TOL: f64 = 1e-10;

/// Orthonormal columns `B` (k x r) spanning the dominant directions of the
/// stacked states.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    b: RealMatrix,
    singular_values: Vec<f64>,
    method: BasisMethod,
    mean: Option<Vec<f64>>,
}

impl SpectralBasis {
    /// Rebuilds a basis from stored parts, checking `BᵀB = I`.
    pub fn from_parts(
        b: RealMatrix,
        singular_values: Vec<f64>,
        method: BasisMethod,
        mean: Option<Vec<f64>>,
    ) -> Result<Self, KoopmanError> {
        let (k, r) = b.shape();
        if r == 0 || r > k {
            return Err(KoopmanError::Basis(format!("basis shape {k}x{r}")));
        }
        if singular_values.len() != r {
            return Err(KoopmanError::Basis(format!(
                "{} singular values for rank {r}",
                singular_values.len()
            )));
        }
        if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0)
            || singular_values.windows(2).any(|w| w[0] < w[1])
        {
            return Err(KoopmanError::Basis("singular values must be non-negative and descending".into()));
        }
        match (method, &mean) {
            (BasisMethod::Svd, None) => {}
            (BasisMethod::PcaCentered, Some(m)) if m.len() == k && m.iter().all(|v| v.is_finite()) => {}
            _ => {
                return Err(KoopmanError::Basis(
                    "a mean of length k is required exactly for the pca-centered method".into(),
                ))
            }
        }
        let gram = b.transpose().matmul(&b)?;
        let dev = gram.sub(&RealMatrix::identity(r))?.max_abs();
        if dev > ORTHONORMAL_TOL {
            return Err(KoopmanError::Basis(format!("columns are not orthonormal (deviation {dev:e})")));
        }
        Ok(Self {
            b,
            singular_values,
            method,
            mean,
        })
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.b
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn method(&self) -> BasisMethod {
        self.method
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.b.rows()
    }

    /// Basis coefficients of each state row.
    pub fn project(&self, states: &RealMatrix) -> Result<RealMatrix, KoopmanError> {
        if states.cols() != self.hidden_dim() {
            return Err(KoopmanError::Dimension(format!(
                "states have {} columns, basis expects {}",
                states.cols(),
                self.hidden_dim()
            )));
        }
        match &self.mean {
            None => Ok(states.matmul(&self.b)?),
            Some(m) => Ok(shift_rows(states, m, -1.0).matmul(&self.b)?),
        }
    }

    /// States whose coefficients are the given rows.
    pub fn lift(&self, coeffs: &RealMatrix) -> Result<RealMatrix, KoopmanError> {
        if coeffs.cols() != self.rank() {
            return Err(KoopmanError::Dimension(format!(
                "coefficients have {} columns, basis rank is {}",
                coeffs.cols(),
                self.rank()
            )));
        }
        let states = coeffs.matmul(&self.b.transpose())?;
        Ok(match &self.mean {
            None => states,
            Some(m) => shift_rows(&states, m, 1.0),
        })
    }

    /// Coefficient tensor `s x n x r`, mask preserved.
    pub fn project_tensor(&self, h: &HiddenStateTensor) -> Result<HiddenStateTensor, KoopmanError> {
        if h.hidden_dim() != self.hidden_dim() {
            return Err(KoopmanError::Dimension(format!(
                "tensor hidden size {} does not match basis {}",
                h.hidden_dim(),
                self.hidden_dim()
            )));
        }
        let b = &self.b;
        let mean = self.mean.clone();
        Ok(h.map_states(self.rank(), |rows| match &mean {
            None => rows.matmul(b),
            Some(m) => shift_rows(rows, m, -1.0).matmul(b),
        })?)
    }
}

fn shift_rows(m: &RealMatrix, v: &[f64], sign: f64) -> RealMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        for (x, mu) in out.row_mut(i).iter_mut().zip(v) {
            *x += sign * mu;
        }
    }
    out
}

/// Smallest rank whose cumulative squared singular values reach `fraction`
/// of the total. An all-zero spectrum gives rank 1.
pub fn energy_rank(singular_values: &[f64], fraction: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1.min(singular_values.len());
    }
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= fraction * total {
            return i + 1;
        }
    }
    singular_values.len()
}

pub fn compute_basis(h: &HiddenStateTensor, r: usize, method: BasisMethod) -> Result<SpectralBasis, KoopmanError> {
    compute_basis_with(h, RankChoice::Fixed(r), method, &FitConfig::default())
}

pub fn compute_basis_with(
    h: &HiddenStateTensor,
    rank: RankChoice,
    method: BasisMethod,
    config: &FitConfig,
) -> Result<SpectralBasis, KoopmanError> {
    let mut stack = h.stacked_states(config.padding);
    let k = h.hidden_dim();
    let max = k.min(stack.rows());
    if let RankChoice::Fixed(r) = rank {
        if r == 0 || r > max {
            return Err(KoopmanError::Rank { r, max });
        }
    }
    if max == 0 {
        return Err(KoopmanError::Rank { r: 0, max });
    }
    let mean = match method {
        BasisMethod::Svd => None,
        BasisMethod::PcaCentered => {
            let n = stack.rows() as f64;
            let mut m = vec![0.0; k];
            for i in 0..stack.rows() {
                for (acc, v) in m.iter_mut().zip(stack.row(i)) {
                    *acc += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= n);
            stack = shift_rows(&stack, &m, -1.0);
            Some(m)
        }
    };
    let f = svd_with(&stack, &config.numerics)?;
    let r = match rank {
        RankChoice::Fixed(r) => r,
        RankChoice::Energy(fraction) => energy_rank(&f.singular_values, fraction),
    };
    let cols: Vec<usize> = (0..r).collect();
    let mut b = f.right_vectors.select_columns(&cols);
    for j in 0..r {
        let col = b.col(j);
        let lead = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > col[best].abs() { i } else { best });
        if col[lead] < 0.0 {
            for i in 0..k {
                b[(i, j)] = -b[(i, j)];
            }
        }
    }
    SpectralBasis::from_parts(b, f.singular_values[..r].to_vec(), method, mean)
}

/// The fitted coefficient-space operator together with the basis it acts in.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanOperator {
    c: RealMatrix,
    basis: SpectralBasis,
    fit_residual: f64,
}

impl KoopmanOperator {
    pub fn from_parts(c: RealMatrix, basis: SpectralBasis, fit_residual: f64) -> Result<Self, KoopmanError> {
        let r = basis.rank();
        if c.shape() != (r, r) {
            return Err(KoopmanError::Dimension(format!(
                "operator is {}x{}, basis rank is {r}",
                c.rows(),
                c.cols()
            )));
        }
        if !(fit_residual.is_finite() && fit_residual >= 0.0) {
            return Err(KoopmanError::Basis(format!("fit residual {fit_residual} is invalid")));
        }
        Ok(Self { c, basis, fit_residual })
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.c
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    /// `‖predict(X) − Y‖_F / ‖Y‖_F` over the fitted pairs, zero when `Y = 0`.
    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    /// Advances each state row by one step.
    pub fn predict_next(&self, states: &RealMatrix) -> Result<RealMatrix, KoopmanError> {
        let coeffs = self.basis.project(states)?.matmul(&self.c)?;
        self.basis.lift(&coeffs)
    }

    /// Predictions for steps `1..=steps`. Coefficients are propagated in the
    /// basis and lifted once per step.
    pub fn rollout(&self, states: &RealMatrix, steps: usize) -> Result<Vec<RealMatrix>, KoopmanError> {
        if steps == 0 {
            return Err(KoopmanError::Dimension("rollout needs at least one step".into()));
        }
        let mut coeffs = self.basis.project(states)?;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            coeffs = coeffs.matmul(&self.c)?;
            out.push(self.basis.lift(&coeffs)?);
        }
        Ok(out)
    }
}

pub fn fit_koopman(h: &HiddenStateTensor, basis: &SpectralBasis) -> Result<KoopmanOperator, KoopmanError> {
    fit_koopman_with(h, basis, &FitConfig::default())
}

pub fn fit_koopman_with(
    h: &HiddenStateTensor,
    basis: &SpectralBasis,
    config: &FitConfig,
) -> Result<KoopmanOperator, KoopmanError> {
    let (x, y) = flatten_with(h, config.padding)?;
    let xt = basis.project(&x)?;
    let yt = basis.project(&y)?;
    let c = lstsq_with(&xt, &yt, &config.numerics)?;
    let mut op = KoopmanOperator {
        c,
        basis: basis.clone(),
        fit_residual: 0.0,
    };
    let y_norm = y.frobenius_norm();
    if y_norm > 0.0 {
        op.fit_residual = op.predict_next(&x)?.sub(&y)?.frobenius_norm() / y_norm;
    }
    Ok(op)
}

/// One-step predictions `predict(h[s, t])` paired with the true `h[s, t + 1]`,
/// both with `n − 1` steps and a mask covering the valid pairs.
pub fn one_step_predictions(
    h: &HiddenStateTensor,
    op: &KoopmanOperator,
) -> Result<(HiddenStateTensor, HiddenStateTensor), KoopmanError> {
    let (s, n, k) = h.shape();
    if n < 2 {
        return Err(StateIoError::TooShort { sample: 0, valid: n }.into());
    }
    let mut lengths = Vec::with_capacity(s);
    for i in 0..s {
        let len = h.valid_len(i);
        if len < 2 {
            return Err(StateIoError::TooShort { sample: i, valid: len }.into());
        }
        lengths.push(len - 1);
    }
    let mut current = Vec::with_capacity(s * (n - 1) * k);
    let mut next = Vec::with_capacity(s * (n - 1) * k);
    for i in 0..s {
        for t in 0..n - 1 {
            current.extend_from_slice(h.state(i, t));
            next.extend_from_slice(h.state(i, t + 1));
        }
    }
    let current = RealMatrix::new(s * (n - 1), k, current)?;
    let predicted = op.predict_next(&current)?;
    let predicted = HiddenStateTensor::new(s, n - 1, k, predicted.into_vec())?.with_lengths(&lengths)?;
    let actual = HiddenStateTensor::new(s, n - 1, k, next)?.with_lengths(&lengths)?;
    Ok((predicted, actual))
}

/// Mean over valid steps of `‖ĥ − h‖² / ‖h‖²`.
pub fn relative_error(predicted: &HiddenStateTensor, actual: &HiddenStateTensor) -> Result<f64, KoopmanError> {
    if predicted.shape() != actual.shape() {
        return Err(KoopmanError::Dimension(format!(
            "predicted shape {:?} differs from actual {:?}",
            predicted.shape(),
            actual.shape()
        )));
    }
    if predicted.mask() != actual.mask() {
        return Err(KoopmanError::Dimension("predicted and actual masks differ".into()));
    }
    let (s, n, _) = actual.shape();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..s {
        for t in 0..n {
            if !actual.is_valid(i, t) {
                continue;
            }
            let h = actual.state(i, t);
            let denom: f64 = h.iter().map(|v| v * v).sum();
            if denom == 0.0 {
                return Err(KoopmanError::ZeroState { sample: i, step: t });
            }
            let num: f64 = predicted.state(i, t).iter().zip(h).map(|(p, a)| (p - a) * (p - a)).sum();
            total += num / denom;
            count += 1;
        }
    }
    if count == 0 {
        return Err(KoopmanError::Dimension("no valid states to compare".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(s: usize, n: usize, k: usize, data: Vec<f64>) -> HiddenStateTensor {
        HiddenStateTensor::new(s, n, k, data).unwrap()
    }

    #[test]
    fn rank_one_basis_is_the_direction() {
        let h = tensor(1, 3, 2, vec![3.0, -4.0, -6.0, 8.0, 1.5, -2.0]);
        let b = compute_basis(&h, 1, BasisMethod::Svd).unwrap();
        // Largest-magnitude entry made positive: (-0.6, 0.8).
        assert!((b.matrix()[(0, 0)] + 0.6).abs() < 1e-12);
        assert!((b.matrix()[(1, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rank_out_of_range() {
        let h = tensor(1, 2, 3, vec![1.0; 6]);
        let err = compute_basis(&h, 3, BasisMethod::Svd).unwrap_err();
        assert!(matches!(err, KoopmanError::Rank { r: 3, max: 2 }));
        assert!(err.to_string().contains("1..=2"));
        assert!(compute_basis(&h, 0, BasisMethod::Svd).is_err());
    }

    #[test]
    fn state_along_basis_vector() {
        let basis = SpectralBasis::from_parts(RealMatrix::identity(3), vec![1.0; 3], BasisMethod::Svd, None).unwrap();
        let c = basis.project(&RealMatrix::from_rows(&[vec![3.0, 0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(c.row(0), &[3.0, 0.0, 0.0]);
    }

    #[test]
    fn pca_zero_coefficients_lift_to_mean() {
        let h = tensor(1, 3, 2, vec![1.0, 1.0, 2.0, 3.0, 3.0, 2.0]);
        let b = compute_basis(&h, 1, BasisMethod::PcaCentered).unwrap();
        let lifted = b.lift(&RealMatrix::zeros(1, 1)).unwrap();
        assert!((lifted[(0, 0)] - 2.0).abs() < 1e-14 && (lifted[(0, 1)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn constant_states_give_unit_operator() {
        let h = tensor(2, 4, 2, [0.3, -0.7].repeat(8));
        let b = compute_basis(&h, 1, BasisMethod::Svd).unwrap();
        let op = fit_koopman(&h, &b).unwrap();
        assert!((op.matrix()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(op.fit_residual() < 1e-12);
    }

    #[test]
    fn scalar_contraction_and_geometric_rollout() {
        let basis = SpectralBasis::from_parts(RealMatrix::identity(1), vec![1.0], BasisMethod::Svd, None).unwrap();
        let op = KoopmanOperator::from_parts(RealMatrix::diag(&[0.5]), basis, 0.0).unwrap();
        let next = op.predict_next(&RealMatrix::column(&[2.0]).unwrap()).unwrap();
        assert_eq!(next[(0, 0)], 1.0);
        let steps = op.rollout(&RealMatrix::column(&[8.0]).unwrap(), 3).unwrap();
        let vals: Vec<f64> = steps.iter().map(|m| m[(0, 0)]).collect();
        assert_eq!(vals, vec![4.0, 2.0, 1.0]);
        assert!(op.rollout(&RealMatrix::column(&[8.0]).unwrap(), 0).is_err());
    }

    #[test]
    fn relative_error_hand_values() {
        let a = tensor(1, 1, 2, vec![3.0, 4.0]);
        let p = tensor(1, 1, 2, vec![3.0, 5.0]);
        assert!((relative_error(&p, &a).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(relative_error(&a, &a).unwrap(), 0.0);
        let z = tensor(1, 1, 2, vec![0.0, 0.0]);
        assert!(matches!(relative_error(&p, &z), Err(KoopmanError::ZeroState { sample: 0, step: 0 })));
    }

    #[test]
    fn relative_error_skips_padding() {
        let a = tensor(1, 2, 1, vec![1.0, 0.0]).with_lengths(&[1]).unwrap();
        let p = tensor(1, 2, 1, vec![1.1, 5.0]).with_lengths(&[1]).unwrap();
        assert!((relative_error(&p, &a).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn energy_rank_thresholds() {
        assert_eq!(energy_rank(&[3.0, 1.0, 0.0], 0.9), 1);
        assert_eq!(energy_rank(&[3.0, 1.0, 0.0], 0.95), 2);
        assert_eq!(energy_rank(&[0.0, 0.0], 0.999), 1);
    }

    #[test]
    fn from_parts_rejects_non_orthonormal() {
        let b = RealMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(SpectralBasis::from_parts(b, vec![1.0, 1.0], BasisMethod::Svd, None).is_err());
        assert!(SpectralBasis::from_parts(RealMatrix::identity(2), vec![1.0, 1.0], BasisMethod::PcaCentered, None).is_err());
    }
}
