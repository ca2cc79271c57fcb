use rand::Rng;
use rand_distr::StandardNormal;

use super::{rng, HarnessError};
use crate::numerics::{eig, RealMatrix};
use crate::state_io::HiddenStateTensor;

/// Generators refuse dynamics with a larger spectral radius unless forced.
pub const MAX_STABLE_RADIUS: f64 = 1.05;

/// `[[cos θ, −sin θ], [sin θ, cos θ]]`, eigenvalues `e^{±iθ}`.
pub fn rotation(theta: f64) -> RealMatrix {
    let (s, c) = theta.sin_cos();
    RealMatrix::from_rows(&[vec![c, -s], vec![s, c]]).expect("finite")
}

/// A diagonal block of a matrix with prescribed spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumBlock {
    Real(f64),
    /// `modulus · rotation(angle)`, eigenvalues `modulus · e^{±i angle}`.
    Rotation { modulus: f64, angle: f64 },
}

/// `h_{t+1} = h_t · A` on row-vector states, the same convention as the
/// fitted operator, so a full-rank fit with `B = I` recovers `C = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    a: RealMatrix,
    spectral_radius: f64,
}

impl LinearDynamics {
    pub fn new(a: RealMatrix, force: bool) -> Result<Self, HarnessError> {
        if a.rows() != a.cols() || a.rows() == 0 {
            return Err(HarnessError::Dimension(format!("A must be square, got {:?}", a.shape())));
        }
        let spectral_radius = eig(&a)?.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if spectral_radius > MAX_STABLE_RADIUS && !force {
            return Err(HarnessError::Unstable {
                radius: spectral_radius,
                max: MAX_STABLE_RADIUS,
            });
        }
        Ok(Self { a, spectral_radius })
    }

    /// `Q · blockdiag(blocks) · Qᵀ` for a seeded random orthogonal `Q`.
    pub fn from_spectrum(blocks: &[SpectrumBlock], seed: u64, force: bool) -> Result<Self, HarnessError> {
        let k: usize = blocks
            .iter()
            .map(|b| match b {
                SpectrumBlock::Real(_) => 1,
                SpectrumBlock::Rotation { .. } => 2,
            })
            .sum();
        if k == 0 {
            return Err(HarnessError::Parameter("no spectrum blocks".into()));
        }
        let mut d = RealMatrix::zeros(k, k);
        let mut at = 0;
        for b in blocks {
            match *b {
                SpectrumBlock::Real(l) => {
                    d[(at, at)] = l;
                    at += 1;
                }
                SpectrumBlock::Rotation { modulus, angle } => {
                    let r = rotation(angle).scale(modulus);
                    for i in 0..2 {
                        for j in 0..2 {
                            d[(at + i, at + j)] = r[(i, j)];
                        }
                    }
                    at += 2;
                }
            }
        }
        let q = random_orthogonal(k, seed);
        Self::new(q.matmul(&d)?.matmul(&q.transpose())?, force)
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.a
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }
}

/// Seeded orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(k: usize, seed: u64) -> RealMatrix {
    let mut r = rng(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..k).map(|_| r.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    let mut q = RealMatrix::zeros(k, k);
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            q[(i, j)] = *v;
        }
    }
    q
}

fn unit_gaussian(r: &mut impl Rng, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| r.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `s` trajectories of length `n` from seeded unit-norm initial states.
pub fn gen_linear(
    dynamics: &LinearDynamics,
    s: usize,
    n: usize,
    noise_rel: f64,
    seed: u64,
) -> Result<HiddenStateTensor, HarnessError> {
    let k = dynamics.dim();
    let mut r = rng(seed);
    let mut h0 = RealMatrix::zeros(s, k);
    for i in 0..s {
        h0.row_mut(i).copy_from_slice(&unit_gaussian(&mut r, k));
    }
    run_linear(dynamics, &h0, n, noise_rel, &mut r)
}

/// Trajectories from the given initial state rows; the first recorded
/// state is the initial state itself.
pub fn gen_linear_from(
    dynamics: &LinearDynamics,
    h0: &RealMatrix,
    n: usize,
    noise_rel: f64,
    seed: u64,
) -> Result<HiddenStateTensor, HarnessError> {
    if h0.cols() != dynamics.dim() {
        return Err(HarnessError::Dimension(format!(
            "initial states have {} columns, dynamics has {}",
            h0.cols(),
            dynamics.dim()
        )));
    }
    run_linear(dynamics, h0, n, noise_rel, &mut rng(seed))
}

fn run_linear(
    dynamics: &LinearDynamics,
    h0: &RealMatrix,
    n: usize,
    noise_rel: f64,
    r: &mut impl Rng,
) -> Result<HiddenStateTensor, HarnessError> {
    if n < 2 {
        return Err(HarnessError::Parameter(format!("need at least 2 steps, got {n}")));
    }
    if !(noise_rel >= 0.0 && noise_rel.is_finite()) {
        return Err(HarnessError::Parameter(format!("noise level {noise_rel} must be non-negative")));
    }
    let (s, k) = h0.shape();
    let mut data = Vec::with_capacity(s * n * k);
    for i in 0..s {
        let mut h = RealMatrix::new(1, k, h0.row(i).to_vec())?;
        data.extend_from_slice(h.row(0));
        for _ in 1..n {
            let norm = h.frobenius_norm();
            let mut next = h.matmul(&dynamics.a)?;
            if noise_rel > 0.0 {
                let g = unit_gaussian(r, k);
                for (x, gi) in next.row_mut(0).iter_mut().zip(g) {
                    *x += noise_rel * norm * gi;
                }
            }
            data.extend_from_slice(next.row(0));
            h = next;
        }
    }
    Ok(HiddenStateTensor::new(s, n, k, data)?)
}

/// Two classes (alternating by sample index) whose trajectories follow the
/// same dynamics around centres `±separation/2 · e₁`.
pub fn gen_two_class(
    dynamics: &LinearDynamics,
    s: usize,
    n: usize,
    separation: f64,
    noise_rel: f64,
    seed: u64,
) -> Result<(HiddenStateTensor, Vec<usize>), HarnessError> {
    if !separation.is_finite() || separation < 0.0 {
        return Err(HarnessError::Parameter(format!("separation {separation} must be non-negative")));
    }
    let base = gen_linear(dynamics, s, n, noise_rel, seed)?;
    let labels: Vec<usize> = (0..s).map(|i| i % 2).collect();
    let k = dynamics.dim();
    let mut data = base.data().to_vec();
    for (idx, chunk) in data.chunks_mut(k).enumerate() {
        let sample = idx / n;
        let sign = if labels[sample] == 1 { 1.0 } else { -1.0 };
        chunk[0] += sign * separation / 2.0;
    }
    Ok((HiddenStateTensor::new(s, n, k, data)?, labels))
}

/// `H · D`: decodes state rows into output signals.
pub fn linear_decoder(states: &RealMatrix, d: &RealMatrix) -> Result<RealMatrix, HarnessError> {
    if states.cols() != d.rows() {
        return Err(HarnessError::Dimension(format!(
            "states have {} columns, decoder expects {}",
            states.cols(),
            d.rows()
        )));
    }
    Ok(states.matmul(d)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_trajectory() {
        let dynamics = LinearDynamics::new(RealMatrix::diag(&[0.5, 0.5]), false).unwrap();
        let h0 = RealMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let t = gen_linear_from(&dynamics, &h0, 3, 0.0, 0).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.5, 0.0, 0.25, 0.0]);
    }

    #[test]
    fn unstable_needs_force() {
        let a = RealMatrix::diag(&[1.2]);
        assert!(matches!(LinearDynamics::new(a.clone(), false), Err(HarnessError::Unstable { .. })));
        assert!(LinearDynamics::new(a, true).is_ok());
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let q = random_orthogonal(6, 4);
        let g = q.transpose().matmul(&q).unwrap();
        assert!(g.sub(&RealMatrix::identity(6)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn noise_is_relative() {
        let dynamics = LinearDynamics::new(RealMatrix::identity(3), false).unwrap();
        let h0 = RealMatrix::from_rows(&[vec![2.0, 0.0, 0.0]]).unwrap();
        let t = gen_linear_from(&dynamics, &h0, 2, 0.1, 9).unwrap();
        let d: f64 = t.state(0, 1).iter().zip(t.state(0, 0)).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((d.sqrt() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_states_decode_to_zero() {
        let out = linear_decoder(&RealMatrix::zeros(2, 3), &RealMatrix::identity(3)).unwrap();
        assert_eq!(out.max_abs(), 0.0);
        assert!(linear_decoder(&RealMatrix::zeros(2, 3), &RealMatrix::identity(2)).is_err());
    }
}
