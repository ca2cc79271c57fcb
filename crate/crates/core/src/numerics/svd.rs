use super::{NumericsConfig, NumericsError, RealMatrix};

/// Thin singular value decomposition `M = left · diag(singular_values) · rightᵀ`.
///
/// For an `m x n` input with `p = min(m, n)`, `left` is `m x p` and `right`
/// is `n x p`, both with orthonormal columns.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub left_vectors: RealMatrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: RealMatrix,
}

impl SvdResult {
    /// Multiplies the factors back together.
    pub fn reconstruct(&self) -> RealMatrix {
        let mut scaled = self.left_vectors.clone();
        for i in 0..scaled.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                scaled[(i, j)] *= s;
            }
        }
        scaled
            .matmul(&self.right_vectors.transpose())
            .expect("factor shapes agree")
    }
}

pub fn svd(m: &RealMatrix) -> Result<SvdResult, NumericsError> {
    svd_with(m, &NumericsConfig::default())
}

/// One-sided Jacobi SVD.
pub fn svd_with(m: &RealMatrix, config: &NumericsConfig) -> Result<SvdResult, NumericsError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(NumericsError::Empty("svd of an empty matrix"));
    }
    if m.rows() < m.cols() {
        let t = svd_with(&m.transpose(), config)?;
        return Ok(SvdResult {
            left_vectors: t.right_vectors,
            singular_values: t.singular_values,
            right_vectors: t.left_vectors,
        });
    }
    let (rows, cols) = m.shape();
    // Work column-major: each column of `a` and `v` is contiguous.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    // Pairs count as orthogonal once |γ| ≤ √rows · ε · √(αβ); a bare ε
    // threshold can cycle on rounding noise for tall matrices.
    let tol = f64::EPSILON * (rows as f64).sqrt();
    let mut converged = cols < 2;
    for _ in 0..config.svd_max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            algorithm: "one-sided Jacobi SVD",
            cap: config.svd_max_sweeps,
        });
    }

    let norms: Vec<f64> = a.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut left_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            left_cols.push(a[j].iter().map(|x| x / norms[j]).collect());
        } else {
            left_cols.push(vec![0.0; rows]);
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut left_cols, &missing);

    let mut left = RealMatrix::zeros(rows, cols);
    let mut right = RealMatrix::zeros(cols, cols);
    for (slot, &j) in order.iter().enumerate() {
        for i in 0..rows {
            left[(i, slot)] = left_cols[slot][i];
        }
        for i in 0..cols {
            right[(i, slot)] = v[j][i];
        }
    }
    Ok(SvdResult {
        left_vectors: left,
        singular_values: order.iter().map(|&j| norms[j]).collect(),
        right_vectors: right,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the `missing` slots with unit vectors orthogonal to every other column.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let dim = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < dim, "orthogonal complement exhausted");
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            // Two Gram-Schmidt passes keep the result orthogonal to working precision.
            for _ in 0..2 {
                for (k, other) in cols.iter().enumerate() {
                    if k == slot || other.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let d: f64 = e.iter().zip(other).map(|(x, y)| x * y).sum();
                    for (x, y) in e.iter_mut().zip(other) {
                        *x -= d * y;
                    }
                }
            }
            let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                cols[slot] = e.into_iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}
