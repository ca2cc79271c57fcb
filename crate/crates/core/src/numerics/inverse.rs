use num_complex::Complex64;

use super::{ComplexMatrix, NumericsConfig, NumericsError};

#[derive(Debug, Clone)]
pub struct InverseResult {
    pub inverse: ComplexMatrix,
    /// `‖M‖₁ · ‖M⁻¹‖₁`.
    pub condition: f64,
}

pub fn inverse(m: &ComplexMatrix) -> Result<InverseResult, NumericsError> {
    inverse_with(m, &NumericsConfig::default())
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn inverse_with(m: &ComplexMatrix, config: &NumericsConfig) -> Result<InverseResult, NumericsError> {
    let n = m.rows();
    if n != m.cols() {
        return Err(NumericsError::Shape(format!(
            "inverse needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if n == 0 {
        return Err(NumericsError::Empty("inverse of an empty matrix"));
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut a: Vec<Vec<Complex64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut inv: Vec<Vec<Complex64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { Complex64::new(1.0, 0.0) } else { zero }).collect())
        .collect();

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .expect("non-empty range");
        if a[pivot_row][col].norm() == 0.0 {
            return Err(NumericsError::IllConditioned {
                condition: f64::INFINITY,
            });
        }
        a.swap(col, pivot_row);
        inv.swap(col, pivot_row);
        let pivot = a[col][col];
        for j in 0..n {
            a[col][j] /= pivot;
            inv[col][j] /= pivot;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let factor = a[i][col];
            if factor == zero {
                continue;
            }
            for j in 0..n {
                let (ac, ic) = (a[col][j], inv[col][j]);
                a[i][j] -= factor * ac;
                inv[i][j] -= factor * ic;
            }
        }
    }

    let inverse = ComplexMatrix::new(n, n, inv.concat()).map_err(|_| NumericsError::IllConditioned {
        condition: f64::INFINITY,
    })?;
    let condition = m.norm_one() * inverse.norm_one();
    if !(condition <= config.max_condition) {
        return Err(NumericsError::IllConditioned { condition });
    }
    Ok(InverseResult { inverse, condition })
}
