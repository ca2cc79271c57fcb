use super::{svd_with, NumericsConfig, NumericsError, RealMatrix};

/// Minimum-norm least-squares solution of `X · C ≈ Y`.
pub fn lstsq(x: &RealMatrix, y: &RealMatrix) -> Result<RealMatrix, NumericsError> {
    lstsq_with(x, y, &NumericsConfig::default())
}

/// Pseudoinverse solution `C = V · S⁺ · Uᵀ · Y`, dropping singular values
/// below `rcond · σ_max`.
pub fn lstsq_with(
    x: &RealMatrix,
    y: &RealMatrix,
    config: &NumericsConfig,
) -> Result<RealMatrix, NumericsError> {
    if x.is_empty() || y.is_empty() {
        return Err(NumericsError::Empty("least squares operands"));
    }
    if x.rows() != y.rows() {
        return Err(NumericsError::Shape(format!(
            "least squares needs equal row counts, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    let f = svd_with(x, config)?;
    let sigma_max = f.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = config.lstsq_rcond * sigma_max;

    // Uᵀ Y, scaled row by row with the truncated reciprocals.
    let mut uty = f.left_vectors.transpose().matmul(y)?;
    for (i, &s) in f.singular_values.iter().enumerate() {
        let inv = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
        for v in uty.row_mut(i) {
            *v *= inv;
        }
    }
    f.right_vectors.matmul(&uty)
}
