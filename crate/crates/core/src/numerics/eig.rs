//! Eigendecomposition of a general real square matrix.
//!
//! Householder reduction to upper Hessenberg form followed by the shifted
//! double-step QR iteration and back-substitution for the eigenvectors. This
//! is the EISPACK `orthes`/`hqr2` pair (Martin & Wilkinson), as popularised
//! by JAMA. Eigenvalues come back in conjugate pairs with bit-identical
//! moduli, which the ordering below relies on.

use num_complex::Complex64;

use super::inverse::inverse_with;
use super::{ComplexMatrix, NumericsConfig, NumericsError, RealMatrix};

/// Eigenvalues sorted by modulus (descending) with matching unit-norm
/// right eigenvectors in the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub values: Vec<Complex64>,
    pub vectors: ComplexMatrix,
    /// 1-norm condition estimate of `vectors`; infinite when singular.
    pub condition: f64,
    /// Set when `condition` exceeds the configured defective threshold.
    pub defective: bool,
}

pub fn eig(a: &RealMatrix) -> Result<EigResult, NumericsError> {
    eig_with(a, &NumericsConfig::default())
}

pub fn eig_with(a: &RealMatrix, config: &NumericsConfig) -> Result<EigResult, NumericsError> {
    let n = a.rows();
    if n != a.cols() {
        return Err(NumericsError::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if n == 0 {
        return Err(NumericsError::Empty("eigendecomposition of an empty matrix"));
    }

    let mut h: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut v = vec![vec![0.0; n]; n];
    orthes(&mut h, &mut v);
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    hqr2(&mut h, &mut v, &mut d, &mut e, config.eig_max_iterations)?;

    // Unpack the real storage format: a complex pair (d[j] ± i e[j]) with
    // e[j] > 0 stores the real part in column j and the imaginary part in j+1.
    let mut pairs: Vec<(Complex64, Vec<Complex64>)> = Vec::with_capacity(n);
    let mut j = 0;
    while j < n {
        if e[j] == 0.0 {
            let vec = (0..n).map(|i| Complex64::new(v[i][j], 0.0)).collect();
            pairs.push((Complex64::new(d[j], 0.0), vec));
            j += 1;
        } else {
            let upper: Vec<Complex64> = (0..n).map(|i| Complex64::new(v[i][j], v[i][j + 1])).collect();
            let lower = upper.iter().map(|z| z.conj()).collect();
            pairs.push((Complex64::new(d[j], e[j]), upper));
            pairs.push((Complex64::new(d[j + 1], e[j + 1]), lower));
            j += 2;
        }
    }
    for (_, vec) in &mut pairs {
        normalize_eigenvector(vec);
    }

    let order = eigen_order(&pairs.iter().map(|(l, _)| *l).collect::<Vec<_>>());
    let values: Vec<Complex64> = order.iter().map(|&i| pairs[i].0).collect();
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        for (row, z) in pairs[i].1.iter().enumerate() {
            vectors[(row, col)] = *z;
        }
    }

    let condition = match inverse_with(&vectors, &NumericsConfig {
        max_condition: f64::INFINITY,
        ..*config
    }) {
        Ok(inv) => inv.condition,
        Err(_) => f64::INFINITY,
    };
    Ok(EigResult {
        values,
        vectors,
        condition,
        defective: !(condition <= config.defective_condition),
    })
}

/// Unit 2-norm, first component with modulus above 1e-12 rotated to the
/// positive real axis.
pub(crate) fn normalize_eigenvector(vec: &mut [Complex64]) {
    let norm = vec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for z in vec.iter_mut() {
        *z /= norm;
    }
    if let Some(pivot) = vec.iter().find(|z| z.norm() > 1e-12).copied() {
        let phase = pivot.conj() / pivot.norm();
        for z in vec.iter_mut() {
            *z *= phase;
        }
    }
}

/// Sort permutation: modulus descending; moduli within a relative 1e-12 of
/// each other are ties, broken by imaginary part then real part, descending.
pub(crate) fn eigen_order(values: &[Complex64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].norm().total_cmp(&values[a].norm()).then(a.cmp(&b)));
    let mut start = 0;
    while start < order.len() {
        let head = values[order[start]].norm();
        let tol = 1e-12 * head.max(1e-300);
        let mut end = start + 1;
        while end < order.len() && head - values[order[end]].norm() <= tol {
            end += 1;
        }
        order[start..end].sort_by(|&a, &b| {
            values[b]
                .im
                .total_cmp(&values[a].im)
                .then(values[b].re.total_cmp(&values[a].re))
                .then(a.cmp(&b))
        });
        start = end;
    }
    order
}

fn orthes(h: &mut [Vec<f64>], v: &mut [Vec<f64>]) {
    let n = h.len();
    let high = n - 1;
    let mut ort = vec![0.0; n];

    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[i][j];
            }
            f /= hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for row in h.iter_mut().take(high + 1) {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * row[j];
            }
            f /= hh;
            for j in m..=high {
                row[j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[m][m - 1] = scale * g;
    }

    for (i, row) in v.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = if i == j { 1.0 } else { 0.0 };
        }
    }
    for m in (1..high).rev() {
        if h[m][m - 1] == 0.0 {
            continue;
        }
        for i in m + 1..=high {
            ort[i] = h[i][m - 1];
        }
        for j in m..=high {
            let mut g = 0.0;
            for i in m..=high {
                g += ort[i] * v[i][j];
            }
            g = (g / ort[m]) / h[m][m - 1];
            for i in m..=high {
                v[i][j] += g * ort[i];
            }
        }
    }
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

#[allow(clippy::many_single_char_names)]
fn hqr2(
    h: &mut [Vec<f64>],
    v: &mut [Vec<f64>],
    d: &mut [f64],
    e: &mut [f64],
    max_iter: usize,
) -> Result<(), NumericsError> {
    let nn = h.len();
    let low = 0usize;
    let high = nn - 1;
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let (mut p, mut q): (f64, f64);
    let (mut r, mut s, mut z) = (0.0f64, 0.0f64, 0.0f64);
    let (mut t, mut w, mut x, mut y);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[i][j].abs();
        }
    }

    // `n` is the index of the eigenvalue currently being isolated; it is
    // signed because the loop runs until it drops below `low`.
    let mut n = nn as isize - 1;
    let mut iter = 0usize;
    while n >= low as isize {
        let nu = n as usize;
        let mut l = nu;
        while l > low {
            s = h[l - 1][l - 1].abs() + h[l][l].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[l][l - 1].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            // One root found.
            h[nu][nu] += exshift;
            d[nu] = h[nu][nu];
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            // Two roots found.
            w = h[nu][nu - 1] * h[nu - 1][nu];
            p = (h[nu - 1][nu - 1] - h[nu][nu]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[nu][nu] += exshift;
            h[nu - 1][nu - 1] += exshift;
            x = h[nu][nu];

            if q >= 0.0 {
                // Real pair.
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = d[nu - 1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
                x = h[nu][nu - 1];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;

                for j in nu - 1..nn {
                    z = h[nu - 1][j];
                    h[nu - 1][j] = q * z + p * h[nu][j];
                    h[nu][j] = q * h[nu][j] - p * z;
                }
                for row in h.iter_mut().take(nu + 1) {
                    z = row[nu - 1];
                    row[nu - 1] = q * z + p * row[nu];
                    row[nu] = q * row[nu] - p * z;
                }
                for row in v.iter_mut().take(high + 1).skip(low) {
                    z = row[nu - 1];
                    row[nu - 1] = q * z + p * row[nu];
                    row[nu] = q * row[nu] - p * z;
                }
            } else {
                // Complex pair.
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            // No convergence yet: form shift.
            x = h[nu][nu];
            y = 0.0;
            w = 0.0;
            if l < nu {
                y = h[nu - 1][nu - 1];
                w = h[nu][nu - 1] * h[nu - 1][nu];
            }

            // Wilkinson's original ad hoc shift.
            if iter == 10 {
                exshift += x;
                for (i, row) in h.iter_mut().enumerate().take(nu + 1).skip(low) {
                    row[i] -= x;
                }
                s = h[nu][nu - 1].abs() + h[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }

            // MATLAB's ad hoc shift.
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for (i, row) in h.iter_mut().enumerate().take(nu + 1).skip(low) {
                        row[i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            if iter > max_iter {
                return Err(NumericsError::NoConvergence {
                    algorithm: "shifted QR eigenvalue iteration",
                    cap: max_iter,
                });
            }

            // Look for two consecutive small sub-diagonal elements.
            let mut m = nu - 2;
            loop {
                z = h[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - r - s;
                r = h[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[m][m - 1].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            // Double QR step involving rows l..=n and columns m..=n.
            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s == 0.0 {
                    continue;
                }
                if k != m {
                    h[k][k - 1] = -s * x;
                } else if l != m {
                    h[k][k - 1] = -h[k][k - 1];
                }
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;

                for j in k..nn {
                    p = h[k][j] + q * h[k + 1][j];
                    if notlast {
                        p += r * h[k + 2][j];
                        h[k + 2][j] -= p * z;
                    }
                    h[k][j] -= p * x;
                    h[k + 1][j] -= p * y;
                }
                for row in h.iter_mut().take(nu.min(k + 3) + 1) {
                    p = x * row[k] + y * row[k + 1];
                    if notlast {
                        p += z * row[k + 2];
                        row[k + 2] -= p * r;
                    }
                    row[k] -= p;
                    row[k + 1] -= p * q;
                }
                for row in v.iter_mut().take(high + 1).skip(low) {
                    p = x * row[k] + y * row[k + 1];
                    if notlast {
                        p += z * row[k + 2];
                        row[k + 2] -= p * r;
                    }
                    row[k] -= p;
                    row[k + 1] -= p * q;
                }
            }
        }
    }

    // Back-substitute to find vectors of the upper triangular form.
    if norm == 0.0 {
        return Ok(());
    }

    for n in (0..nn).rev() {
        p = d[n];
        q = e[n];

        if q == 0.0 {
            // Real vector.
            let mut l = n;
            h[n][n] = 1.0;
            for i in (0..n).rev() {
                w = h[i][i] - p;
                r = 0.0;
                for j in l..=n {
                    r += h[i][j] * h[j][n];
                }
                if e[i] < 0.0 {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        h[i][n] = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                    } else {
                        // Solve real equations.
                        x = h[i][i + 1];
                        y = h[i + 1][i];
                        q = (d[i] - p) * (d[i] - p) + e[i] * e[i];
                        t = (x * s - z * r) / q;
                        h[i][n] = t;
                        h[i + 1][n] = if x.abs() > z.abs() {
                            (-r - w * t) / x
                        } else {
                            (-s - y * t) / z
                        };
                    }
                    // Overflow control.
                    t = h[i][n].abs();
                    if (eps * t) * t > 1.0 {
                        for row in h.iter_mut().take(n + 1).skip(i) {
                            row[n] /= t;
                        }
                    }
                }
            }
        } else if q < 0.0 {
            // Complex vector; the pair occupies columns n-1 (real) and n (imaginary).
            let mut l = n - 1;
            if h[n][n - 1].abs() > h[n - 1][n].abs() {
                h[n - 1][n - 1] = q / h[n][n - 1];
                h[n - 1][n] = -(h[n][n] - p) / h[n][n - 1];
            } else {
                let (cr, ci) = cdiv(0.0, -h[n - 1][n], h[n - 1][n - 1] - p, q);
                h[n - 1][n - 1] = cr;
                h[n - 1][n] = ci;
            }
            h[n][n - 1] = 0.0;
            h[n][n] = 1.0;
            for i in (0..n - 1).rev() {
                let mut ra = 0.0;
                let mut sa = 0.0;
                for j in l..=n {
                    ra += h[i][j] * h[j][n - 1];
                    sa += h[i][j] * h[j][n];
                }
                w = h[i][i] - p;

                if e[i] < 0.0 {
                    z = w;
                    r = ra;
                    s = sa;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        let (cr, ci) = cdiv(-ra, -sa, w, q);
                        h[i][n - 1] = cr;
                        h[i][n] = ci;
                    } else {
                        // Solve complex equations.
                        x = h[i][i + 1];
                        y = h[i + 1][i];
                        let mut vr = (d[i] - p) * (d[i] - p) + e[i] * e[i] - q * q;
                        let vi = (d[i] - p) * 2.0 * q;
                        if vr == 0.0 && vi == 0.0 {
                            vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (cr, ci) =
                            cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                        h[i][n - 1] = cr;
                        h[i][n] = ci;
                        if x.abs() > z.abs() + q.abs() {
                            h[i + 1][n - 1] = (-ra - w * h[i][n - 1] + q * h[i][n]) / x;
                            h[i + 1][n] = (-sa - w * h[i][n] - q * h[i][n - 1]) / x;
                        } else {
                            let (cr, ci) = cdiv(-r - y * h[i][n - 1], -s - y * h[i][n], z, q);
                            h[i + 1][n - 1] = cr;
                            h[i + 1][n] = ci;
                        }
                    }
                    // Overflow control.
                    t = h[i][n - 1].abs().max(h[i][n].abs());
                    if (eps * t) * t > 1.0 {
                        for row in h.iter_mut().take(n + 1).skip(i) {
                            row[n - 1] /= t;
                            row[n] /= t;
                        }
                    }
                }
            }
        }
    }

    // Back transformation to eigenvectors of the original matrix.
    for j in (low..nn).rev() {
        for i in low..=high {
            z = 0.0;
            for k in low..=j.min(high) {
                z += v[i][k] * h[k][j];
            }
            v[i][j] = z;
        }
    }
    Ok(())
}
