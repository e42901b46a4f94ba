//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{GbmError, Result};

/// Inverse of a symmetric positive definite matrix, falling back to LU when
/// the Cholesky factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(ch) = m.clone().cholesky() {
        let inv = ch.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return Ok(inv);
        }
    }
    general_inverse(m)
}

pub fn general_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| GbmError::Numeric(format!("singular {}x{} matrix", m.nrows(), m.ncols())))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(GbmError::Numeric("non-finite matrix inverse".into()))
    }
}

/// Solves `m x = b` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if m.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    if let Some(ch) = m.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    m.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| GbmError::Numeric("singular system".into()))
}

/// Left pseudoinverse `(A'A)^{-1} A'` of a full column rank matrix.
pub fn left_pseudoinverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = a.tr_mul(a);
    let inv = spd_inverse(&gram)?;
    Ok(inv * a.transpose())
}

/// Compact SVD truncated to `rank`, singular values in decreasing order.
pub fn truncated_svd(m: &DMatrix<f64>, rank: usize) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    if rank == 0 {
        return Ok((DMatrix::zeros(rows, 0), DVector::zeros(0), DMatrix::zeros(cols, 0)));
    }
    if rank > rows.min(cols) {
        return Err(GbmError::Shape(format!("rank {rank} exceeds min dimension of {rows}x{cols}")));
    }
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| GbmError::Numeric("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut uu = DMatrix::zeros(rows, rank);
    let mut vv = DMatrix::zeros(cols, rank);
    let mut d = DVector::zeros(rank);
    for (m_out, &src) in order.iter().take(rank).enumerate() {
        uu.set_column(m_out, &u.column(src));
        vv.set_column(m_out, &vt.row(src).transpose());
        d[m_out] = svd.singular_values[src];
    }
    Ok((uu, d, vv))
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `X' diag(w) X` accumulated row by row.
pub fn weighted_gram<'a>(x: &DMatrix<f64>, weights: impl Iterator<Item = &'a f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let mut out = DMatrix::zeros(p, p);
    for (i, &w) in weights.enumerate() {
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = w * x[(i, a)];
            for b in a..p {
                out[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn svd_reconstructs_and_orders() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
        let (u, d, v) = truncated_svd(&m, 2).unwrap();
        assert!(d[0] >= d[1]);
        let rebuilt = &u * DMatrix::from_diagonal(&d) * v.transpose();
        assert_relative_eq!(rebuilt, m, epsilon = 1e-12);
    }

    #[test]
    fn pseudoinverse_is_left_inverse() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, -1.0, 1.0, 2.0, 1.0, 0.1]);
        let p = left_pseudoinverse(&a).unwrap();
        assert_relative_eq!(&p * &a, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn weighted_gram_matches_dense() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, -1.0, 1.0, 0.5]);
        let w = [0.5, 2.0, 1.5];
        let dense = x.transpose() * DMatrix::from_diagonal(&DVector::from_row_slice(&w)) * &x;
        assert_relative_eq!(weighted_gram(&x, w.iter()), dense, epsilon = 1e-14);
    }
}
