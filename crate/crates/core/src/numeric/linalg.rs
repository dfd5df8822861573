//! Cholesky-based routines for symmetric positive definite matrices.

use super::matrix::DenseMatrix;
use crate::error::{shape_err, NcError, Result};

/// Pivots at or below this fraction of the largest diagonal entry are treated
/// as non-positive.
pub const SPD_PIVOT_TOL: f64 = 1e-10;

/// Lower-triangular `L` with `L Lᵀ = m`.
pub fn cholesky_spd(m: &DenseMatrix) -> Result<DenseMatrix> {
    let n = m.rows();
    if m.cols() != n {
        return shape_err(format!("cholesky of non-square {}x{}", n, m.cols()));
    }
    let max_diag = (0..n).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
    let floor = SPD_PIVOT_TOL * max_diag.max(f64::MIN_POSITIVE);
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m.get(j, j);
        for k in 0..j {
            pivot -= l.get(j, k) * l.get(j, k);
        }
        if !(pivot > floor) {
            return Err(NcError::NotSpd { pivot: j, value: pivot });
        }
        let ljj = pivot.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solves `L y = b` in place.
pub fn forward_substitute(l: &DenseMatrix, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

/// Solves `Lᵀ x = y` in place.
pub fn backward_substitute(l: &DenseMatrix, b: &mut [f64]) {
    let n = l.rows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

/// Solves `m x = rhs` given a precomputed Cholesky factor of `m`.
pub fn cholesky_solve(l: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != l.rows() {
        return shape_err(format!(
            "solve: rhs length {} vs {}x{}",
            rhs.len(),
            l.rows(),
            l.cols()
        ));
    }
    let mut x = rhs.to_vec();
    forward_substitute(l, &mut x);
    backward_substitute(l, &mut x);
    Ok(x)
}

pub fn solve_spd(m: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky_spd(m)?;
    cholesky_solve(&l, rhs)
}

/// Solves `m X = rhs` column by column.
pub fn solve_spd_matrix(m: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    let l = cholesky_spd(m)?;
    if rhs.rows() != m.rows() {
        return shape_err(format!("solve: rhs has {} rows, expected {}", rhs.rows(), m.rows()));
    }
    let mut out = DenseMatrix::zeros(rhs.rows(), rhs.cols());
    let mut col = vec![0.0; rhs.rows()];
    for j in 0..rhs.cols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = rhs.get(i, j);
        }
        forward_substitute(&l, &mut col);
        backward_substitute(&l, &mut col);
        for (i, &c) in col.iter().enumerate() {
            out.set(i, j, c);
        }
    }
    Ok(out)
}

pub fn logdet_from_cholesky(l: &DenseMatrix) -> f64 {
    2.0 * (0..l.rows()).map(|i| l.get(i, i).ln()).sum::<f64>()
}

pub fn logdet_spd(m: &DenseMatrix) -> Result<f64> {
    Ok(logdet_from_cholesky(&cholesky_spd(m)?))
}

pub fn inverse_spd(m: &DenseMatrix) -> Result<DenseMatrix> {
    solve_spd_matrix(m, &DenseMatrix::identity(m.rows()))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Independent of the power-iteration path; used to cross-check spectral norms.
pub fn jacobi_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    let n = m.rows();
    if m.cols() != n {
        return shape_err("jacobi: matrix must be square");
    }
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum();
        let scale: f64 = a.frobenius_norm().max(f64::MIN_POSITIVE);
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}
