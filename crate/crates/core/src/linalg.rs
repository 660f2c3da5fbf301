//! Small dense linear-algebra helpers shared by the model modules.
//!
//! Matrices here are at most a few dozen rows wide, so everything is written
//! for clarity over asymptotic speed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues, nonincreasing.
    pub values: DVector<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Largest absolute elementwise asymmetry `|a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm drops below `1e-12` (relative
/// to the matrix norm when that exceeds one), for at most 100 sweeps.
/// Eigenpairs are returned in descending eigenvalue order, ties kept in
/// original column order, and every eigenvector is signed so that its
/// largest-magnitude entry is positive.
pub fn jacobi_eigen(input: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = input.nrows();
    if n == 0 || input.ncols() != n {
        return Err(Error::contract(format!(
            "eigen-decomposition needs a nonempty square matrix, got {}x{}",
            input.nrows(),
            input.ncols()
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("matrix contains non-finite entries"));
    }

    let mut a = input.clone();
    // Symmetrize so that rounding-level asymmetry does not leak into the rotations.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let tol = JACOBI_TOL * a.norm().max(1.0);
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut sweeps = 0;

    while sweeps < JACOBI_MAX_SWEEPS && off_diagonal_norm(&a) >= tol {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps original column order on exact ties.
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());

    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        let mut pivot = 0;
        for k in 1..n {
            if col[k].abs() > col[pivot].abs() {
                pivot = k;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }

    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    let eig = jacobi_eigen(a)?;
    Ok(eig.values[eig.values.len() - 1])
}

/// Column means of a `T x I` matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let t = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / t))
}

/// Unbiased (`n - 1`) sample covariance of the columns of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let means = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let mut cov = centered.transpose() * &centered;
    cov /= (n as f64 - 1.0).max(1.0);
    symmetrize(&mut cov);
    cov
}

/// Pearson correlation of the columns of `x`. Zero-variance columns are a contract error.
pub fn sample_correlation(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cov = sample_covariance(x);
    let n = cov.nrows();
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    if sd.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::contract("correlation of a zero-variance column"));
    }
    let mut corr = DMatrix::from_fn(n, n, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
    for i in 0..n {
        corr[(i, i)] = 1.0;
    }
    Ok(corr)
}

/// Replace `a` by `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// Factor `F` with `F Fᵀ = cov`.
///
/// Uses the Cholesky factor when `cov` is positive definite. Otherwise the
/// matrix is repaired by clipping negative eigenvalues to zero and the
/// symmetric square-root factor `V sqrt(Λ)` of the repaired matrix is returned.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = jacobi_eigen(cov)?;
    let n = cov.nrows();
    let mut f = eig.vectors.clone();
    for j in 0..n {
        let s = eig.values[j].max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}
