//! Small dense symmetric solvers for the IRLS normal equations.

use crate::real::Real;

/// Relative pivot below which a column counts as linearly dependent.
pub(crate) fn pivot_tolerance<T: Real>() -> T {
    T::epsilon().sqrt() * T::lit(1e-2)
}

/// Cholesky factor `L` (row-major, lower) of a symmetric `p×p` matrix.
///
/// Columns whose pivot falls below the relative tolerance are reported as dependent;
/// their row and column of `L` are zeroed so the remaining columns can be checked.
pub(crate) fn cholesky<T: Real>(a: &[T], p: usize) -> Result<Vec<T>, Vec<usize>> {
    debug_assert_eq!(a.len(), p * p);
    let tol = pivot_tolerance::<T>();
    let mut l = vec![T::zero(); p * p];
    let mut dependent = Vec::new();
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= l[j * p + k] * l[j * p + k];
        }
        let scale = a[j * p + j].abs();
        if !(d > tol * scale) || scale == T::zero() {
            dependent.push(j);
            continue;
        }
        let djj = d.sqrt();
        l[j * p + j] = djj;
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / djj;
        }
    }
    if dependent.is_empty() {
        Ok(l)
    } else {
        Err(dependent)
    }
}

/// Solves `L Lᵀ x = b`.
pub(crate) fn cholesky_solve<T: Real>(l: &[T], p: usize, b: &[T]) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..p {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    y
}

/// Inverse of `L Lᵀ`, symmetrized.
pub(crate) fn cholesky_inverse<T: Real>(l: &[T], p: usize) -> Vec<T> {
    let mut inv = vec![T::zero(); p * p];
    let mut e = vec![T::zero(); p];
    for j in 0..p {
        e.iter_mut().for_each(|x| *x = T::zero());
        e[j] = T::one();
        let col = cholesky_solve(l, p, &e);
        for i in 0..p {
            inv[i * p + j] = col[i];
        }
    }
    let two = T::one() + T::one();
    for i in 0..p {
        for j in (i + 1)..p {
            let m = (inv[i * p + j] + inv[j * p + i]) / two;
            inv[i * p + j] = m;
            inv[j * p + i] = m;
        }
    }
    inv
}
