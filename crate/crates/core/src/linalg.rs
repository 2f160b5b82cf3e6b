//! Dense factorizations and the matrix exponential.

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    factor: Dense<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes a symmetric positive definite matrix. Only the lower
    /// triangle of `a` is read.
    pub fn new(a: &Dense<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape(format!("cholesky needs a square matrix, got {}x{}", n, a.cols())));
        }
        let mut l = Dense::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !diag.is_finite() || diag <= T::zero() {
                return Err(Error::Factorization { pivot: j, value: diag.as_f64(), condition: diagonal_ratio(a) });
            }
            let d = diag.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { factor: l })
    }

    pub fn factor(&self) -> &Dense<T> {
        &self.factor
    }

    /// Solves `A X = B` for every column of `B`.
    pub fn solve(&self, rhs: &Dense<T>) -> Result<Dense<T>> {
        let n = self.factor.rows();
        if rhs.rows() != n {
            return Err(Error::Shape(format!("right-hand side has {} rows, system has {n}", rhs.rows())));
        }
        let l = &self.factor;
        let mut x = rhs.clone();
        for c in 0..rhs.cols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
        Ok(x)
    }
}

/// max(diag) / min(diag): a cheap lower bound on the condition number of an
/// SPD matrix, reported when factorization fails.
fn diagonal_ratio<T: Scalar>(a: &Dense<T>) -> f64 {
    let n = a.rows().min(a.cols());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = a[(i, i)].as_f64().abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Induced 1-norm (max column absolute sum).
pub fn norm_one<T: Scalar>(a: &Dense<T>) -> T {
    let mut sums = vec![T::zero(); a.cols()];
    for r in 0..a.rows() {
        for (s, &v) in sums.iter_mut().zip(a.row(r)) {
            *s += v.abs();
        }
    }
    sums.into_iter().fold(T::zero(), T::max)
}

const EXPM_MAX_TERMS: usize = 64;

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The input is scaled by `2^-s` until its 1-norm is at most 1/2, the series
/// is summed until the next term is below `tol` relative to the partial sum,
/// and the result is squared `s` times.
pub fn expm<T: Scalar>(a: &Dense<T>, tol: T) -> Result<Dense<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("expm needs a square matrix, got {}x{}", n, a.cols())));
    }
    let norm = norm_one(a).as_f64();
    if !norm.is_finite() {
        return Err(Error::NonFinite { stage: "matrix exponential", step: 0 });
    }
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a.scale(T::of(0.5f64.powi(squarings)));

    let mut sum = Dense::identity(n);
    let mut term = Dense::identity(n);
    let mut converged = false;
    for k in 1..=EXPM_MAX_TERMS {
        term = term.matmul(&scaled)?.scale(T::one() / T::of_usize(k));
        sum = sum.add_scaled(&term, T::one())?;
        if norm_one(&term) <= tol * norm_one(&sum) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonFinite { stage: "matrix exponential series", step: EXPM_MAX_TERMS });
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}
