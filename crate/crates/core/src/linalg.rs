//! Dense complex-matrix utilities.
//!
//! Everything here operates on small matrices (dimensions up to a few
//! hundred), so all solves go through explicit factorizations with a
//! condition-number guard instead of unchecked inversion.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Inversions refuse operands whose estimated condition number exceeds this.
pub const COND_LIMIT: f64 = 1e12;

/// Relative tolerance for the Hermitian-symmetry check.
pub const HERMITIAN_RTOL: f64 = 1e-12;

/// Identity matrix shorthand.
pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Maximum column sum of entry magnitudes (the induced 1-norm).
pub fn norm1(a: &CMat) -> f64 {
    let mut best = 0.0f64;
    for c in 0..a.ncols() {
        let s: f64 = a.column(c).iter().map(|z| z.norm()).sum();
        if s > best {
            best = s;
        }
    }
    best
}

/// Largest entry magnitude.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn ensure_finite(a: &CMat, context: &'static str) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::SingularMatrix { context })
    }
}

/// Inverse through LU, guarded by a 1-norm condition estimate.
pub fn guarded_inverse(a: &CMat, context: &'static str) -> Result<CMat> {
    if a.nrows() != a.ncols() {
        return Err(Error::SingularMatrix { context });
    }
    ensure_finite(a, context)?;
    let na = norm1(a);
    let inv = a
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularMatrix { context })?;
    if !inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::SingularMatrix { context });
    }
    if na * norm1(&inv) > COND_LIMIT {
        return Err(Error::SingularMatrix { context });
    }
    Ok(inv)
}

/// Solves `A X = B` through LU with the same condition guard as
/// [`guarded_inverse`].
pub fn guarded_solve(a: &CMat, b: &CMat, context: &'static str) -> Result<CMat> {
    let inv = guarded_inverse(a, context)?;
    Ok(&inv * b)
}

/// `(A + B D C)^{-1}` evaluated as
/// `A^{-1} - A^{-1} B (D^{-1} + C A^{-1} B)^{-1} C A^{-1}`.
///
/// Requires `A`, `D` and the inner matrix `D^{-1} + C A^{-1} B` to be
/// invertible within the condition guard.
pub fn woodbury_inverse(a: &CMat, b: &CMat, d: &CMat, c: &CMat) -> Result<CMat> {
    let n = a.nrows();
    let r = d.nrows();
    if a.ncols() != n
        || d.ncols() != r
        || b.nrows() != n
        || b.ncols() != r
        || c.nrows() != r
        || c.ncols() != n
    {
        return Err(Error::SingularMatrix {
            context: "woodbury_inverse dimension mismatch",
        });
    }
    let a_inv = guarded_inverse(a, "woodbury_inverse A")?;
    let d_inv = guarded_inverse(d, "woodbury_inverse D")?;
    let a_inv_b = &a_inv * b;
    let inner = d_inv + c * &a_inv_b;
    let inner_inv = guarded_inverse(&inner, "woodbury_inverse inner matrix")?;
    Ok(&a_inv - a_inv_b * inner_inv * c * &a_inv)
}

/// `B (I + A B)^{-1}`, which equals `(I + B A)^{-1} B`.
pub fn push_through(b: &CMat, a: &CMat) -> Result<CMat> {
    if b.ncols() != a.nrows() || a.ncols() != b.nrows() {
        return Err(Error::SingularMatrix {
            context: "push_through dimension mismatch",
        });
    }
    let n = a.nrows();
    let inner = eye(n) + a * b;
    let inv = guarded_inverse(&inner, "push_through I + AB")?;
    Ok(b * inv)
}

/// Eigenvalue interval report from [`psd_check`].
#[derive(Debug, Clone, Copy)]
pub struct PsdReport {
    pub min_eig: f64,
    pub max_eig: f64,
    pub pass: bool,
}

/// Verifies `A` is Hermitian and reports its (real) eigenvalue interval.
///
/// Passes iff the minimum eigenvalue is at least `-1e-9` and, when
/// `upper_strict` is set, the maximum is at most `1 - 1e-9`.
pub fn psd_check(a: &CMat, upper_strict: bool) -> Result<PsdReport> {
    let scale = max_abs(a);
    let asym = max_abs(&(a - a.adjoint()));
    if asym > HERMITIAN_RTOL * scale && asym > 0.0 {
        return Err(Error::NotHermitian {
            max_asym: asym,
            scale,
        });
    }
    let eig = a.clone().symmetric_eigen();
    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    for v in eig.eigenvalues.iter() {
        min_eig = min_eig.min(*v);
        max_eig = max_eig.max(*v);
    }
    let pass = min_eig >= -1e-9 && (!upper_strict || max_eig <= 1.0 - 1e-9);
    Ok(PsdReport {
        min_eig,
        max_eig,
        pass,
    })
}

/// Hermitian part `(A + A^H) / 2`.
pub fn hermitianize(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// `‖Q^{-1/2} z‖²` for Hermitian positive definite `Q`, through an
/// eigendecomposition of `Q`.
pub fn inv_sqrt_quadratic(q: &CMat, z: &CVec) -> Result<f64> {
    let eig = q.clone().symmetric_eigen();
    let y = eig.eigenvectors.adjoint() * z;
    let mut acc = 0.0;
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda <= 0.0 {
            return Err(Error::SingularMatrix {
                context: "inv_sqrt_quadratic needs positive definite Q",
            });
        }
        acc += y[i].norm_sqr() / lambda;
    }
    Ok(acc)
}
