//! Dense Hermitian linear algebra helpers shared across the crate.
//!
//! All matrix functions (exponentials, square roots) go through a Hermitian
//! eigendecomposition. Eigenvalues in `[-CLAMP_TOL, 0]` are treated as
//! numerical noise and clamped to zero; anything below that is an error the
//! caller must surface.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Negative-eigenvalue tolerance for positive-semidefinite checks.
pub const CLAMP_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian: max |A - A^dag| = {0:e}")]
    NotHermitian(f64),
    #[error("matrix has eigenvalue {0:e} below the PSD tolerance")]
    NotPositiveSemidefinite(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Eigendecomposition of a Hermitian matrix: `a = vectors * diag(values) * vectors^dag`.
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    let mut max = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            if d > max {
                max = d;
            }
        }
    }
    max
}

/// Eigendecomposition of a Hermitian matrix, rejecting inputs with a
/// hermiticity defect above `tol`.
pub fn hermitian_eigen(a: &CMatrix, tol: f64) -> Result<HermitianEigen, LinalgError> {
    let defect = hermiticity_defect(a);
    if defect > tol {
        return Err(LinalgError::NotHermitian(defect));
    }
    // Symmetrize first so roundoff in the input cannot leak complex eigenvalues.
    let sym = (a + a.adjoint()).scale(0.5);
    let se = sym.symmetric_eigen();
    Ok(HermitianEigen {
        values: se.eigenvalues,
        vectors: se.eigenvectors,
    })
}

impl HermitianEigen {
    /// Applies a scalar function to the eigenvalues and reassembles the matrix.
    pub fn map(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let d = DVector::from_iterator(self.values.len(), self.values.iter().map(|&x| f(x)));
        let scaled = scale_columns(&self.vectors, &d);
        &scaled * self.vectors.adjoint()
    }
}

/// Columns of `m` scaled by the entries of `d` (i.e. `m * diag(d)`).
pub fn scale_columns(m: &CMatrix, d: &CVector) -> CMatrix {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// `exp(-i a t)` for Hermitian `a`.
pub fn unitary_exp(a: &CMatrix, t: f64, tol: f64) -> Result<CMatrix, LinalgError> {
    let eig = hermitian_eigen(a, tol)?;
    Ok(eig.map(|x| (-Complex64::i() * x * t).exp()))
}

/// Principal square root of a PSD Hermitian matrix.
pub fn psd_sqrt(a: &CMatrix, tol: f64) -> Result<CMatrix, LinalgError> {
    let eig = hermitian_eigen(a, tol)?;
    if let Some(&min) = eig
        .values
        .iter()
        .min_by(|a, b| a.partial_cmp(b).expect("non-NaN eigenvalues"))
    {
        if min < -CLAMP_TOL {
            return Err(LinalgError::NotPositiveSemidefinite(min));
        }
    }
    Ok(eig.map(|x| Complex64::new(x.max(0.0).sqrt(), 0.0)))
}

/// Frobenius (Hilbert-Schmidt) norm.
pub fn hs_norm(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `tr(a b^dag)` without forming the product.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

/// Max entrywise deviation between two same-size matrices.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Deviation of `u` from unitarity, max |u^dag u - I|.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let p = u.adjoint() * u;
    let mut max = 0.0f64;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = (p[(i, j)] - Complex64::new(target, 0.0)).norm();
            if d > max {
                max = d;
            }
        }
    }
    max
}

/// Max entrywise deviation between unitaries modulo a global phase.
///
/// The phase is fixed from the largest-magnitude entry of `b`.
pub fn diff_mod_phase(a: &CMatrix, b: &CMatrix) -> f64 {
    let mut best = (0usize, 0usize);
    let mut mag = 0.0f64;
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            if b[(i, j)].norm() > mag {
                mag = b[(i, j)].norm();
                best = (i, j);
            }
        }
    }
    if mag == 0.0 {
        return max_abs_diff(a, b);
    }
    let phase = a[best] / b[best];
    let phase = if phase.norm() > 0.0 {
        phase / phase.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    max_abs_diff(a, &(b * phase))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let raw = CMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        (&raw + raw.adjoint()).scale(0.5)
    }

    #[test]
    fn eigen_reconstructs() {
        let a = random_hermitian(6, 7);
        let eig = hermitian_eigen(&a, 1e-12).unwrap();
        let rec = eig.map(|x| Complex64::new(x, 0.0));
        assert!(max_abs_diff(&rec, &a) < 1e-12);
    }

    #[test]
    fn exp_is_unitary() {
        let a = random_hermitian(5, 3);
        let u = unitary_exp(&a, 0.7, 1e-12).unwrap();
        assert!(unitarity_defect(&u) < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = random_hermitian(4, 11);
        let psd = &a * a.adjoint();
        let s = psd_sqrt(&psd, 1e-12).unwrap();
        assert!(max_abs_diff(&(&s * &s), &psd) < 1e-10);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut a = random_hermitian(3, 1);
        a[(0, 1)] += Complex64::new(1e-3, 0.0);
        assert!(hermitian_eigen(&a, 1e-12).is_err());
    }
}
