//! Exact finite-dimensional spin algebra for a spin-S qudit.
//!
//! Matrices are indexed by level `l = 0..=2S` with `m = l - S`, so index 0 is
//! the lowest Zeeman level `|-S>` and the diagonal of `sz` ascends from `-S`
//! to `S`. Every module in the crate shares this convention.

use crate::linalg::{
    self, hermitian_eigen, max_abs_diff, psd_sqrt, CMatrix, CVector, LinalgError,
};
use nalgebra::DVector;
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SpinError {
    #[error("two_s must be at least 1 (got {0})")]
    InvalidSpin(u32),
    #[error("spin dimension {0} exceeds the supported maximum of 41 levels")]
    SpinTooLarge(u32),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("density matrix is not Hermitian (defect {0:e})")]
    NotHermitian(f64),
    #[error("density matrix trace deviates from 1 by {0:e}")]
    BadTrace(f64),
    #[error("density matrix has eigenvalue {0:e} below tolerance; not positive semidefinite")]
    NotPositive(f64),
    #[error("state norm deviates from 1 by {0:e}")]
    BadNorm(f64),
    #[error("decoherence slice diagonal entry {0} deviates from 1 by {1:e}")]
    BadDecoherenceDiagonal(usize, f64),
    #[error("decoherence slice is not Hermitian-compatible (defect {0:e})")]
    BadDecoherenceSymmetry(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Spin quantum number stored as `2S` so half-integer spins stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpinQuantum {
    two_s: u32,
}

impl SpinQuantum {
    pub fn new(two_s: u32) -> Result<Self, SpinError> {
        if two_s < 1 {
            return Err(SpinError::InvalidSpin(two_s));
        }
        if two_s > 40 {
            return Err(SpinError::SpinTooLarge(two_s));
        }
        Ok(Self { two_s })
    }

    pub fn two_s(&self) -> u32 {
        self.two_s
    }

    pub fn s(&self) -> f64 {
        self.two_s as f64 / 2.0
    }

    /// Hilbert-space dimension 2S+1.
    pub fn dim(&self) -> usize {
        self.two_s as usize + 1
    }

    pub fn is_half_integer(&self) -> bool {
        self.two_s % 2 == 1
    }

    /// Magnetic quantum number of level index `l`.
    pub fn m_of_level(&self, l: usize) -> f64 {
        l as f64 - self.s()
    }

    /// Level index of the spin-flipped state `|-m>`.
    pub fn flipped_level(&self, l: usize) -> usize {
        self.two_s as usize - l
    }

    /// Levels in ascending m order.
    pub fn levels(&self) -> impl Iterator<Item = usize> {
        0..self.dim()
    }
}

/// The dimensionless spin matrices for one value of S.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: CMatrix,
    pub sy: CMatrix,
    pub sz: CMatrix,
    pub s_plus: CMatrix,
    pub s_minus: CMatrix,
}

/// Builds `sx, sy, sz, s_plus, s_minus` from the ladder matrix elements
/// `<m+1|S+|m> = sqrt(S(S+1) - m(m+1))`.
pub fn build_spin_operators(s: SpinQuantum) -> SpinOperators {
    let dim = s.dim();
    let sv = s.s();
    let mut sz = CMatrix::zeros(dim, dim);
    let mut s_plus = CMatrix::zeros(dim, dim);
    for l in 0..dim {
        let m = s.m_of_level(l);
        sz[(l, l)] = Complex64::new(m, 0.0);
        if l + 1 < dim {
            let elem = (sv * (sv + 1.0) - m * (m + 1.0)).sqrt();
            s_plus[(l + 1, l)] = Complex64::new(elem, 0.0);
        }
    }
    let s_minus = s_plus.adjoint();
    let sx = (&s_plus + &s_minus).scale(0.5);
    let sy = (&s_plus - &s_minus) * Complex64::new(0.0, -0.5);
    SpinOperators {
        sx,
        sy,
        sz,
        s_plus,
        s_minus,
    }
}

/// The generalized echo `exp(-i pi Sx)`, mapping `|m>` to `|-m>` up to phases.
pub fn echo_unitary(s: SpinQuantum) -> CMatrix {
    let ops = build_spin_operators(s);
    linalg::unitary_exp(&ops.sx, PI, HERMITICITY_TOL).expect("sx is Hermitian by construction")
}

/// A validated qudit density matrix.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    rho: CMatrix,
}

impl DensityMatrix {
    pub fn new(rho: CMatrix) -> Result<Self, SpinError> {
        if rho.nrows() != rho.ncols() {
            return Err(SpinError::DimensionMismatch(rho.nrows(), rho.ncols()));
        }
        let defect = linalg::hermiticity_defect(&rho);
        if defect > HERMITICITY_TOL {
            return Err(SpinError::NotHermitian(defect));
        }
        let trace_dev = (rho.trace().re - 1.0).abs().max(rho.trace().im.abs());
        if trace_dev > TRACE_TOL {
            return Err(SpinError::BadTrace(trace_dev));
        }
        let eig = hermitian_eigen(&rho, HERMITICITY_TOL)?;
        if let Some(&min) = eig
            .values
            .iter()
            .min_by(|a, b| a.partial_cmp(b).expect("non-NaN"))
        {
            if min < -linalg::CLAMP_TOL {
                return Err(SpinError::NotPositive(min));
            }
        }
        Ok(Self { rho })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }
}

/// A normalized pure state.
#[derive(Debug, Clone)]
pub struct PureState {
    amplitudes: CVector,
}

impl PureState {
    pub fn new(amplitudes: CVector) -> Result<Self, SpinError> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(SpinError::BadNorm((norm - 1.0).abs()));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes the input vector.
    pub fn from_unnormalized(v: CVector) -> Result<Self, SpinError> {
        let norm = v.norm();
        if norm == 0.0 {
            return Err(SpinError::BadNorm(1.0));
        }
        Ok(Self {
            amplitudes: v / Complex64::new(norm, 0.0),
        })
    }

    /// Basis state `|m>` given by level index.
    pub fn basis(dim: usize, level: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v[level] = Complex64::new(1.0, 0.0);
        Self { amplitudes: v }
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn projector(&self) -> DensityMatrix {
        let rho = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix::new(rho).expect("projector of a normalized state is a density matrix")
    }
}

/// Uhlmann fidelity `tr sqrt(sqrt(a) b sqrt(a))`, in `[0, 1]`.
pub fn uhlmann_fidelity(rho_a: &DensityMatrix, rho_b: &DensityMatrix) -> Result<f64, SpinError> {
    if rho_a.dim() != rho_b.dim() {
        return Err(SpinError::DimensionMismatch(rho_a.dim(), rho_b.dim()));
    }
    let sa = psd_sqrt(rho_a.matrix(), HERMITICITY_TOL)?;
    let inner = &sa * rho_b.matrix() * &sa;
    let eig = hermitian_eigen(&inner, 1e-9)?;
    let f: f64 = eig.values.iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok(f.min(1.0))
}

/// Squared fidelity of `rho` against a pure reference state.
pub fn squared_fidelity_pure(rho: &DensityMatrix, psi: &PureState) -> Result<f64, SpinError> {
    if rho.dim() != psi.dim() {
        return Err(SpinError::DimensionMismatch(rho.dim(), psi.dim()));
    }
    let v = psi.amplitudes();
    let f2 = (v.adjoint() * rho.matrix() * v)[(0, 0)].re;
    Ok(f2.clamp(0.0, 1.0))
}

/// Entrywise coherence decay: `rho_out[n][m] = l_slice[n][m] * rho0[n][m]`.
///
/// The slice must have unit diagonal and `L[n][m] = conj(L[m][n])`. A non-PSD
/// result is reported as an error rather than repaired; it signals an
/// inconsistent decoherence matrix upstream.
pub fn dephase_elementwise(
    l_slice: &CMatrix,
    rho0: &DensityMatrix,
) -> Result<DensityMatrix, SpinError> {
    let dim = rho0.dim();
    if l_slice.nrows() != dim || l_slice.ncols() != dim {
        return Err(SpinError::DimensionMismatch(l_slice.nrows(), dim));
    }
    for n in 0..dim {
        let dev = (l_slice[(n, n)] - Complex64::new(1.0, 0.0)).norm();
        if dev > 1e-9 {
            return Err(SpinError::BadDecoherenceDiagonal(n, dev));
        }
    }
    let sym = linalg::hermiticity_defect(l_slice);
    if sym > 1e-9 {
        return Err(SpinError::BadDecoherenceSymmetry(sym));
    }
    let out = CMatrix::from_fn(dim, dim, |n, m| l_slice[(n, m)] * rho0.matrix()[(n, m)]);
    DensityMatrix::new(out)
}

/// `u * rho * u^dag` as a validated density matrix.
pub fn conjugate(rho: &DensityMatrix, u: &CMatrix) -> Result<DensityMatrix, SpinError> {
    DensityMatrix::new(u * rho.matrix() * u.adjoint())
}

/// Sanity check used in tests: commutator and ladder identities.
pub fn operator_defect(ops: &SpinOperators) -> f64 {
    let i = Complex64::i();
    let comm_xy = &ops.sx * &ops.sy - &ops.sy * &ops.sx;
    let comm_yz = &ops.sy * &ops.sz - &ops.sz * &ops.sy;
    let comm_zx = &ops.sz * &ops.sx - &ops.sx * &ops.sz;
    let d1 = max_abs_diff(&comm_xy, &(&ops.sz * i));
    let d2 = max_abs_diff(&comm_yz, &(&ops.sx * i));
    let d3 = max_abs_diff(&comm_zx, &(&ops.sy * i));
    let d4 = max_abs_diff(&ops.s_plus, &ops.s_minus.adjoint());
    d1.max(d2).max(d3).max(d4)
}

/// Helper for tests and the QEC layer: diagonal operator from its entries.
pub fn diagonal_operator(entries: &CVector) -> CMatrix {
    let n = entries.len();
    let mut m = CMatrix::zeros(n, n);
    for l in 0..n {
        m[(l, l)] = entries[l];
    }
    m
}

/// Entries `m^k` on the diagonal, used by the spin-binomial error set.
pub fn sz_power_diagonal(s: SpinQuantum, k: u32) -> CVector {
    DVector::from_iterator(
        s.dim(),
        s.levels()
            .map(|l| Complex64::new(s.m_of_level(l).powi(k as i32), 0.0)),
    )
}
