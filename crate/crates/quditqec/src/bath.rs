//! Nuclear spin bath model: random geometries, point-dipole tensors in the
//! `{z, +, -}` spherical basis, and the effective-Hamiltonian coefficient
//! tables obtained from the Schrieffer-Wolff reduction.
//!
//! Internal units: angular frequencies in rad/us, distances in angstrom,
//! magnetic fields in tesla. Gyromagnetic ratios are stored in rad/(s T) and
//! converted where rad/us quantities are produced.

use crate::linalg::CMatrix;
use crate::spin::SpinQuantum;
use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::fmt::Write as _;
use thiserror::Error;

const S_TO_US: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BathError {
    #[error("invalid bath parameters: {0}")]
    InvalidParameters(String),
    #[error("failed to place {placed} of {requested} spins after {draws} candidate draws")]
    PackingFailure {
        placed: usize,
        requested: usize,
        draws: usize,
    },
    #[error("nuclei {0} and {1} are closer than 1e-6 angstrom")]
    CoincidentPositions(usize, usize),
    #[error("Zeeman energy must be nonzero")]
    ZeroZeeman,
    #[error("cluster size {0} exceeds the supported maximum of 4")]
    ClusterTooLarge(usize),
    #[error("cluster contains repeated or out-of-range nucleus indices")]
    InvalidCluster,
    #[error("level index {0} out of range for dim {1}")]
    InvalidLevel(usize, usize),
    #[error("malformed geometry file: {0}")]
    MalformedGeometry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// CODATA-derived constants. The paper never lists numerical values, so these
/// are pinned here once and shared by every downstream module.
#[derive(Debug, Clone, Copy)]
pub struct PhysicalConstants {
    /// Electron gyromagnetic ratio g_z * mu_B / hbar, rad/(s T).
    pub gamma_e: f64,
    /// Nuclear (proton) gyromagnetic ratio, rad/(s T).
    pub gamma_n: f64,
    /// mu_0 hbar / 4 pi rescaled so that `prefactor * gamma_a * gamma_b / r^3`
    /// is in rad/us for r in angstrom and gammas in rad/(s T).
    pub dipolar_prefactor: f64,
    /// Longitudinal g-factor (dimensionless).
    pub g_z: f64,
    /// mu_B / hbar, rad/(s T).
    pub bohr_magneton_over_hbar: f64,
}

pub const GAMMA_PROTON: f64 = 2.675221874e8;
pub const MU_B_OVER_HBAR: f64 = 9.274_010_078_3e-24 / 1.054_571_817e-34;
/// mu_0/(4 pi) * hbar * (1e-10 m/angstrom)^-3 * 1e-6 s/us.
pub const DIPOLAR_PREFACTOR: f64 = 1e-7 * 1.054_571_817e-34 * 1e30 * S_TO_US;
/// k_B / hbar in rad/us per kelvin, used for the default zero-field splitting.
pub const KB_OVER_HBAR_PER_K: f64 = 1.380_649e-23 / 1.054_571_817e-34 * S_TO_US;

impl PhysicalConstants {
    pub fn with_g_factor(g_z: f64) -> Self {
        Self {
            gamma_e: g_z * MU_B_OVER_HBAR,
            gamma_n: GAMMA_PROTON,
            dipolar_prefactor: DIPOLAR_PREFACTOR,
            g_z,
            bohr_magneton_over_hbar: MU_B_OVER_HBAR,
        }
    }

    /// Electron Zeeman angular frequency at field `b_z`, rad/us.
    pub fn omega_electron(&self, b_z: f64) -> f64 {
        self.gamma_e * b_z * S_TO_US
    }

    /// Nuclear Larmor angular frequency at field `b_z`, rad/us.
    pub fn omega_nuclear(&self, b_z: f64) -> f64 {
        self.gamma_n * b_z * S_TO_US
    }

    /// Electron-nucleus dipolar coupling scale at distance `r` (angstrom), rad/us.
    pub fn hyperfine_scale(&self, r: f64) -> f64 {
        self.dipolar_prefactor * self.gamma_e * self.gamma_n / (r * r * r)
    }

    /// Nucleus-nucleus dipolar coupling scale at distance `r` (angstrom), rad/us.
    pub fn nuclear_scale(&self, r: f64) -> f64 {
        self.dipolar_prefactor * self.gamma_n * self.gamma_n / (r * r * r)
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::with_g_factor(2.0)
    }
}

/// Static qudit Hamiltonian parameters, `H_S = D Sz^2 + Omega Sz`.
#[derive(Debug, Clone, Copy)]
pub struct QuditHamiltonianParams {
    /// Axial zero-field splitting, rad/us.
    pub d_zfs: f64,
    /// Zeeman energy g_z mu_B B_z / hbar, rad/us.
    pub omega: f64,
    /// Static field along z, tesla.
    pub b_z: f64,
}

impl QuditHamiltonianParams {
    pub fn new(d_zfs: f64, b_z: f64, constants: &PhysicalConstants) -> Result<Self, BathError> {
        if b_z <= 0.0 {
            return Err(BathError::InvalidParameters("B_z must be positive".into()));
        }
        Ok(Self {
            d_zfs,
            omega: constants.omega_electron(b_z),
            b_z,
        })
    }

    /// Paper defaults: B_z = 1 T and D/k_B of about one kelvin.
    pub fn paper_defaults(constants: &PhysicalConstants) -> Self {
        Self::new(KB_OVER_HBAR_PER_K, 1.0, constants).expect("defaults are valid")
    }

    /// Relative consistency check between omega, b_z and the constants.
    pub fn is_consistent(&self, constants: &PhysicalConstants) -> bool {
        let expect = constants.omega_electron(self.b_z);
        (self.omega - expect).abs() <= 1e-9 * expect.abs()
    }
}

/// One random spatial configuration of the nuclear bath. Positions are in
/// angstrom relative to the central spin at the origin.
#[derive(Debug, Clone)]
pub struct BathGeometry {
    pub positions: Vec<Vector3<f64>>,
    pub seed: u64,
    pub radius: f64,
    pub min_distance: f64,
}

const MAX_PACKING_DRAWS: usize = 1_000_000;

/// Rejection-samples `n_spins` positions uniformly in the ball of `radius`,
/// keeping every point at least `min_distance` from the origin and from each
/// other. Deterministic for a fixed seed (ChaCha12 stream).
pub fn sample_bath_geometry(
    seed: u64,
    n_spins: usize,
    radius: f64,
    min_distance: f64,
) -> Result<BathGeometry, BathError> {
    if n_spins < 1 {
        return Err(BathError::InvalidParameters(
            "n_spins must be at least 1".into(),
        ));
    }
    if !(radius > min_distance && min_distance > 0.0) {
        return Err(BathError::InvalidParameters(
            "need radius > min_distance > 0".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n_spins);
    let mut draws = 0usize;
    while positions.len() < n_spins {
        if draws >= MAX_PACKING_DRAWS {
            return Err(BathError::PackingFailure {
                placed: positions.len(),
                requested: n_spins,
                draws,
            });
        }
        draws += 1;
        let candidate = Vector3::new(
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
        );
        let r = candidate.norm();
        if r > radius || r < min_distance {
            continue;
        }
        if positions
            .iter()
            .all(|p| (p - candidate).norm() >= min_distance)
        {
            positions.push(candidate);
        }
    }
    Ok(BathGeometry {
        positions,
        seed,
        radius,
        min_distance,
    })
}

impl BathGeometry {
    pub fn n_spins(&self) -> usize {
        self.positions.len()
    }

    /// Structured-text serialization; round-trips bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# bath-geometry v1").unwrap();
        writeln!(out, "# seed {}", self.seed).unwrap();
        writeln!(out, "# n_spins {}", self.n_spins()).unwrap();
        writeln!(out, "# radius_angstrom {:.16e}", self.radius).unwrap();
        writeln!(out, "# min_distance_angstrom {:.16e}", self.min_distance).unwrap();
        writeln!(out, "# units angstrom").unwrap();
        for p in &self.positions {
            writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BathError> {
        let mut seed = None;
        let mut n_spins: Option<usize> = None;
        let mut radius = None;
        let mut min_distance = None;
        let mut positions = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                match parts.next() {
                    Some("seed") => seed = parts.next().and_then(|v| v.parse().ok()),
                    Some("n_spins") => n_spins = parts.next().and_then(|v| v.parse().ok()),
                    Some("radius_angstrom") => {
                        radius = parts.next().and_then(|v| v.parse().ok())
                    }
                    Some("min_distance_angstrom") => {
                        min_distance = parts.next().and_then(|v| v.parse().ok())
                    }
                    _ => {}
                }
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| BathError::MalformedGeometry(e.to_string()))?;
            if vals.len() != 3 {
                return Err(BathError::MalformedGeometry(format!(
                    "expected 3 coordinates per line, got {}",
                    vals.len()
                )));
            }
            positions.push(Vector3::new(vals[0], vals[1], vals[2]));
        }
        let seed = seed.ok_or_else(|| BathError::MalformedGeometry("missing seed".into()))?;
        let radius =
            radius.ok_or_else(|| BathError::MalformedGeometry("missing radius".into()))?;
        let min_distance = min_distance
            .ok_or_else(|| BathError::MalformedGeometry("missing min_distance".into()))?;
        if let Some(n) = n_spins {
            if n != positions.len() {
                return Err(BathError::MalformedGeometry(format!(
                    "header says {} spins, found {}",
                    n,
                    positions.len()
                )));
            }
        }
        Ok(Self {
            positions,
            seed,
            radius,
            min_distance,
        })
    }
}

/// Spherical-basis components of one electron-nucleus dipolar tensor.
///
/// Conversion convention, fixed here once for the whole crate: with
/// `K = prefactor * gamma_a * gamma_b / r^3`, `cos(theta) = z/r` and
/// `sin(theta) e^{i phi} = (x + i y)/r`,
///
/// ```text
///   zz = K (1 - 3 cos^2 theta)
///   +- = -zz / 4                      (real, equals -+)
///   +z = -(3/2) K sin(theta) cos(theta) e^{-i phi}
///   ++ = -(3/4) K sin^2(theta) e^{-2 i phi}
/// ```
///
/// with `-z = conj(+z)` and `-- = conj(++)`. The convention is anchored by
/// the full-Hamiltonian oracle test rather than by an external reference.
#[derive(Debug, Clone, Copy)]
pub struct DipolarComponents {
    pub zz: f64,
    pub pz: Complex64,
    pub pp: Complex64,
    pub pm: f64,
}

impl DipolarComponents {
    pub fn mz(&self) -> Complex64 {
        self.pz.conj()
    }
    pub fn mm(&self) -> Complex64 {
        self.pp.conj()
    }
    pub fn mp(&self) -> f64 {
        self.pm
    }

    fn from_displacement(r: &Vector3<f64>, k: f64) -> Self {
        let rn = r.norm();
        let cos_t = r.z / rn;
        // sin(theta) e^{-i phi} = (x - i y)/r
        let sin_em = Complex64::new(r.x / rn, -r.y / rn);
        let zz = k * (1.0 - 3.0 * cos_t * cos_t);
        Self {
            zz,
            pm: -zz / 4.0,
            pz: -1.5 * k * cos_t * sin_em,
            pp: -0.75 * k * sin_em * sin_em,
        }
    }
}

/// Derived coupling tables for one bath geometry.
#[derive(Debug, Clone)]
pub struct DipolarTensors {
    /// Electron-nucleus tensors, one per nucleus.
    pub d: Vec<DipolarComponents>,
    /// Nuclear-nuclear zz components, symmetric with zero diagonal (rad/us).
    pub e_zz: DMatrix<f64>,
    /// Nuclear-nuclear +- components, symmetric with zero diagonal (rad/us).
    pub e_pm: DMatrix<f64>,
    /// Per-nucleus Larmor frequencies (rad/us).
    pub omega_n: Vec<f64>,
}

pub fn compute_dipolar_tensors(
    geometry: &BathGeometry,
    params: &QuditHamiltonianParams,
    constants: &PhysicalConstants,
) -> Result<DipolarTensors, BathError> {
    let n = geometry.n_spins();
    let mut d = Vec::with_capacity(n);
    for (i, p) in geometry.positions.iter().enumerate() {
        let r = p.norm();
        if r < 1e-6 {
            return Err(BathError::CoincidentPositions(i, i));
        }
        d.push(DipolarComponents::from_displacement(
            p,
            constants.hyperfine_scale(r),
        ));
    }
    let mut e_zz = DMatrix::zeros(n, n);
    let mut e_pm = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let rv = geometry.positions[j] - geometry.positions[i];
            let r = rv.norm();
            if r < 1e-6 {
                return Err(BathError::CoincidentPositions(i, j));
            }
            let comps = DipolarComponents::from_displacement(&rv, constants.nuclear_scale(r));
            e_zz[(i, j)] = comps.zz;
            e_zz[(j, i)] = comps.zz;
            e_pm[(i, j)] = comps.pm;
            e_pm[(j, i)] = comps.pm;
        }
    }
    let omega = constants.omega_nuclear(params.b_z);
    Ok(DipolarTensors {
        d,
        e_zz,
        e_pm,
        omega_n: vec![omega; n],
    })
}

/// Full Cartesian point-dipole tensor `K (delta_ij - 3 rhat_i rhat_j)`, used
/// by the untransformed-Hamiltonian oracle as an independent route that never
/// touches the spherical-basis conversion.
pub fn cartesian_dipole_tensor(r: &Vector3<f64>, k: f64) -> Matrix3<f64> {
    let rhat = r / r.norm();
    Matrix3::from_fn(|i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        k * (delta - 3.0 * rhat[i] * rhat[j])
    })
}

/// Coefficient tables of the effective Hamiltonian
/// `H = H^(0) + Sz H^(1) + (S^2 - Sz^2) H^(2)` with
/// `H^(k) = sum_n a_n Iz + b_n Iz^2 + sum_{n != m} c_nm I+ I- + d_nm Iz Iz`.
#[derive(Debug, Clone)]
pub struct EffectiveCoefficients {
    pub a: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
    pub c: [CMatrix; 3],
    pub d: [CMatrix; 3],
    /// Renormalized qudit Zeeman energy, rad/us.
    pub omega_tilde: f64,
    /// Set when Omega is not at least 100x the largest dipolar component.
    pub weak_coupling_warning: bool,
}

impl EffectiveCoefficients {
    pub fn n_spins(&self) -> usize {
        self.a[0].len()
    }

    /// Zeroed table with the same shape, useful for tests and reductions.
    pub fn zeros(n: usize, omega: f64) -> Self {
        Self {
            a: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            b: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            c: std::array::from_fn(|_| CMatrix::zeros(n, n)),
            d: std::array::from_fn(|_| CMatrix::zeros(n, n)),
            omega_tilde: omega,
            weak_coupling_warning: false,
        }
    }

    /// Copy with every table except `a[0]` and `a[1]` zeroed: the pure
    /// Overhauser limit in which the echo refocuses exactly.
    pub fn diagonal_hyperfine_only(&self) -> Self {
        let n = self.n_spins();
        let mut out = Self::zeros(n, self.omega_tilde);
        out.a[0] = self.a[0].clone();
        out.a[1] = self.a[1].clone();
        out
    }
}

pub fn schrieffer_wolff_coefficients(
    tensors: &DipolarTensors,
    params: &QuditHamiltonianParams,
) -> Result<EffectiveCoefficients, BathError> {
    let omega = params.omega;
    if omega == 0.0 {
        return Err(BathError::ZeroZeeman);
    }
    let n = tensors.d.len();
    let mut coeffs = EffectiveCoefficients::zeros(n, omega);

    let mut max_component = 0.0f64;
    let mut renorm_sum = 0.0;
    for (k, dn) in tensors.d.iter().enumerate() {
        coeffs.a[0][k] = tensors.omega_n[k];
        coeffs.a[1][k] = dn.zz;
        coeffs.b[1][k] =
            (2.0 / omega) * (dn.pz.norm_sqr() - dn.pp.norm_sqr() - dn.pm * dn.pm);
        coeffs.a[2][k] = (2.0 / omega) * (dn.pp.norm_sqr() - dn.pm * dn.pm);
        renorm_sum += dn.pp.norm_sqr() + dn.pm * dn.pm;
        max_component = max_component
            .max(dn.zz.abs())
            .max(dn.pz.norm())
            .max(dn.pp.norm())
            .max(dn.pm.abs());
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            coeffs.c[0][(i, j)] = Complex64::new(tensors.e_pm[(i, j)], 0.0);
            coeffs.d[0][(i, j)] = Complex64::new(tensors.e_zz[(i, j)] / 2.0, 0.0);
            let di = &tensors.d[i];
            let dj = &tensors.d[j];
            coeffs.c[1][(i, j)] =
                (2.0 / omega) * (di.pp * dj.mm() + Complex64::from(di.mp()) * dj.pm);
            coeffs.d[1][(i, j)] = (2.0 / omega) * di.pz * dj.mz();
        }
    }
    // Proton bath: I = 1/2, so 2 I (I+1) = 3/2.
    coeffs.omega_tilde = omega + 1.5 / omega * renorm_sum;
    coeffs.weak_coupling_warning = omega < 100.0 * max_component;
    Ok(coeffs)
}

/// Level weights of the three effective-Hamiltonian orders when conditioned
/// on qudit level `|m>`: `[1, m, S(S+1) - m^2]`.
pub fn level_weights(s: SpinQuantum, level: usize) -> [f64; 3] {
    let m = s.m_of_level(level);
    let sv = s.s();
    [1.0, m, sv * (sv + 1.0) - m * m]
}

/// Bath Hamiltonian conditioned on qudit level `|m>`, restricted to a cluster
/// of at most 4 spin-1/2 nuclei. Basis: bit `i` of the index set means
/// nucleus `cluster[i]` is in `m_I = +1/2`.
pub fn conditioned_bath_hamiltonian(
    coeffs: &EffectiveCoefficients,
    s: SpinQuantum,
    level: usize,
    cluster: &[usize],
) -> Result<CMatrix, BathError> {
    let c = cluster.len();
    if c > 4 {
        return Err(BathError::ClusterTooLarge(c));
    }
    if level >= s.dim() {
        return Err(BathError::InvalidLevel(level, s.dim()));
    }
    let n = coeffs.n_spins();
    for (i, &a) in cluster.iter().enumerate() {
        if a >= n || cluster[..i].contains(&a) {
            return Err(BathError::InvalidCluster);
        }
    }
    Ok(conditioned_cluster_hamiltonian_unchecked(
        coeffs,
        &level_weights(s, level),
        cluster,
    ))
}

/// Same as [`conditioned_bath_hamiltonian`] but without the desk-scale cluster
/// guard; the exact-bath oracle uses it for the full register.
pub(crate) fn conditioned_cluster_hamiltonian_unchecked(
    coeffs: &EffectiveCoefficients,
    weights: &[f64; 3],
    cluster: &[usize],
) -> CMatrix {
    let c = cluster.len();
    let dim = 1usize << c;
    let mut h = CMatrix::zeros(dim, dim);

    // Per-site and per-pair weighted couplings.
    let site_a: Vec<f64> = cluster
        .iter()
        .map(|&k| {
            weights[0] * coeffs.a[0][k] + weights[1] * coeffs.a[1][k] + weights[2] * coeffs.a[2][k]
        })
        .collect();
    let site_b: Vec<f64> = cluster
        .iter()
        .map(|&k| {
            weights[0] * coeffs.b[0][k] + weights[1] * coeffs.b[1][k] + weights[2] * coeffs.b[2][k]
        })
        .collect();
    let pair_c = |i: usize, j: usize| -> Complex64 {
        let (ni, nj) = (cluster[i], cluster[j]);
        weights[0] * coeffs.c[0][(ni, nj)]
            + weights[1] * coeffs.c[1][(ni, nj)]
            + weights[2] * coeffs.c[2][(ni, nj)]
    };
    let pair_d = |i: usize, j: usize| -> Complex64 {
        let (ni, nj) = (cluster[i], cluster[j]);
        weights[0] * coeffs.d[0][(ni, nj)]
            + weights[1] * coeffs.d[1][(ni, nj)]
            + weights[2] * coeffs.d[2][(ni, nj)]
    };

    let iz = |state: usize, bit: usize| -> f64 {
        if state >> bit & 1 == 1 {
            0.5
        } else {
            -0.5
        }
    };

    for state in 0..dim {
        let mut diag = Complex64::new(0.0, 0.0);
        for i in 0..c {
            let z = iz(state, i);
            diag += Complex64::from(site_a[i] * z + site_b[i] * z * z);
            for j in 0..c {
                if i == j {
                    continue;
                }
                // d_{ij} Iz_i Iz_j over ordered pairs; the Hermitian pair sum
                // keeps only the real part automatically.
                diag += pair_d(i, j) * (z * iz(state, j));
                // c_{ij} I+_i I-_j: flip i up, j down.
                if state >> i & 1 == 0 && state >> j & 1 == 1 {
                    let target = state ^ (1 << i) ^ (1 << j);
                    h[(target, state)] += pair_c(i, j);
                }
            }
        }
        h[(state, state)] += diag;
    }
    h
}
