//! Cluster-correlation expansion of the decoherence matrix L_nm(t) for
//! free-decay and generalized-echo schedules, with brute-force oracles and
//! seeded ensemble averaging.

use crate::bath::{
    compute_dipolar_tensors, conditioned_cluster_hamiltonian_unchecked, level_weights,
    sample_bath_geometry, schrieffer_wolff_coefficients, BathError, BathGeometry,
    EffectiveCoefficients, PhysicalConstants, QuditHamiltonianParams,
};
use crate::linalg::{hs_inner, unitary_exp, CMatrix, LinalgError};
use crate::spin::{build_spin_operators, PureState, SpinError, SpinQuantum};
use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

/// Singleton-magnitude floor below which pair corrections are guarded.
pub const DIVISION_GUARD: f64 = 1e-8;

const EIG_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CceError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("bath of {0} spins exceeds the oracle limit of {1}")]
    BathTooLarge(usize, usize),
    #[error("invalid CCE order {0}, expected 1 or 2")]
    InvalidOrder(u8),
    #[error("time grid must be ascending and start at 0")]
    BadTimeGrid,
    #[error("level index out of range")]
    BadLevel,
    #[error("decoherence matrix invariant violated: {0}")]
    InvariantViolation(String),
    #[error("malformed decoherence file: {0}")]
    MalformedText(String),
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Spin(#[from] SpinError),
}

/// Action of a schedule segment on the qudit level labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelMap {
    Identity,
    /// Spin flip m -> -m, the generalized-echo transformation.
    Flip,
}

impl LevelMap {
    pub fn apply(&self, s: SpinQuantum, level: usize) -> usize {
        match self {
            LevelMap::Identity => level,
            LevelMap::Flip => s.flipped_level(level),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LevelMap::Identity => "identity",
            LevelMap::Flip => "flip",
        }
    }
}

/// Ordered evolution segments (fraction of total time, level map). The first
/// segment acts first in time.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionSchedule {
    segments: Vec<(f64, LevelMap)>,
}

impl EvolutionSchedule {
    pub fn new(segments: Vec<(f64, LevelMap)>) -> Result<Self, CceError> {
        if segments.is_empty() {
            return Err(CceError::InvalidSchedule("no segments".into()));
        }
        if segments.iter().any(|(f, _)| *f <= 0.0) {
            return Err(CceError::InvalidSchedule(
                "fractions must be positive".into(),
            ));
        }
        let total: f64 = segments.iter().map(|(f, _)| f).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CceError::InvalidSchedule(format!(
                "fractions sum to {total}, expected 1"
            )));
        }
        Ok(Self { segments })
    }

    pub fn free_decay() -> Self {
        Self {
            segments: vec![(1.0, LevelMap::Identity)],
        }
    }

    /// Flip at t/2: static conditioned phases accumulated in the first half
    /// are undone in the second.
    pub fn hahn_echo() -> Self {
        Self {
            segments: vec![(0.5, LevelMap::Identity), (0.5, LevelMap::Flip)],
        }
    }

    pub fn segments(&self) -> &[(f64, LevelMap)] {
        &self.segments
    }

    pub fn is_free(&self) -> bool {
        self.segments
            .iter()
            .all(|(_, m)| *m == LevelMap::Identity)
    }

    pub fn encode(&self) -> String {
        self.segments
            .iter()
            .map(|(f, m)| format!("{:.16e}:{}", f, m.name()))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn decode(text: &str) -> Result<Self, CceError> {
        let mut segments = Vec::new();
        for part in text.split(',') {
            let (f, m) = part
                .split_once(':')
                .ok_or_else(|| CceError::InvalidSchedule(format!("bad segment {part}")))?;
            let frac: f64 = f
                .parse()
                .map_err(|_| CceError::InvalidSchedule(format!("bad fraction {f}")))?;
            let map = match m {
                "identity" => LevelMap::Identity,
                "flip" => LevelMap::Flip,
                other => {
                    return Err(CceError::InvalidSchedule(format!("unknown map {other}")))
                }
            };
            segments.push((frac, map));
        }
        Self::new(segments)
    }
}

/// Closed-form CCE-1 for a pure-a[1] free decay:
/// `L = prod_k cos[(m_n - m_m) a1_k t / 2]`.
pub fn cce1_analytic(
    coeffs: &EffectiveCoefficients,
    s: SpinQuantum,
    n: usize,
    m: usize,
    t: f64,
) -> Complex64 {
    let dm = s.m_of_level(n) - s.m_of_level(m);
    let prod: f64 = coeffs.a[1]
        .iter()
        .map(|&a1| (dm * a1 * t / 2.0).cos())
        .product();
    Complex64::new(prod, 0.0)
}

/// Inhomogeneous-broadening rate: `Gamma = sqrt(sum_k a1_k^2 / 4)` (rad/us).
pub fn gaussian_gamma(coeffs: &EffectiveCoefficients) -> f64 {
    (coeffs.a[1].iter().map(|a| a * a).sum::<f64>() / 4.0).sqrt()
}

/// Short-time Gaussian envelope of the single-transition coherence,
/// `exp(-(n-m)^2 Gamma^2 t^2 / 2)`. The 1/2 makes the envelope the exact
/// second-order Taylor expansion of the cosine product in [`cce1_analytic`].
pub fn gaussian_envelope(gamma: f64, dm: f64, t: f64) -> f64 {
    (-(dm * dm) * gamma * gamma * t * t / 2.0).exp()
}

/// Exact decoherence contribution of one cluster (up to 4 spins) under a
/// schedule: `L_C = tr[W_n rho_C W_m^dag]` with `rho_C = I / 2^|C|` and
/// `W_x` the segment propagators composed right-to-left.
pub fn cluster_decoherence(
    coeffs: &EffectiveCoefficients,
    s: SpinQuantum,
    cluster: &[usize],
    schedule: &EvolutionSchedule,
    n: usize,
    m: usize,
    t: f64,
) -> Result<Complex64, CceError> {
    if n >= s.dim() || m >= s.dim() {
        return Err(CceError::BadLevel);
    }
    let w_n = cluster_propagator(coeffs, s, cluster, schedule, n, t)?;
    let w_m = cluster_propagator(coeffs, s, cluster, schedule, m, t)?;
    let dim = w_n.nrows() as f64;
    Ok(hs_inner(&w_n, &w_m) / dim)
}

fn cluster_propagator(
    coeffs: &EffectiveCoefficients,
    s: SpinQuantum,
    cluster: &[usize],
    schedule: &EvolutionSchedule,
    level: usize,
    t: f64,
) -> Result<CMatrix, CceError> {
    let dim = 1usize << cluster.len();
    let mut w = CMatrix::identity(dim, dim);
    for (frac, map) in schedule.segments() {
        let mapped = map.apply(s, level);
        let h = crate::bath::conditioned_bath_hamiltonian(coeffs, s, mapped, cluster)?;
        let u = unitary_exp(&h, frac * t, EIG_TOL)?;
        w = u * w;
    }
    Ok(w)
}

/// Combines per-cluster values into the CCE product. Returns the combined
/// value and the number of guarded pair corrections.
pub fn cce_combine(
    order: u8,
    singletons: &[Complex64],
    pairs: &[(usize, usize, Complex64)],
) -> Result<(Complex64, usize), CceError> {
    if !(1..=2).contains(&order) {
        return Err(CceError::InvalidOrder(order));
    }
    let mut l: Complex64 = singletons.iter().product();
    let mut guarded = 0usize;
    if order == 2 {
        for &(i, j, l_pair) in pairs {
            let (si, sj) = (singletons[i], singletons[j]);
            if si.norm() < DIVISION_GUARD || sj.norm() < DIVISION_GUARD {
                guarded += 1;
                continue;
            }
            l *= l_pair / (si * sj);
        }
    }
    Ok((l, guarded))
}

/// Decoherence matrix over a time grid.
#[derive(Debug, Clone)]
pub struct DecoherenceMatrix {
    pub s: SpinQuantum,
    pub schedule: EvolutionSchedule,
    pub order: u8,
    pub seed: u64,
    pub coeff_hash: u64,
    pub times: Vec<f64>,
    pub values: Vec<CMatrix>,
    pub guarded: usize,
}

impl DecoherenceMatrix {
    pub fn check_invariants(&self) -> Result<(), CceError> {
        let d = self.s.dim();
        for (ti, v) in self.values.iter().enumerate() {
            for n in 0..d {
                if (v[(n, n)] - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
                    return Err(CceError::InvariantViolation(format!(
                        "L_{n}{n} != 1 at time index {ti}"
                    )));
                }
                for m in 0..d {
                    if v[(n, m)].norm() > 1.0 + 1e-9 {
                        return Err(CceError::InvariantViolation(format!(
                            "|L_{n}{m}| = {} > 1 at time index {ti}",
                            v[(n, m)].norm()
                        )));
                    }
                    if (v[(n, m)] - v[(m, n)].conj()).norm() > 1e-9 {
                        return Err(CceError::InvariantViolation(format!(
                            "L_{n}{m} != conj(L_{m}{n}) at time index {ti}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Squared fidelity of the dephased state vs the initial pure state:
    /// `F^2(t) = sum_nm |psi_n|^2 |psi_m|^2 L_nm(t)`.
    pub fn fidelities(&self, psi: &PureState) -> Result<Vec<f64>, CceError> {
        let d = self.s.dim();
        if psi.dim() != d {
            return Err(CceError::InvariantViolation(format!(
                "state dim {} vs matrix dim {}",
                psi.dim(),
                d
            )));
        }
        let probs: Vec<f64> = psi.amplitudes().iter().map(|a| a.norm_sqr()).collect();
        Ok(self
            .values
            .iter()
            .map(|v| {
                let mut f = Complex64::default();
                for n in 0..d {
                    for m in 0..d {
                        f += probs[n] * probs[m] * v[(n, m)];
                    }
                }
                f.re
            })
            .collect())
    }

    pub fn to_text(&self) -> String {
        let d = self.s.dim();
        let mut out = String::new();
        writeln!(out, "# decoherence-matrix v1").unwrap();
        writeln!(out, "# two_s {}", self.s.two_s()).unwrap();
        writeln!(out, "# schedule {}", self.schedule.encode()).unwrap();
        writeln!(out, "# order {}", self.order).unwrap();
        writeln!(out, "# seed {}", self.seed).unwrap();
        writeln!(out, "# coeff_hash {:016x}", self.coeff_hash).unwrap();
        writeln!(out, "# guarded {}", self.guarded).unwrap();
        writeln!(out, "# n_times {}", self.times.len()).unwrap();
        writeln!(out, "# columns t_us then Re/Im of L_nm row-major").unwrap();
        for (t, v) in self.times.iter().zip(&self.values) {
            write!(out, "{:.16e}", t).unwrap();
            for n in 0..d {
                for m in 0..d {
                    write!(out, " {:.16e} {:.16e}", v[(n, m)].re, v[(n, m)].im).unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CceError> {
        let mut two_s = None;
        let mut schedule = None;
        let mut order = None;
        let mut seed = None;
        let mut coeff_hash = None;
        let mut guarded = None;
        let mut times = Vec::new();
        let mut values = Vec::new();
        let bad = |msg: &str| CceError::MalformedText(msg.to_string());
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("two_s ") {
                    two_s = v.trim().parse::<u32>().ok();
                } else if let Some(v) = rest.strip_prefix("schedule ") {
                    schedule = Some(EvolutionSchedule::decode(v.trim())?);
                } else if let Some(v) = rest.strip_prefix("order ") {
                    order = v.trim().parse::<u8>().ok();
                } else if let Some(v) = rest.strip_prefix("seed ") {
                    seed = v.trim().parse::<u64>().ok();
                } else if let Some(v) = rest.strip_prefix("coeff_hash ") {
                    coeff_hash = u64::from_str_radix(v.trim(), 16).ok();
                } else if let Some(v) = rest.strip_prefix("guarded ") {
                    guarded = v.trim().parse::<usize>().ok();
                }
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CceError::MalformedText(e.to_string()))?;
            let two_s = two_s.ok_or_else(|| bad("data before two_s header"))?;
            let d = two_s as usize + 1;
            if nums.len() != 1 + 2 * d * d {
                return Err(bad("wrong number of columns"));
            }
            times.push(nums[0]);
            values.push(CMatrix::from_fn(d, d, |n, m| {
                let base = 1 + 2 * (n * d + m);
                Complex64::new(nums[base], nums[base + 1])
            }));
        }
        Ok(Self {
            s: SpinQuantum::new(two_s.ok_or_else(|| bad("missing two_s"))?)?,
            schedule: schedule.ok_or_else(|| bad("missing schedule"))?,
            order: order.ok_or_else(|| bad("missing order"))?,
            seed: seed.ok_or_else(|| bad("missing seed"))?,
            coeff_hash: coeff_hash.ok_or_else(|| bad("missing coeff_hash"))?,
            guarded: guarded.ok_or_else(|| bad("missing guarded"))?,
            times,
            values,
        })
    }
}

/// FNV-1a over the raw bits of every coefficient; used to tie persisted
/// decoherence data to the bath realization it came from.
pub fn coefficients_hash(coeffs: &EffectiveCoefficients) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    let mut eat = |x: f64| {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(coeffs.omega_tilde);
    for k in 0..3 {
        for &x in &coeffs.a[k] {
            eat(x);
        }
        for &x in &coeffs.b[k] {
            eat(x);
        }
        for z in coeffs.c[k].iter().chain(coeffs.d[k].iter()) {
            eat(z.re);
            eat(z.im);
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct CceOptions {
    pub order: u8,
    /// Optional pair-coupling magnitude floor (rad/us): pairs whose largest
    /// intra-bath c/d component is below it are skipped. Defaults off.
    pub pair_cutoff: Option<f64>,
}

impl Default for CceOptions {
    fn default() -> Self {
        Self {
            order: 2,
            pair_cutoff: None,
        }
    }
}

type CMat4 = Matrix4<Complex64>;

struct PairCache {
    i: usize,
    j: usize,
    /// Per qudit level: eigenvalues and eigenvectors of the conditioned 4x4
    /// pair Hamiltonian.
    eig: Vec<(Vector4<f64>, CMat4)>,
}

fn pair_eigens(coeffs: &EffectiveCoefficients, s: SpinQuantum, i: usize, j: usize) -> PairCache {
    let eig = s
        .levels()
        .map(|level| {
            let h = conditioned_cluster_hamiltonian_unchecked(
                coeffs,
                &level_weights(s, level),
                &[i, j],
            );
            let h4 = CMat4::from_fn(|r, c| h[(r, c)]);
            let se = h4.symmetric_eigen();
            (se.eigenvalues, se.eigenvectors)
        })
        .collect();
    PairCache { i, j, eig }
}

fn pair_propagator(
    cache: &PairCache,
    s: SpinQuantum,
    schedule: &EvolutionSchedule,
    level: usize,
    t: f64,
) -> CMat4 {
    let mut w = CMat4::identity();
    for (seg_idx, (frac, map)) in schedule.segments().iter().enumerate() {
        let (vals, vecs) = &cache.eig[map.apply(s, level)];
        let tau = frac * t;
        let mut phased = *vecs;
        for c in 0..4 {
            let ph = Complex64::from_polar(1.0, -vals[c] * tau);
            for r in 0..4 {
                phased[(r, c)] *= ph;
            }
        }
        let u = phased * vecs.adjoint();
        w = if seg_idx == 0 { u } else { u * w };
    }
    w
}

fn trace_inner4(a: &CMat4, b: &CMat4) -> Complex64 {
    let mut acc = Complex64::default();
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y.conj();
    }
    acc
}

/// Per-nucleus schedule-averaged diagonal couplings: the singleton cluster
/// Hamiltonians of all segments commute, so the singleton contribution has
/// the closed form `exp(-i db t / 4) cos(da t / 2)`.
struct SingletonTable {
    /// a_bar[k * d + n]: linear-in-Iz coupling for nucleus k, level n.
    a_bar: Vec<f64>,
    /// b_bar[k * d + n]: Iz^2 coupling.
    b_bar: Vec<f64>,
    d: usize,
}

fn singleton_table(
    coeffs: &EffectiveCoefficients,
    s: SpinQuantum,
    schedule: &EvolutionSchedule,
) -> SingletonTable {
    let d = s.dim();
    let n_spins = coeffs.n_spins();
    let mut a_bar = vec![0.0; n_spins * d];
    let mut b_bar = vec![0.0; n_spins * d];
    for n in 0..d {
        for (frac, map) in schedule.segments() {
            let w = level_weights(s, map.apply(s, n));
            for k in 0..n_spins {
                let a = w[0] * coeffs.a[0][k] + w[1] * coeffs.a[1][k] + w[2] * coeffs.a[2][k];
                let b = w[0] * coeffs.b[0][k] + w[1] * coeffs.b[1][k] + w[2] * coeffs.b[2][k];
                a_bar[k * d + n] += frac * a;
                b_bar[k * d + n] += frac * b;
            }
        }
    }
    SingletonTable { a_bar, b_bar, d }
}

impl SingletonTable {
    fn value(&self, k: usize, n: usize, m: usize, t: f64) -> Complex64 {
        let da = self.a_bar[k * self.d + n] - self.a_bar[k * self.d + m];
        let db = self.b_bar[k * self.d + n] - self.b_bar[k * self.d + m];
        Complex64::from_polar(1.0, -db * t / 4.0) * (da * t / 2.0).cos()
    }
}

fn pair_is_coupled(coeffs: &EffectiveCoefficients, i: usize, j: usize, cutoff: f64) -> bool {
    (0..3).any(|k| {
        coeffs.c[k][(i, j)].norm() > cutoff || coeffs.d[k][(i, j)].norm() > cutoff
    })
}

/// Fills the full decoherence matrix on `times` at CCE order 1 or 2.
///
/// Diagonal entries are 1 by trace preservation and off-diagonals come from
/// the cluster product: singletons in closed form, pairs through cached 4x4
/// eigendecompositions. Pairs with no intra-bath coupling factorize exactly
/// into their singletons, so they are skipped.
pub fn decoherence_matrix(
    coeffs: &EffectiveCoefficients,
    s: SpinQuantum,
    schedule: &EvolutionSchedule,
    times: &[f64],
    opts: &CceOptions,
    seed: u64,
) -> Result<DecoherenceMatrix, CceError> {
    if !(1..=2).contains(&opts.order) {
        return Err(CceError::InvalidOrder(opts.order));
    }
    if times.is_empty() || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CceError::BadTimeGrid);
    }
    let d = s.dim();
    let n_spins = coeffs.n_spins();
    let singles = singleton_table(coeffs, s, schedule);
    let cutoff = opts.pair_cutoff.unwrap_or(0.0);

    let pair_caches: Vec<PairCache> = if opts.order == 2 {
        let indices: Vec<(usize, usize)> = (0..n_spins)
            .flat_map(|i| ((i + 1)..n_spins).map(move |j| (i, j)))
            .filter(|&(i, j)| pair_is_coupled(coeffs, i, j, cutoff))
            .collect();
        indices
            .into_par_iter()
            .map(|(i, j)| pair_eigens(coeffs, s, i, j))
            .collect()
    } else {
        Vec::new()
    };

    let level_pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|n| ((n + 1)..d).map(move |m| (n, m)))
        .collect();

    let rows: Vec<(CMatrix, usize)> = times
        .par_iter()
        .map(|&t| {
            let mut acc = vec![Complex64::new(1.0, 0.0); level_pairs.len()];
            let mut sing = vec![Complex64::default(); n_spins * level_pairs.len()];
            for (p, &(n, m)) in level_pairs.iter().enumerate() {
                for k in 0..n_spins {
                    let v = singles.value(k, n, m, t);
                    sing[k * level_pairs.len() + p] = v;
                    acc[p] *= v;
                }
            }
            let mut guarded = 0usize;
            let mut w = vec![CMat4::identity(); d];
            for cache in &pair_caches {
                for (level, slot) in w.iter_mut().enumerate() {
                    *slot = pair_propagator(cache, s, schedule, level, t);
                }
                for (p, &(n, m)) in level_pairs.iter().enumerate() {
                    let si = sing[cache.i * level_pairs.len() + p];
                    let sj = sing[cache.j * level_pairs.len() + p];
                    if si.norm() < DIVISION_GUARD || sj.norm() < DIVISION_GUARD {
                        guarded += 1;
                        continue;
                    }
                    let l_pair = trace_inner4(&w[n], &w[m]) / 4.0;
                    acc[p] *= l_pair / (si * sj);
                }
            }
            let mut v = CMatrix::identity(d, d);
            for (p, &(n, m)) in level_pairs.iter().enumerate() {
                v[(n, m)] = acc[p];
                v[(m, n)] = acc[p].conj();
            }
            (v, guarded)
        })
        .collect();

    let guarded = rows.iter().map(|(_, g)| g).sum();
    let matrix = DecoherenceMatrix {
        s,
        schedule: schedule.clone(),
        order: opts.order,
        seed,
        coeff_hash: coefficients_hash(coeffs),
        times: times.to_vec(),
        values: rows.into_iter().map(|(v, _)| v).collect(),
        guarded,
    };
    matrix.check_invariants()?;
    Ok(matrix)
}

/// Exact bath evolution for small registers, used to validate the CCE
/// truncation. Caches one eigendecomposition of the conditioned full-register
/// Hamiltonian per qudit level.
pub struct ExactBathOracle {
    s: SpinQuantum,
    schedule: EvolutionSchedule,
    eigs: Vec<crate::linalg::HermitianEigen>,
    dim: usize,
}

pub const EXACT_BATH_MAX_N: usize = 10;

impl ExactBathOracle {
    pub fn new(
        coeffs: &EffectiveCoefficients,
        s: SpinQuantum,
        schedule: &EvolutionSchedule,
        max_n: usize,
    ) -> Result<Self, CceError> {
        let n = coeffs.n_spins();
        let cap = max_n.min(EXACT_BATH_MAX_N);
        if n > cap {
            return Err(CceError::BathTooLarge(n, cap));
        }
        let register: Vec<usize> = (0..n).collect();
        let eigs = s
            .levels()
            .map(|level| {
                let h = conditioned_cluster_hamiltonian_unchecked(
                    coeffs,
                    &level_weights(s, level),
                    &register,
                );
                crate::linalg::hermitian_eigen(&h, EIG_TOL)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            s,
            schedule: schedule.clone(),
            eigs,
            dim: 1 << n,
        })
    }

    fn propagator(&self, level: usize, t: f64) -> CMatrix {
        let mut w = CMatrix::identity(self.dim, self.dim);
        for (seg_idx, (frac, map)) in self.schedule.segments().iter().enumerate() {
            let eig = &self.eigs[map.apply(self.s, level)];
            let u = eig.map(|x| Complex64::from_polar(1.0, -x * frac * t));
            w = if seg_idx == 0 { u } else { u * w };
        }
        w
    }

    pub fn decoherence(&self, n: usize, m: usize, t: f64) -> Result<Complex64, CceError> {
        if n >= self.s.dim() || m >= self.s.dim() {
            return Err(CceError::BadLevel);
        }
        let w_n = self.propagator(n, t);
        let w_m = self.propagator(m, t);
        Ok(hs_inner(&w_n, &w_m) / self.dim as f64)
    }

    /// Full L matrix at one time.
    pub fn matrix(&self, t: f64) -> CMatrix {
        let d = self.s.dim();
        let ws: Vec<CMatrix> = s_levels(d).map(|l| self.propagator(l, t)).collect();
        let mut v = CMatrix::identity(d, d);
        for n in 0..d {
            for m in (n + 1)..d {
                let l = hs_inner(&ws[n], &ws[m]) / self.dim as f64;
                v[(n, m)] = l;
                v[(m, n)] = l.conj();
            }
        }
        v
    }
}

fn s_levels(d: usize) -> impl Iterator<Item = usize> {
    0..d
}

/// Exact joint evolution under the untransformed laboratory Hamiltonian
/// (system Zeeman + zero-field splitting, bath Zeeman, full Cartesian dipolar
/// couplings), validating the effective model to leading order in 1/Omega.
///
/// Returns the interaction-picture L matrix at each requested time: raw
/// coherences of `rho(t)` for the uniform-superposition initial state, with
/// the deterministic system phase `exp(-i (E_n - E_m) t)` removed, where
/// `E_m = D m^2 + Omega_tilde m`.
pub fn exact_full_hamiltonian_oracle(
    geometry: &BathGeometry,
    params: &QuditHamiltonianParams,
    constants: &PhysicalConstants,
    s: SpinQuantum,
    times: &[f64],
) -> Result<Vec<CMatrix>, CceError> {
    let n = geometry.n_spins();
    if n > 4 {
        return Err(CceError::BathTooLarge(n, 4));
    }
    let d = s.dim();
    let bath_dim = 1usize << n;

    let ops = build_spin_operators(s);
    let s_comps = [&ops.sx, &ops.sy, &ops.sz];
    let sys_id = CMatrix::identity(d, d);
    let bath_id = CMatrix::identity(bath_dim, bath_dim);

    // On-site spin-1/2 Cartesian operators in the shared bit convention
    // (bit k set means nucleus k up).
    let site_ops: Vec<[CMatrix; 3]> = (0..n)
        .map(|k| {
            let mut ip = CMatrix::zeros(bath_dim, bath_dim);
            let mut iz = CMatrix::zeros(bath_dim, bath_dim);
            for state in 0..bath_dim {
                let up = state >> k & 1 == 1;
                iz[(state, state)] = Complex64::new(if up { 0.5 } else { -0.5 }, 0.0);
                if !up {
                    ip[(state | 1 << k, state)] = Complex64::new(1.0, 0.0);
                }
            }
            let im = ip.adjoint();
            let ix = (&ip + &im).scale(0.5);
            let iy = (&ip - &im) * Complex64::new(0.0, -0.5);
            [ix, iy, iz]
        })
        .collect();

    let mut h_sys = CMatrix::zeros(d, d);
    for level in 0..d {
        let m = s.m_of_level(level);
        h_sys[(level, level)] = Complex64::new(params.d_zfs * m * m + params.omega * m, 0.0);
    }
    let mut h = h_sys.kronecker(&bath_id);

    let omega_n = constants.omega_nuclear(params.b_z);
    let mut h_bath = CMatrix::zeros(bath_dim, bath_dim);
    for k in 0..n {
        h_bath += site_ops[k][2].scale(omega_n);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let rv = geometry.positions[j] - geometry.positions[i];
            let tens =
                crate::bath::cartesian_dipole_tensor(&rv, constants.nuclear_scale(rv.norm()));
            for a in 0..3 {
                for b in 0..3 {
                    if tens[(a, b)] != 0.0 {
                        h_bath += (&site_ops[i][a] * &site_ops[j][b]).scale(tens[(a, b)]);
                    }
                }
            }
        }
    }
    h += sys_id.kronecker(&h_bath);

    for (k, pos) in geometry.positions.iter().enumerate() {
        let tens = crate::bath::cartesian_dipole_tensor(pos, constants.hyperfine_scale(pos.norm()));
        for a in 0..3 {
            for b in 0..3 {
                if tens[(a, b)] != 0.0 {
                    h += s_comps[a]
                        .kronecker(&site_ops[k][b])
                        .scale(tens[(a, b)]);
                }
            }
        }
    }

    let eig = crate::linalg::hermitian_eigen(&h, 1e-8 * crate::linalg::hs_norm(&h).max(1.0))?;

    // Renormalized level energies from the same geometry, for phase removal.
    let tensors = compute_dipolar_tensors(geometry, params, constants)?;
    let omega_tilde = schrieffer_wolff_coefficients(&tensors, params)?.omega_tilde;
    let energies: Vec<f64> = (0..d)
        .map(|level| {
            let m = s.m_of_level(level);
            params.d_zfs * m * m + omega_tilde * m
        })
        .collect();

    // rho(0) = |+><+| x I/2^N with |+> the uniform superposition.
    let amp = 1.0 / (d as f64).sqrt();
    let mut results = Vec::with_capacity(times.len());
    for &t in times {
        let u = eig.map(|x| Complex64::from_polar(1.0, -x * t));
        // Coherence (n, m): sum_beta <n beta| U rho U^dag |m beta>.
        let mut v = CMatrix::identity(d, d);
        for nl in 0..d {
            for ml in 0..d {
                if nl == ml {
                    continue;
                }
                let mut c = Complex64::default();
                // <n b| U (|+><+| x I/2^N) U^dag |m b>
                //   = (amp^2 / 2^N) sum_b sum_{p q} U[(n b), (p q?)] ...
                // rho(0) is uniform over system indices and diagonal in bath.
                for beta in 0..bath_dim {
                    for p in 0..d {
                        for q in 0..d {
                            c += u[(nl * bath_dim + beta, p * bath_dim + beta)]
                                * u[(ml * bath_dim + beta, q * bath_dim + beta)].conj();
                        }
                    }
                }
                c *= amp * amp / bath_dim as f64;
                // Divide by the initial coherence (amp^2) and strip the
                // deterministic system phase.
                let phase = Complex64::from_polar(1.0, (energies[nl] - energies[ml]) * t);
                v[(nl, ml)] = c / (amp * amp) * phase;
            }
        }
        results.push(v);
    }
    Ok(results)
}

/// Per-configuration seed derivation (splitmix64 of master + index).
pub fn config_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub n_spins: usize,
    pub radius: f64,
    pub min_distance: f64,
    pub n_configurations: usize,
    pub master_seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_spins: 100,
            radius: 15.0,
            min_distance: 3.0,
            n_configurations: 64,
            master_seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub per_config: Vec<DecoherenceMatrix>,
    pub seeds: Vec<u64>,
    pub mean_f2: Vec<f64>,
    pub std_f2: Vec<f64>,
    pub guarded_total: usize,
}

/// Averages dephased-state squared fidelities over seeded bath realizations.
/// Deterministic for fixed seeds and bit-stable for any worker count
/// (order-preserving parallel collect, fixed reduction order).
pub fn ensemble_average_seeded(
    seeds: &[u64],
    spec: &EnsembleSpec,
    params: &QuditHamiltonianParams,
    constants: &PhysicalConstants,
    s: SpinQuantum,
    schedule: &EvolutionSchedule,
    times: &[f64],
    psi: &PureState,
    opts: &CceOptions,
) -> Result<EnsembleResult, CceError> {
    if seeds.is_empty() {
        return Err(CceError::InvariantViolation(
            "need at least one configuration".into(),
        ));
    }
    let per_config: Vec<DecoherenceMatrix> = seeds
        .par_iter()
        .map(|&seed| {
            let geometry =
                sample_bath_geometry(seed, spec.n_spins, spec.radius, spec.min_distance)?;
            let tensors = compute_dipolar_tensors(&geometry, params, constants)?;
            let coeffs = schrieffer_wolff_coefficients(&tensors, params)?;
            decoherence_matrix(&coeffs, s, schedule, times, opts, seed)
        })
        .collect::<Result<_, _>>()?;

    let n_cfg = per_config.len() as f64;
    let f2s: Vec<Vec<f64>> = per_config
        .iter()
        .map(|m| m.fidelities(psi))
        .collect::<Result<_, _>>()?;
    let mut mean = vec![0.0; times.len()];
    let mut mean_sq = vec![0.0; times.len()];
    for f2 in &f2s {
        for (i, &v) in f2.iter().enumerate() {
            mean[i] += v;
            mean_sq[i] += v * v;
        }
    }
    for i in 0..times.len() {
        mean[i] /= n_cfg;
        mean_sq[i] /= n_cfg;
    }
    let std: Vec<f64> = mean
        .iter()
        .zip(&mean_sq)
        .map(|(&m, &m2)| (m2 - m * m).max(0.0).sqrt())
        .collect();
    let guarded_total = per_config.iter().map(|m| m.guarded).sum();
    Ok(EnsembleResult {
        times: times.to_vec(),
        per_config,
        seeds: seeds.to_vec(),
        mean_f2: mean,
        std_f2: std,
        guarded_total,
    })
}

pub fn ensemble_average(
    spec: &EnsembleSpec,
    params: &QuditHamiltonianParams,
    constants: &PhysicalConstants,
    s: SpinQuantum,
    schedule: &EvolutionSchedule,
    times: &[f64],
    psi: &PureState,
    opts: &CceOptions,
) -> Result<EnsembleResult, CceError> {
    let seeds: Vec<u64> = (0..spec.n_configurations as u64)
        .map(|i| config_seed(spec.master_seed, i))
        .collect();
    ensemble_average_seeded(seeds.as_slice(), spec, params, constants, s, schedule, times, psi, opts)
}
