//! Numerical qudit codes for diagonal dephasing: greedy error-operator
//! fitting, Knill-Laflamme code-word search on the alternating-support
//! ansatz, detection/recovery plans, and fidelity/gain metrics.

use crate::cce::DecoherenceMatrix;
use crate::linalg::{hermitian_eigen, hs_norm, CMatrix, CVector};
use crate::optim::{minimize_with_restarts, NelderMeadOptions};
use crate::spin::{
    dephase_elementwise, squared_fidelity_pure, DensityMatrix, PureState, SpinError, SpinQuantum,
    sz_power_diagonal,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::fmt::Write as _;
use thiserror::Error;

const RESTARTS: usize = 8;
pub const KL_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum QecError {
    #[error("code words require half-integer spin, got 2S = {0}")]
    IntegerSpin(u32),
    #[error("need at least one error operator")]
    NoOperators,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("time {0} outside the decoherence grid")]
    TimeOutOfRange(f64),
    #[error("curves must share the time grid")]
    GridMismatch,
    #[error("malformed code plan: {0}")]
    MalformedText(String),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// Number of fitted error operators, the identity-like one included.
pub fn operator_count(s: SpinQuantum) -> usize {
    (s.s().floor() as usize) + 1
}

/// Diagonal error operators fitted to one dephasing channel.
#[derive(Debug, Clone)]
pub struct ErrorOperatorSet {
    pub s: SpinQuantum,
    /// Diagonals of the K operators, leading (identity-like) first.
    pub diagonals: Vec<CVector>,
    pub optimization_time: f64,
    /// Hilbert-Schmidt distance to the target after each greedy step.
    pub residual_norms: Vec<f64>,
    /// False if any greedy step hit the iteration cap without converging.
    pub converged: bool,
}

impl ErrorOperatorSet {
    pub fn k(&self) -> usize {
        self.diagonals.len()
    }
}

/// Rotates a diagonal so its first non-negligible entry is real positive;
/// E rho E^dag is phase-invariant, this removes the optimizer gauge freedom.
fn fix_gauge(v: &mut CVector) {
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-9) {
        let phase = z / z.norm();
        for e in v.iter_mut() {
            *e /= phase;
        }
    }
}

/// Greedy fit of `k` diagonal operators to `rho_t = L_t o rho0` (elementwise
/// product), minimizing the Hilbert-Schmidt distance at each step.
pub fn fit_error_operators(
    rho0: &DensityMatrix,
    l_t: &CMatrix,
    s: SpinQuantum,
    k: usize,
    t_opt: f64,
) -> Result<ErrorOperatorSet, QecError> {
    let d = s.dim();
    if rho0.dim() != d || l_t.nrows() != d || l_t.ncols() != d {
        return Err(QecError::DimensionMismatch(rho0.dim(), d));
    }
    if k == 0 {
        return Err(QecError::NoOperators);
    }
    let rho0 = rho0.matrix();
    let rho_t = CMatrix::from_fn(d, d, |i, j| l_t[(i, j)] * rho0[(i, j)]);

    let mut residual = rho_t;
    let mut diagonals = Vec::with_capacity(k);
    let mut residual_norms = Vec::with_capacity(k);
    let mut converged = true;
    let mut rng = ChaCha12Rng::seed_from_u64(0x45_52_52_4f_52 ^ s.two_s() as u64);
    let opts = NelderMeadOptions {
        f_tol: 1e-10,
        ..Default::default()
    };

    for _ in 0..k {
        // Informed start: the best rank-1 Hermitian update of the residual is
        // its top eigenpair; translate it into a diagonal where rho0 has
        // support and polish from there.
        let eig = hermitian_eigen(&residual, 1e-8)?;
        let (top, lam) = eig
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("non-NaN eigenvalue"))
            .map(|(i, &l)| (i, l))
            .unwrap();
        let mut x0 = vec![0.0; 2 * d];
        if lam > 0.0 {
            let scale = lam.sqrt();
            for i in 0..d {
                let psi = Complex64::new(rho0[(i, i)].re.max(0.0).sqrt(), 0.0);
                let e = if psi.norm() > 1e-9 {
                    scale * eig.vectors[(i, top)] / psi
                } else {
                    Complex64::default()
                };
                x0[i] = e.re;
                x0[d + i] = e.im;
            }
        }
        let objective = |x: &[f64]| {
            let mut f = 0.0;
            for i in 0..d {
                let ei = Complex64::new(x[i], x[d + i]);
                for j in 0..d {
                    let ej = Complex64::new(x[j], x[d + j]);
                    f += (residual[(i, j)] - ei * ej.conj() * rho0[(i, j)]).norm_sqr();
                }
            }
            f
        };
        let best = minimize_with_restarts(objective, &x0, RESTARTS, 0.3, &mut rng, &opts);
        converged &= best.converged;
        let mut diag = CVector::from_fn(d, |i, _| Complex64::new(best.x[i], best.x[d + i]));
        fix_gauge(&mut diag);
        for i in 0..d {
            for j in 0..d {
                residual[(i, j)] -= diag[i] * diag[j].conj() * rho0[(i, j)];
            }
        }
        residual_norms.push(hs_norm(&residual));
        diagonals.push(diag);
    }

    Ok(ErrorOperatorSet {
        s,
        diagonals,
        optimization_time: t_opt,
        residual_norms,
        converged,
    })
}

/// Logical code words on the alternating-support ansatz: |0_L> on even
/// levels (including |-S>), |1_L> on odd levels.
#[derive(Debug, Clone)]
pub struct CodeWords {
    pub s: SpinQuantum,
    pub zero_l: CVector,
    pub one_l: CVector,
    /// Knill-Laflamme residual, sum of absolute condition violations over the
    /// normalized error set.
    pub kl_residual: f64,
    /// Set when the residual exceeds [`KL_THRESHOLD`].
    pub flagged: bool,
}

impl CodeWords {
    pub fn support_pattern(&self) -> (Vec<usize>, Vec<usize>) {
        let d = self.s.dim();
        (
            (0..d).step_by(2).collect(),
            (1..d).step_by(2).collect(),
        )
    }

    pub fn logical_state(&self, theta: f64) -> PureState {
        let amp0 = Complex64::new(theta.cos(), 0.0);
        let amp1 = Complex64::new(0.0, theta.sin());
        let v = CVector::from_fn(self.s.dim(), |i, _| {
            amp0 * self.zero_l[i] + amp1 * self.one_l[i]
        });
        PureState::from_unnormalized(v).expect("code words are normalized")
    }
}

fn check_half_integer(s: SpinQuantum) -> Result<(), QecError> {
    if !s.is_half_integer() {
        return Err(QecError::IntegerSpin(s.two_s()));
    }
    Ok(())
}

/// KL condition values `<0|Ek^dag Ej|0> - <1|Ek^dag Ej|1>` for diagonal
/// errors; depends on the populations p only.
fn kl_conditions(diagonals: &[CVector], p0: &[f64], p1: &[f64], d: usize) -> Vec<Complex64> {
    let k = diagonals.len();
    let mut vals = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            let mut v = Complex64::default();
            for (idx, l) in (0..d).step_by(2).enumerate() {
                v += diagonals[a][l].conj() * diagonals[b][l] * p0[idx];
            }
            for (idx, l) in (1..d).step_by(2).enumerate() {
                v -= diagonals[a][l].conj() * diagonals[b][l] * p1[idx];
            }
            vals.push(v);
        }
    }
    vals
}

fn populations_from_params(x: &[f64], n: usize) -> Vec<f64> {
    let sum: f64 = x[..n].iter().map(|u| u * u).sum();
    x[..n].iter().map(|u| u * u / sum).collect()
}

/// Derives code words satisfying Eq. (5) on the ansatz, minimizing the
/// summed condition violations. Eq. (6) holds exactly by support
/// disjointness. Amplitudes are real non-negative (populations are the only
/// KL degrees of freedom for diagonal errors).
pub fn derive_code_words(errors: &ErrorOperatorSet, s: SpinQuantum) -> Result<CodeWords, QecError> {
    check_half_integer(s)?;
    solve_code_words(&errors.diagonals, s)
}

/// Minimizes ||A p|| over the product of two probability simplices
/// (p[..n0] and p[n0..] each summing to 1, all entries non-negative). The
/// objective is convex quadratic, so an active-set sequence of
/// equality-constrained least-squares solves (KKT with pseudoinverse) is
/// exact up to the binding-set guess; callers polish from here.
fn simplex_least_squares(a: &nalgebra::DMatrix<f64>, n0: usize, n1: usize) -> Vec<f64> {
    let d = n0 + n1;
    let q = a.transpose() * a * 2.0;
    let mut active: Vec<usize> = Vec::new();
    for _ in 0..=d {
        let nc = 2 + active.len();
        let n = d + nc;
        let mut kkt = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        kkt.view_mut((0, 0), (d, d)).copy_from(&q);
        for j in 0..n0 {
            kkt[(d, j)] = 1.0;
            kkt[(j, d)] = 1.0;
        }
        for j in n0..d {
            kkt[(d + 1, j)] = 1.0;
            kkt[(j, d + 1)] = 1.0;
        }
        rhs[d] = 1.0;
        rhs[d + 1] = 1.0;
        for (row, &i) in active.iter().enumerate() {
            kkt[(d + 2 + row, i)] = 1.0;
            kkt[(i, d + 2 + row)] = 1.0;
        }
        let sol = kkt
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap_or_else(|_| nalgebra::DVector::zeros(n));
        let p: Vec<f64> = (0..d).map(|i| sol[i]).collect();
        let worst = (0..d)
            .filter(|i| !active.contains(i))
            .filter(|&i| p[i] < -1e-12)
            .min_by(|&i, &j| p[i].partial_cmp(&p[j]).unwrap());
        match worst {
            Some(i) => active.push(i),
            None => return p.iter().map(|&x| x.max(0.0)).collect(),
        }
    }
    vec![1.0 / n0 as f64; d]
}

fn solve_code_words(diagonals: &[CVector], s: SpinQuantum) -> Result<CodeWords, QecError> {
    if diagonals.is_empty() {
        return Err(QecError::NoOperators);
    }
    let d = s.dim();
    // Normalize each operator: conditions rescale, the solution set does not,
    // and the optimizer landscape stays well conditioned.
    let normalized: Vec<CVector> = diagonals
        .iter()
        .map(|v| {
            let norm = v.norm();
            if norm > 0.0 {
                v / Complex64::from(norm)
            } else {
                v.clone()
            }
        })
        .collect();
    let n0 = d.div_ceil(2);
    let n1 = d / 2;

    // The conditions are linear in the populations: stack their real and
    // imaginary parts into one matrix and solve the constrained least-squares
    // problem exactly.
    let k = normalized.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for a in 0..k {
        for b in a..k {
            let mut re = vec![0.0; d];
            let mut im = vec![0.0; d];
            for (idx, l) in (0..d).step_by(2).enumerate() {
                let z = normalized[a][l].conj() * normalized[b][l];
                re[idx] = z.re;
                im[idx] = z.im;
            }
            for (idx, l) in (1..d).step_by(2).enumerate() {
                let z = normalized[a][l].conj() * normalized[b][l];
                re[n0 + idx] = -z.re;
                im[n0 + idx] = -z.im;
            }
            rows.push(re);
            if a != b {
                rows.push(im);
            }
        }
    }
    let a_mat = nalgebra::DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let p_qp = simplex_least_squares(&a_mat, n0, n1);

    let objective_sq = |x: &[f64]| {
        let p0 = populations_from_params(&x[..n0], n0);
        let p1 = populations_from_params(&x[n0..], n1);
        kl_conditions(&normalized, &p0, &p1, d)
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
    };
    let qp_obj = {
        let v = &a_mat * nalgebra::DVector::from_row_slice(&p_qp);
        v.norm_squared()
    };
    // Polish from the QP solution; it only rarely improves, but covers
    // active-set corner cases at negligible cost.
    let x0: Vec<f64> = p_qp.iter().map(|&p| p.sqrt()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(0x4b_4c ^ (s.two_s() as u64) << 8);
    let opts = NelderMeadOptions {
        f_tol: 1e-18,
        max_iters: 60_000,
        polish_rounds: 6,
        ..Default::default()
    };
    let best = minimize_with_restarts(objective_sq, &x0, RESTARTS, 0.3, &mut rng, &opts);

    let (p0, p1) = if best.f < qp_obj {
        (
            populations_from_params(&best.x[..n0], n0),
            populations_from_params(&best.x[n0..], n1),
        )
    } else {
        (p_qp[..n0].to_vec(), {
            let sum: f64 = p_qp[n0..].iter().sum();
            p_qp[n0..].iter().map(|&p| p / sum).collect()
        })
    };
    // Renormalize the even block too: clipping may have moved the sums off 1.
    let p0: Vec<f64> = {
        let sum: f64 = p0.iter().sum();
        p0.iter().map(|&p| p / sum).collect()
    };
    let mut zero_l = CVector::zeros(d);
    let mut one_l = CVector::zeros(d);
    for (idx, l) in (0..d).step_by(2).enumerate() {
        zero_l[l] = Complex64::new(p0[idx].sqrt(), 0.0);
    }
    for (idx, l) in (1..d).step_by(2).enumerate() {
        one_l[l] = Complex64::new(p1[idx].sqrt(), 0.0);
    }
    let kl_residual = kl_conditions(&normalized, &p0, &p1, d)
        .iter()
        .map(|v| v.norm())
        .sum::<f64>();
    Ok(CodeWords {
        s,
        zero_l,
        one_l,
        kl_residual,
        flagged: kl_residual > KL_THRESHOLD,
    })
}

/// Baseline code words for Markovian Sz dephasing: same solver, error set
/// `{Sz^k, k = 0..floor(S)}` restricted to diagonal form.
pub fn spin_binomial_baseline(s: SpinQuantum) -> Result<CodeWords, QecError> {
    check_half_integer(s)?;
    let diagonals: Vec<CVector> = (0..operator_count(s) as u32)
        .map(|k| sz_power_diagonal(s, k))
        .collect();
    solve_code_words(&diagonals, s)
}

/// Detection projectors and per-outcome recovery unitaries.
#[derive(Debug, Clone)]
pub struct RecoveryPlan {
    pub s: SpinQuantum,
    /// Orthonormal error words, `[outcome][logical]`.
    pub error_words: Vec<[CVector; 2]>,
    pub projectors: Vec<CMatrix>,
    pub recoveries: Vec<CMatrix>,
    /// Set when the fitted error words were linearly dependent and the plan
    /// was truncated below the requested K.
    pub rank_reduced: bool,
}

impl RecoveryPlan {
    pub fn k(&self) -> usize {
        self.projectors.len()
    }

    /// I - sum_k P_k, the undetected complement.
    pub fn complement(&self) -> CMatrix {
        let d = self.s.dim();
        let mut q = CMatrix::identity(d, d);
        for p in &self.projectors {
            q -= p;
        }
        q
    }
}

/// Plane rotation mapping unit vector `x` to unit vector `y`, identity on the
/// orthogonal complement of their span.
fn plane_rotation(x: &CVector, y: &CVector) -> CMatrix {
    let d = x.len();
    let inner = y.dotc(x);
    let mut perp = x - y * inner;
    let s = perp.norm();
    if s < 1e-12 {
        // x = phase * y: a phase on the y axis suffices.
        let phase = if inner.norm() > 0.0 {
            inner.conj() / inner.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let mut u = CMatrix::identity(d, d);
        for i in 0..d {
            for j in 0..d {
                u[(i, j)] += (phase - 1.0) * y[i] * y[j].conj();
            }
        }
        return u;
    }
    perp /= Complex64::from(s);
    // In the {y, perp} basis x = (inner, s); rotate it onto (1, 0).
    let b = [y.clone(), perp];
    let r2 = [
        [inner.conj(), Complex64::from(s)],
        [Complex64::from(-s), inner],
    ];
    let mut u = CMatrix::identity(d, d);
    for (i, bi) in b.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            let delta = if i == j { 1.0 } else { 0.0 };
            let coeff = r2[i][j] - delta;
            if coeff.norm() > 0.0 {
                for r in 0..d {
                    for c in 0..d {
                        u[(r, c)] += coeff * bi[r] * bj[c].conj();
                    }
                }
            }
        }
    }
    u
}

/// Gram-Schmidt error-word bases, projectors per outcome and recovery
/// rotations. The |0_L> and |1_L> error words live on disjoint supports, so
/// each recovery factors into two commuting plane rotations.
pub fn build_detection_recovery(
    errors: &ErrorOperatorSet,
    words: &CodeWords,
) -> Result<RecoveryPlan, QecError> {
    let s = errors.s;
    let d = s.dim();
    if words.s != s {
        return Err(QecError::DimensionMismatch(words.s.dim(), d));
    }
    let logicals = [&words.zero_l, &words.one_l];
    let mut bases: Vec<[CVector; 2]> = Vec::new();
    let mut rank_reduced = false;
    'outcomes: for diag in &errors.diagonals {
        let mut pair: Vec<CVector> = Vec::with_capacity(2);
        for logical in logicals {
            let mut w = CVector::from_fn(d, |i, _| diag[i] * logical[i]);
            let scale = w.norm();
            for prev in &bases {
                for b in prev {
                    let overlap = b.dotc(&w);
                    w -= b * overlap;
                }
            }
            if w.norm() < 1e-8 * scale.max(1e-30) {
                rank_reduced = true;
                break 'outcomes;
            }
            w /= Complex64::from(w.norm());
            pair.push(w);
        }
        bases.push([pair[0].clone(), pair[1].clone()]);
    }
    if bases.is_empty() {
        return Err(QecError::NoOperators);
    }
    let projectors: Vec<CMatrix> = bases
        .iter()
        .map(|[e0, e1]| {
            let mut p = CMatrix::zeros(d, d);
            for e in [e0, e1] {
                for i in 0..d {
                    for j in 0..d {
                        p[(i, j)] += e[i] * e[j].conj();
                    }
                }
            }
            p
        })
        .collect();
    let recoveries: Vec<CMatrix> = bases
        .iter()
        .map(|[e0, e1]| plane_rotation(e0, &words.zero_l) * plane_rotation(e1, &words.one_l))
        .collect();
    Ok(RecoveryPlan {
        s,
        error_words: bases,
        projectors,
        recoveries,
        rank_reduced,
    })
}

/// One instantaneous QEC cycle: measure, rotate back, keep the undetected
/// complement untouched. Trace preserving.
pub fn apply_qec(rho_t: &DensityMatrix, plan: &RecoveryPlan) -> Result<DensityMatrix, QecError> {
    let d = plan.s.dim();
    if rho_t.dim() != d {
        return Err(QecError::DimensionMismatch(rho_t.dim(), d));
    }
    let rho = rho_t.matrix();
    let mut out = CMatrix::zeros(d, d);
    for (p, r) in plan.projectors.iter().zip(&plan.recoveries) {
        let proj = p * rho * p;
        out += r * proj * r.adjoint();
    }
    let q = plan.complement();
    out += &q * rho * &q;
    Ok(DensityMatrix::new(out)?)
}

/// Detection outcome probabilities for a state, complement last.
pub fn outcome_probabilities(rho: &DensityMatrix, plan: &RecoveryPlan) -> Vec<f64> {
    let mut probs: Vec<f64> = plan
        .projectors
        .iter()
        .map(|p| (p * rho.matrix()).trace().re)
        .collect();
    probs.push((plan.complement() * rho.matrix()).trace().re);
    probs
}

/// L slice at time t, linearly interpolated between grid points.
pub fn l_at(matrix: &DecoherenceMatrix, t: f64) -> Result<CMatrix, QecError> {
    let times = &matrix.times;
    if t < times[0] || t > *times.last().unwrap() {
        return Err(QecError::TimeOutOfRange(t));
    }
    let hi = times.partition_point(|&x| x < t).min(times.len() - 1);
    if (times[hi] - t).abs() < 1e-12 {
        return Ok(matrix.values[hi].clone());
    }
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    Ok(&matrix.values[lo] * Complex64::from(1.0 - w) + &matrix.values[hi] * Complex64::from(w))
}

/// Recovered squared fidelities of `psi` dephased by each time slice of the
/// decoherence matrix and then corrected with the plan.
pub fn recovered_fidelities(
    matrix: &DecoherenceMatrix,
    psi: &PureState,
    plan: &RecoveryPlan,
) -> Result<Vec<f64>, QecError> {
    let rho0 = psi.projector();
    matrix
        .values
        .iter()
        .map(|l| {
            let rho_t = dephase_elementwise(l, &rho0)?;
            let rec = apply_qec(&rho_t, plan)?;
            Ok(squared_fidelity_pure(&rec, psi)?)
        })
        .collect()
}

/// Gain per Eq. (9): ratio of spin-1/2 to spin-S infidelity. Points with a
/// vanishing denominator are absent rather than infinite.
#[derive(Debug, Clone)]
pub struct GainCurve {
    pub times: Vec<f64>,
    pub mean: Vec<Option<f64>>,
    pub std: Vec<Option<f64>>,
}

pub fn gain_points(
    f2_spin_s: &[f64],
    f2_spin_half: &[f64],
) -> Result<Vec<Option<f64>>, QecError> {
    if f2_spin_s.len() != f2_spin_half.len() {
        return Err(QecError::GridMismatch);
    }
    Ok(f2_spin_s
        .iter()
        .zip(f2_spin_half)
        .map(|(&fs, &fh)| {
            let denom = 1.0 - fs;
            if denom < 1e-12 {
                None
            } else {
                Some((1.0 - fh) / denom)
            }
        })
        .collect())
}

/// Per-configuration gains aggregated into mean and std; a time point is
/// absent if any configuration's denominator vanished there.
pub fn gain_curve(
    times: &[f64],
    per_config_f2_s: &[Vec<f64>],
    per_config_f2_half: &[Vec<f64>],
) -> Result<GainCurve, QecError> {
    if per_config_f2_s.len() != per_config_f2_half.len() || per_config_f2_s.is_empty() {
        return Err(QecError::GridMismatch);
    }
    let per_config: Vec<Vec<Option<f64>>> = per_config_f2_s
        .iter()
        .zip(per_config_f2_half)
        .map(|(fs, fh)| gain_points(fs, fh))
        .collect::<Result<_, _>>()?;
    let n_cfg = per_config.len() as f64;
    let mut mean = Vec::with_capacity(times.len());
    let mut std = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        if per_config.iter().any(|g| g[ti].is_none()) {
            mean.push(None);
            std.push(None);
            continue;
        }
        let vals: Vec<f64> = per_config.iter().map(|g| g[ti].unwrap()).collect();
        let m = vals.iter().sum::<f64>() / n_cfg;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n_cfg;
        mean.push(Some(m));
        std.push(Some(v.sqrt()));
    }
    Ok(GainCurve {
        times: times.to_vec(),
        mean,
        std,
    })
}

/// Recovered F^2 over (theta, t) for initial states
/// `cos(theta)|0_L> + i sin(theta)|1_L>`.
#[derive(Debug, Clone)]
pub struct ThetaSweep {
    pub thetas: Vec<f64>,
    pub times: Vec<f64>,
    /// f2[theta index][time index].
    pub f2: Vec<Vec<f64>>,
}

pub fn theta_sweep(
    words: &CodeWords,
    matrix: &DecoherenceMatrix,
    plan: &RecoveryPlan,
    thetas: &[f64],
) -> Result<ThetaSweep, QecError> {
    let f2 = thetas
        .iter()
        .map(|&theta| {
            let psi = words.logical_state(theta);
            recovered_fidelities(matrix, &psi, plan)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ThetaSweep {
        thetas: thetas.to_vec(),
        times: matrix.times.clone(),
        f2,
    })
}

/// A persisted code: errors, words and their provenance.
#[derive(Debug, Clone)]
pub struct CodePlan {
    pub errors: ErrorOperatorSet,
    pub words: CodeWords,
}

/// Full optimization pipeline for one (S, t_opt): fit errors to the channel
/// at t_opt starting from the spin-binomial logical state, derive words, and
/// refine once with the new words.
pub fn optimize_code(
    s: SpinQuantum,
    matrix: &DecoherenceMatrix,
    t_opt: f64,
) -> Result<CodePlan, QecError> {
    check_half_integer(s)?;
    let l_slice = l_at(matrix, t_opt)?;
    let k = operator_count(s);
    let mut words = spin_binomial_baseline(s)?;
    let mut errors = None;
    for _ in 0..2 {
        let psi = words.logical_state(std::f64::consts::FRAC_PI_4);
        let fitted = fit_error_operators(&psi.projector(), &l_slice, s, k, t_opt)?;
        words = derive_code_words(&fitted, s)?;
        errors = Some(fitted);
    }
    Ok(CodePlan {
        errors: errors.unwrap(),
        words,
    })
}

impl CodePlan {
    pub fn to_text(&self) -> String {
        let d = self.errors.s.dim();
        let mut out = String::new();
        writeln!(out, "# code-plan v1").unwrap();
        writeln!(out, "# two_s {}", self.errors.s.two_s()).unwrap();
        writeln!(out, "# t_opt {:.16e}", self.errors.optimization_time).unwrap();
        writeln!(out, "# k {}", self.errors.k()).unwrap();
        writeln!(out, "# kl_residual {:.16e}", self.words.kl_residual).unwrap();
        writeln!(out, "# flagged {}", self.words.flagged).unwrap();
        writeln!(out, "# converged {}", self.errors.converged).unwrap();
        let mut row = |label: &str, v: &CVector| {
            write!(out, "{label}").unwrap();
            for z in v.iter() {
                write!(out, " {:.16e} {:.16e}", z.re, z.im).unwrap();
            }
            out.push('\n');
        };
        row("zero_l", &self.words.zero_l);
        row("one_l", &self.words.one_l);
        for diag in &self.errors.diagonals {
            row("error", diag);
        }
        write!(out, "residuals").unwrap();
        for r in &self.errors.residual_norms {
            write!(out, " {:.16e}", r).unwrap();
        }
        out.push('\n');
        let _ = d;
        out
    }

    pub fn from_text(text: &str) -> Result<Self, QecError> {
        let bad = |m: &str| QecError::MalformedText(m.to_string());
        let mut two_s = None;
        let mut t_opt = None;
        let mut kl_residual = None;
        let mut flagged = None;
        let mut converged = None;
        let mut zero_l = None;
        let mut one_l = None;
        let mut diagonals = Vec::new();
        let mut residual_norms = Vec::new();
        let parse_complex_row = |rest: &str| -> Result<CVector, QecError> {
            let nums: Vec<f64> = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| QecError::MalformedText(e.to_string()))?;
            if nums.len() % 2 != 0 {
                return Err(QecError::MalformedText("odd float count".into()));
            }
            Ok(CVector::from_fn(nums.len() / 2, |i, _| {
                Complex64::new(nums[2 * i], nums[2 * i + 1])
            }))
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("two_s ") {
                    two_s = v.trim().parse::<u32>().ok();
                } else if let Some(v) = rest.strip_prefix("t_opt ") {
                    t_opt = v.trim().parse::<f64>().ok();
                } else if let Some(v) = rest.strip_prefix("kl_residual ") {
                    kl_residual = v.trim().parse::<f64>().ok();
                } else if let Some(v) = rest.strip_prefix("flagged ") {
                    flagged = v.trim().parse::<bool>().ok();
                } else if let Some(v) = rest.strip_prefix("converged ") {
                    converged = v.trim().parse::<bool>().ok();
                }
            } else if let Some(rest) = line.strip_prefix("zero_l ") {
                zero_l = Some(parse_complex_row(rest)?);
            } else if let Some(rest) = line.strip_prefix("one_l ") {
                one_l = Some(parse_complex_row(rest)?);
            } else if let Some(rest) = line.strip_prefix("error ") {
                diagonals.push(parse_complex_row(rest)?);
            } else if let Some(rest) = line.strip_prefix("residuals") {
                residual_norms = rest
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| QecError::MalformedText(e.to_string()))?;
            }
        }
        let s = SpinQuantum::new(two_s.ok_or_else(|| bad("missing two_s"))?)?;
        Ok(Self {
            errors: ErrorOperatorSet {
                s,
                diagonals,
                optimization_time: t_opt.ok_or_else(|| bad("missing t_opt"))?,
                residual_norms,
                converged: converged.ok_or_else(|| bad("missing converged"))?,
            },
            words: CodeWords {
                s,
                zero_l: zero_l.ok_or_else(|| bad("missing zero_l"))?,
                one_l: one_l.ok_or_else(|| bad("missing one_l"))?,
                kl_residual: kl_residual.ok_or_else(|| bad("missing kl_residual"))?,
                flagged: flagged.ok_or_else(|| bad("missing flagged"))?,
            },
        })
    }
}
