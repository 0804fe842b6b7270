//! Pulse-level compilation: Givens decomposition of target unitaries into
//! resonant adjacent-level rotations, the generalized echo, detection basis
//! rotations, ancilla probe frequencies, and wall-clock estimates.

use crate::bath::MU_B_OVER_HBAR;
use crate::linalg::{diff_mod_phase, unitarity_defect, CMatrix, CVector};
use crate::qec::{CodeWords, RecoveryPlan};
use crate::spin::SpinQuantum;
use num_complex::Complex64;
use std::fmt::Write as _;
use thiserror::Error;

pub const DEFAULT_PULSE_NS: f64 = 10.0;
pub const DEFAULT_MEASUREMENT_NS: f64 = 70.0;
const UNITARY_TOL: f64 = 1e-9;
const RECOMPOSE_TOL: f64 = 1e-9;
const ANGLE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PulseError {
    #[error("input is not unitary (defect {0:.3e})")]
    NotUnitary(f64),
    #[error("pulse level {level} out of range for dimension {dim}")]
    LevelOutOfRange { level: usize, dim: usize },
    #[error("pulse duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("echo requires half-integer spin, got 2S = {0}")]
    IntegerSpin(u32),
    #[error("code words leave the alternating support (level {0})")]
    AlternatingSupport(usize),
    #[error("recovery plan is rank deficient")]
    RankDeficient,
    #[error("compiled sequence misses its target (error {0:.3e})")]
    CompilationFailed(f64),
    #[error("ancilla coupling J_z must be nonzero")]
    ZeroCoupling,
    #[error("probe frequencies collide: gap {gap:.3e} below linewidth {linewidth:.3e} rad/us")]
    FrequencyCollision { gap: f64, linewidth: f64 },
    #[error("measurement time {0} ns outside the allowed window [{1}, {2}] ns")]
    MeasurementWindow(f64, f64, f64),
    #[error("malformed sequence text: {0}")]
    MalformedText(String),
    #[error(transparent)]
    Spin(#[from] crate::spin::SpinError),
}

/// One resonant pulse on the |level> <-> |level+1> pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    /// Lower level index (0-based, m = level - S).
    pub level: usize,
    /// Rotation angle in radians.
    pub theta: f64,
    /// Drive phase reference in radians.
    pub phi: f64,
    pub duration_ns: f64,
}

impl Pulse {
    pub fn new(level: usize, theta: f64, phi: f64) -> Self {
        Self {
            level,
            theta,
            phi,
            duration_ns: DEFAULT_PULSE_NS,
        }
    }

    /// Y_level(theta, phi) embedded in dimension `dim`.
    pub fn matrix(&self, dim: usize) -> CMatrix {
        embedded_rotation(dim, self.level, self.level + 1, self.theta, self.phi)
    }

    pub fn validate(&self, dim: usize) -> Result<(), PulseError> {
        if self.level + 1 >= dim {
            return Err(PulseError::LevelOutOfRange {
                level: self.level,
                dim,
            });
        }
        if self.duration_ns <= 0.0 {
            return Err(PulseError::NonPositiveDuration(self.duration_ns));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Encoding,
    Echo,
    BasisRotation,
    MeasurementSlot,
    Recovery,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::Encoding => "encoding",
            Stage::Echo => "echo",
            Stage::BasisRotation => "basis-rotation",
            Stage::MeasurementSlot => "measurement-slot",
            Stage::Recovery => "recovery",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "encoding" => Stage::Encoding,
            "echo" => Stage::Echo,
            "basis-rotation" => Stage::BasisRotation,
            "measurement-slot" => Stage::MeasurementSlot,
            "recovery" => Stage::Recovery,
            _ => return None,
        })
    }
}

/// Planar rotation between two (not necessarily adjacent) levels, acting as
/// [[cos(t/2), -e^{-i phi} sin(t/2)], [e^{i phi} sin(t/2), cos(t/2)]] on
/// (lower, upper).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarRotation {
    pub lower: usize,
    pub upper: usize,
    pub theta: f64,
    pub phi: f64,
}

pub fn embedded_rotation(dim: usize, i: usize, j: usize, theta: f64, phi: f64) -> CMatrix {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let e = Complex64::from_polar(1.0, phi);
    let mut u = CMatrix::identity(dim, dim);
    u[(i, i)] = Complex64::from(c);
    u[(j, j)] = Complex64::from(c);
    u[(i, j)] = -s * e.conj();
    u[(j, i)] = s * e;
    u
}

impl PlanarRotation {
    pub fn matrix(&self, dim: usize) -> CMatrix {
        embedded_rotation(dim, self.lower, self.upper, self.theta, self.phi)
    }
}

/// Result of Givens elimination: U = R_1 R_2 ... R_K diag(e^{i phases}).
#[derive(Debug, Clone)]
pub struct TwoLevelDecomposition {
    pub rotations: Vec<PlanarRotation>,
    /// Diagonal phase residue, radians per level.
    pub phases: Vec<f64>,
}

impl TwoLevelDecomposition {
    pub fn recompose(&self, dim: usize) -> CMatrix {
        let mut u = CMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, self.phases[i])
            } else {
                Complex64::default()
            }
        });
        for r in self.rotations.iter().rev() {
            u = r.matrix(dim) * u;
        }
        u
    }

    pub fn residue_is_trivial(&self) -> bool {
        self.phases.iter().all(|p| {
            let r = p.rem_euclid(2.0 * std::f64::consts::PI);
            r < 1e-9 || (2.0 * std::f64::consts::PI - r) < 1e-9
        })
    }
}

/// Givens-style elimination on adjacent rows. All returned rotations have
/// upper = lower + 1, so they lower directly to resonant pulses.
pub fn two_level_decompose(u: &CMatrix) -> Result<TwoLevelDecomposition, PulseError> {
    let d = u.nrows();
    let defect = unitarity_defect(u);
    if defect > UNITARY_TOL {
        return Err(PulseError::NotUnitary(defect));
    }
    let mut a = u.clone();
    // Forward pass: G_K ... G_1 U = D, rotations recorded in application
    // order onto U.
    let mut gs: Vec<PlanarRotation> = Vec::new();
    for col in 0..d.saturating_sub(1) {
        for row in ((col + 1)..d).rev() {
            let b = a[(row, col)];
            if b.norm() < ANGLE_EPS {
                continue;
            }
            let top = a[(row - 1, col)];
            let (theta, phi) = if top.norm() < ANGLE_EPS {
                (std::f64::consts::PI, (-b).arg())
            } else {
                (
                    2.0 * b.norm().atan2(top.norm()),
                    (-b * top.conj()).arg(),
                )
            };
            let g = PlanarRotation {
                lower: row - 1,
                upper: row,
                theta,
                phi,
            };
            a = g.matrix(d) * a;
            gs.push(g);
        }
    }
    let phases: Vec<f64> = (0..d).map(|i| a[(i, i)].arg()).collect();
    // U = G_1^dag ... G_K^dag D; the adjoint of Y(theta, phi) is
    // Y(-theta, phi).
    // Canonical form: theta >= 0, phi in (-pi, pi], using
    // Y(-theta, phi) = Y(theta, phi + pi).
    let rotations = gs
        .iter()
        .map(|g| {
            let (mut theta, mut phi) = (-g.theta, g.phi);
            if theta < 0.0 {
                theta = -theta;
                phi += std::f64::consts::PI;
            }
            phi = (phi + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
                - std::f64::consts::PI;
            if phi <= -std::f64::consts::PI + 1e-15 {
                phi = std::f64::consts::PI;
            }
            PlanarRotation {
                theta,
                phi,
                ..*g
            }
        })
        .collect();
    Ok(TwoLevelDecomposition { rotations, phases })
}

/// Lowers a rotation between arbitrary levels to adjacent-level pulses via
/// Y_{i,j}(t, phi) = Y_{i,i+1}(pi) Y_{i+1,j}(-t, phi) Y_{i,i+1}(-pi).
/// Pulses are returned in time order (first applied first); the matrix
/// product runs right to left over the reversed list. Count is
/// 2(|i - j| - 1) + 1.
pub fn adjacency_reduce(rotation: &PlanarRotation) -> Vec<Pulse> {
    let (i, j) = (rotation.lower, rotation.upper);
    if j == i + 1 {
        return vec![Pulse::new(i, rotation.theta, rotation.phi)];
    }
    let inner = PlanarRotation {
        lower: i + 1,
        upper: j,
        theta: -rotation.theta,
        phi: rotation.phi,
    };
    let mut pulses = vec![Pulse::new(i, -std::f64::consts::PI, 0.0)];
    pulses.extend(adjacency_reduce(&inner));
    pulses.push(Pulse::new(i, std::f64::consts::PI, 0.0));
    pulses
}

#[derive(Debug, Clone)]
pub struct SequencedPulse {
    pub stage: Stage,
    pub pulse: Pulse,
}

/// An ordered pulse program with a virtual initial phase layer and
/// measurement slots. The implemented unitary is
/// (product of pulses, later pulses leftmost) * diag(e^{i initial_phases}).
/// The phase layer is a zero-cost frame redefinition; it is reported rather
/// than synthesized.
#[derive(Debug, Clone)]
pub struct PulseSequence {
    pub s: SpinQuantum,
    pub pulses: Vec<SequencedPulse>,
    pub initial_phases: Vec<f64>,
    pub measurement_slots: usize,
    pub measurement_ns: f64,
}

impl PulseSequence {
    pub fn empty(s: SpinQuantum) -> Self {
        Self {
            s,
            pulses: Vec::new(),
            initial_phases: vec![0.0; s.dim()],
            measurement_slots: 0,
            measurement_ns: DEFAULT_MEASUREMENT_NS,
        }
    }

    pub fn unitary(&self) -> CMatrix {
        let d = self.s.dim();
        let mut u = CMatrix::from_fn(d, d, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, self.initial_phases[i])
            } else {
                Complex64::default()
            }
        });
        for sp in &self.pulses {
            u = sp.pulse.matrix(d) * u;
        }
        u
    }

    pub fn total_duration_ns(&self) -> f64 {
        self.pulses.iter().map(|p| p.pulse.duration_ns).sum::<f64>()
            + self.measurement_slots as f64 * self.measurement_ns
    }

    pub fn stage_counts(&self) -> Vec<(Stage, usize)> {
        let mut counts: Vec<(Stage, usize)> = Vec::new();
        for sp in &self.pulses {
            match counts.iter_mut().find(|(st, _)| *st == sp.stage) {
                Some((_, n)) => *n += 1,
                None => counts.push((sp.stage, 1)),
            }
        }
        counts
    }

    pub fn validate(&self) -> Result<(), PulseError> {
        let d = self.s.dim();
        if self.initial_phases.len() != d {
            return Err(PulseError::MalformedText(
                "initial phase layer has the wrong length".into(),
            ));
        }
        for sp in &self.pulses {
            sp.pulse.validate(d)?;
        }
        Ok(())
    }

    /// Appends another sequence's pulses; its initial phase layer must be
    /// trivial (the frame trick only applies before the first pulse).
    pub fn extend(&mut self, other: &PulseSequence) {
        debug_assert!(other
            .initial_phases
            .iter()
            .all(|p| p.abs() < 1e-9 || self.pulses.is_empty()));
        if self.pulses.is_empty() {
            self.initial_phases = other.initial_phases.clone();
        }
        self.pulses.extend(other.pulses.iter().cloned());
        self.measurement_slots += other.measurement_slots;
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# pulse-sequence v1").unwrap();
        writeln!(out, "# two_s {}", self.s.two_s()).unwrap();
        writeln!(out, "# measurement_slots {}", self.measurement_slots).unwrap();
        writeln!(out, "# measurement_ns {:.16e}", self.measurement_ns).unwrap();
        write!(out, "initial_phases").unwrap();
        for p in &self.initial_phases {
            write!(out, " {:.16e}", p).unwrap();
        }
        out.push('\n');
        for (idx, sp) in self.pulses.iter().enumerate() {
            let m = self.s.m_of_level(sp.pulse.level);
            writeln!(
                out,
                "pulse {} {} {:.1} {:.16e} {:.16e} {:.16e}",
                sp.stage.label(),
                idx,
                m,
                sp.pulse.theta,
                sp.pulse.phi,
                sp.pulse.duration_ns
            )
            .unwrap();
        }
        writeln!(
            out,
            "# summary pulses {} duration_ns {:.16e}",
            self.pulses.len(),
            self.total_duration_ns()
        )
        .unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PulseError> {
        let bad = |m: &str| PulseError::MalformedText(m.to_string());
        let mut two_s = None;
        let mut measurement_slots = 0usize;
        let mut measurement_ns = DEFAULT_MEASUREMENT_NS;
        let mut initial_phases = Vec::new();
        let mut raw_pulses: Vec<(Stage, f64, f64, f64, f64)> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("two_s ") {
                    two_s = v.trim().parse::<u32>().ok();
                } else if let Some(v) = rest.strip_prefix("measurement_slots ") {
                    measurement_slots = v
                        .trim()
                        .parse()
                        .map_err(|_| bad("bad measurement_slots"))?;
                } else if let Some(v) = rest.strip_prefix("measurement_ns ") {
                    measurement_ns = v.trim().parse().map_err(|_| bad("bad measurement_ns"))?;
                }
            } else if let Some(rest) = line.strip_prefix("initial_phases") {
                initial_phases = rest
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| PulseError::MalformedText(e.to_string()))?;
            } else if let Some(rest) = line.strip_prefix("pulse ") {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                if fields.len() != 6 {
                    return Err(bad("pulse line needs 6 fields"));
                }
                let stage = Stage::parse(fields[0]).ok_or_else(|| bad("unknown stage"))?;
                let m: f64 = fields[2].parse().map_err(|_| bad("bad m"))?;
                let theta: f64 = fields[3].parse().map_err(|_| bad("bad theta"))?;
                let phi: f64 = fields[4].parse().map_err(|_| bad("bad phi"))?;
                let dur: f64 = fields[5].parse().map_err(|_| bad("bad duration"))?;
                raw_pulses.push((stage, m, theta, phi, dur));
            }
        }
        let s = SpinQuantum::new(two_s.ok_or_else(|| bad("missing two_s"))?)?;
        let pulses = raw_pulses
            .into_iter()
            .map(|(stage, m, theta, phi, dur)| {
                let level = (m + s.s()).round() as usize;
                SequencedPulse {
                    stage,
                    pulse: Pulse {
                        level,
                        theta,
                        phi,
                        duration_ns: dur,
                    },
                }
            })
            .collect();
        let seq = Self {
            s,
            pulses,
            initial_phases,
            measurement_slots,
            measurement_ns,
        };
        seq.validate()?;
        Ok(seq)
    }
}

fn sequence_from_decomposition(
    s: SpinQuantum,
    dec: &TwoLevelDecomposition,
    stage: Stage,
) -> PulseSequence {
    // Decomposition order is U = R_1 ... R_K D: in time, the phase layer
    // comes first and R_K is the first physical pulse.
    let pulses = dec
        .rotations
        .iter()
        .rev()
        .filter(|r| r.theta.abs() > ANGLE_EPS)
        .map(|r| {
            debug_assert_eq!(r.upper, r.lower + 1);
            SequencedPulse {
                stage,
                pulse: Pulse::new(r.lower, r.theta, r.phi),
            }
        })
        .collect();
    PulseSequence {
        s,
        pulses,
        initial_phases: dec.phases.clone(),
        measurement_slots: 0,
        measurement_ns: DEFAULT_MEASUREMENT_NS,
    }
}

/// Compiles an arbitrary unitary into adjacent-level pulses and verifies the
/// recomposition.
pub fn compile_unitary(
    s: SpinQuantum,
    u: &CMatrix,
    stage: Stage,
) -> Result<PulseSequence, PulseError> {
    let dec = two_level_decompose(u)?;
    let seq = sequence_from_decomposition(s, &dec, stage);
    let err = diff_mod_phase(&seq.unitary(), u);
    if err > RECOMPOSE_TOL {
        return Err(PulseError::CompilationFailed(err));
    }
    Ok(seq)
}

/// Completes prescribed columns of a unitary with Gram-Schmidt over the
/// canonical basis.
fn complete_unitary(d: usize, fixed: &[(usize, CVector)]) -> CMatrix {
    let mut cols: Vec<Option<CVector>> = vec![None; d];
    for (idx, v) in fixed {
        cols[*idx] = Some(v.clone());
    }
    let mut chosen: Vec<CVector> = fixed.iter().map(|(_, v)| v.clone()).collect();
    let mut candidates = (0..d).map(|i| {
        let mut e = CVector::zeros(d);
        e[i] = Complex64::new(1.0, 0.0);
        e
    });
    for col in cols.iter_mut() {
        if col.is_some() {
            continue;
        }
        loop {
            let mut v = candidates.next().expect("canonical basis spans the space");
            for c in &chosen {
                let overlap = c.dotc(&v);
                v -= c * overlap;
            }
            if v.norm() > 1e-6 {
                v /= Complex64::from(v.norm());
                chosen.push(v.clone());
                *col = Some(v);
                break;
            }
        }
    }
    CMatrix::from_fn(d, d, |i, j| cols[j].as_ref().unwrap()[i])
}

/// Source levels for encoding: |m = -1/2> and |m = +1/2>.
pub fn source_levels(s: SpinQuantum) -> (usize, usize) {
    let l0 = (s.two_s() as usize - 1) / 2;
    (l0, l0 + 1)
}

/// Compiles the encoding alpha|-1/2> + beta|1/2> -> alpha|0_L> + beta|1_L>,
/// exact for every (alpha, beta) including relative phase.
pub fn compile_encoding(words: &CodeWords) -> Result<PulseSequence, PulseError> {
    let s = words.s;
    if !s.is_half_integer() {
        return Err(PulseError::IntegerSpin(s.two_s()));
    }
    let d = s.dim();
    for l in (1..d).step_by(2) {
        if words.zero_l[l].norm() > 1e-12 {
            return Err(PulseError::AlternatingSupport(l));
        }
    }
    for l in (0..d).step_by(2) {
        if words.one_l[l].norm() > 1e-12 {
            return Err(PulseError::AlternatingSupport(l));
        }
    }
    let (l0, l1) = source_levels(s);
    let u = complete_unitary(d, &[(l0, words.zero_l.clone()), (l1, words.one_l.clone())]);
    let seq = compile_unitary(s, &u, Stage::Encoding)?;
    // Linearity check on both basis inputs and one superposition.
    let compiled = seq.unitary();
    let mut worst: f64 = 0.0;
    let inputs = [
        (Complex64::new(1.0, 0.0), Complex64::default()),
        (Complex64::default(), Complex64::new(1.0, 0.0)),
        (
            Complex64::new(0.6, 0.0),
            Complex64::new(0.0, 0.8),
        ),
    ];
    for (alpha, beta) in inputs {
        let mut src = CVector::zeros(d);
        src[l0] = alpha;
        src[l1] = beta;
        let got = &compiled * src;
        let want = CVector::from_fn(d, |i, _| alpha * words.zero_l[i] + beta * words.one_l[i]);
        worst = worst.max((got - want).norm());
    }
    if worst > RECOMPOSE_TOL {
        return Err(PulseError::CompilationFailed(worst));
    }
    Ok(seq)
}

/// Generalized echo report: the compiled sequence maps |m> to
/// e^{i phases[level]} |-m>.
#[derive(Debug, Clone)]
pub struct EchoCompilation {
    pub sequence: PulseSequence,
    /// arg<flip(l)|U|l> per source level l.
    pub level_phases: Vec<f64>,
    pub logical_swaps: usize,
}

/// Compiles e^{-i pi S_x} as S + 1/2 logical |m> <-> |-m> pi-swaps, each
/// adjacency-reduced. Per-level phases are tracked, not corrected.
pub fn compile_echo(s: SpinQuantum) -> Result<EchoCompilation, PulseError> {
    if !s.is_half_integer() {
        return Err(PulseError::IntegerSpin(s.two_s()));
    }
    let d = s.dim();
    let mut seq = PulseSequence::empty(s);
    let mut swaps = 0;
    for l in 0..d / 2 {
        let rot = PlanarRotation {
            lower: l,
            upper: s.flipped_level(l),
            theta: std::f64::consts::PI,
            phi: 0.0,
        };
        for pulse in adjacency_reduce(&rot) {
            seq.pulses.push(SequencedPulse {
                stage: Stage::Echo,
                pulse,
            });
        }
        swaps += 1;
    }
    let u = seq.unitary();
    let mut level_phases = Vec::with_capacity(d);
    for l in 0..d {
        let amp = u[(s.flipped_level(l), l)];
        if (amp.norm() - 1.0).abs() > RECOMPOSE_TOL {
            return Err(PulseError::CompilationFailed((amp.norm() - 1.0).abs()));
        }
        level_phases.push(amp.arg());
    }
    Ok(EchoCompilation {
        sequence: seq,
        level_phases,
        logical_swaps: swaps,
    })
}

/// Basis rotation into measurable |m> levels, with the outcome-to-level
/// assignment.
#[derive(Debug, Clone)]
pub struct BasisRotationCompilation {
    pub sequence: PulseSequence,
    /// assignment[k] = levels holding the |0_L>- and |1_L>-derived error
    /// words of outcome k after the rotation.
    pub assignment: Vec<[usize; 2]>,
}

/// Compiles V with V|e_k^{(c)}> = |2k + c>.
pub fn compile_basis_rotation(
    plan: &RecoveryPlan,
) -> Result<BasisRotationCompilation, PulseError> {
    if plan.rank_reduced {
        return Err(PulseError::RankDeficient);
    }
    let s = plan.s;
    let d = s.dim();
    let mut fixed = Vec::with_capacity(2 * plan.k());
    let mut assignment = Vec::with_capacity(plan.k());
    for (k, pair) in plan.error_words.iter().enumerate() {
        fixed.push((2 * k, pair[0].clone()));
        fixed.push((2 * k + 1, pair[1].clone()));
        assignment.push([2 * k, 2 * k + 1]);
    }
    let u = complete_unitary(d, &fixed);
    let v = u.adjoint();
    let sequence = compile_unitary(s, &v, Stage::BasisRotation)?;
    Ok(BasisRotationCompilation {
        sequence,
        assignment,
    })
}

/// Ancilla spin-1/2 parameters; J_z is the diagonal qudit-ancilla coupling.
#[derive(Debug, Clone, Copy)]
pub struct AncillaParams {
    pub g_a: f64,
    /// rad/us.
    pub j_z: f64,
    pub b_z: f64,
    pub measurement_ns: f64,
}

impl Default for AncillaParams {
    fn default() -> Self {
        // Placeholder coupling; no published value exists for this device
        // parameter.
        Self {
            g_a: 2.0,
            j_z: 50.0,
            b_z: 1.0,
            measurement_ns: DEFAULT_MEASUREMENT_NS,
        }
    }
}

impl AncillaParams {
    pub fn validate(&self) -> Result<(), PulseError> {
        if self.j_z == 0.0 {
            return Err(PulseError::ZeroCoupling);
        }
        if !(40.0..=100.0).contains(&self.measurement_ns) {
            return Err(PulseError::MeasurementWindow(
                self.measurement_ns,
                40.0,
                100.0,
            ));
        }
        Ok(())
    }
}

/// Per-level ancilla probe frequencies Delta_A^{(m)} = g_A mu_B B_z / hbar
/// + J_z m, in rad/us, plus the two-tone pairs for each detection outcome.
#[derive(Debug, Clone)]
pub struct ProbeFrequencies {
    /// Indexed by level.
    pub frequencies: Vec<f64>,
    /// Two-tone pair per outcome, following the basis-rotation assignment.
    pub probe_pairs: Vec<[f64; 2]>,
}

pub fn ancilla_frequencies(
    ancilla: &AncillaParams,
    s: SpinQuantum,
    assignment: &[[usize; 2]],
    linewidth: f64,
) -> Result<ProbeFrequencies, PulseError> {
    ancilla.validate()?;
    let base = ancilla.g_a * MU_B_OVER_HBAR * ancilla.b_z * 1e-6;
    let frequencies: Vec<f64> = (0..s.dim())
        .map(|l| base + ancilla.j_z * s.m_of_level(l))
        .collect();
    let gap = ancilla.j_z.abs();
    if gap < linewidth {
        return Err(PulseError::FrequencyCollision { gap, linewidth });
    }
    let probe_pairs = assignment
        .iter()
        .map(|&[a, b]| [frequencies[a], frequencies[b]])
        .collect();
    Ok(ProbeFrequencies {
        frequencies,
        probe_pairs,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DurationEstimate {
    pub total_ns: f64,
    pub n_pulses: usize,
    pub n_measurements: usize,
    /// Set when the total exceeds the configured fraction of the code's
    /// high-fidelity window.
    pub exceeds_budget: bool,
}

/// Total = pulses * pulse_cost + min(n_measurements, floor(S)) *
/// measurement_cost. `budget_window_us` is the F^2 > 0.99 window; the flag
/// trips when the total exceeds `budget_fraction` of it.
pub fn duration_estimate(
    sequence: &PulseSequence,
    pulse_cost_ns: f64,
    measurement_cost_ns: f64,
    n_measurements: usize,
    budget_window_us: Option<f64>,
    budget_fraction: f64,
) -> DurationEstimate {
    let n_pulses = sequence.pulses.len();
    let max_meas = sequence.s.s().floor() as usize;
    let n_measurements = n_measurements.min(max_meas);
    let total_ns = n_pulses as f64 * pulse_cost_ns + n_measurements as f64 * measurement_cost_ns;
    let exceeds_budget = budget_window_us
        .map(|w| total_ns > budget_fraction * w * 1e3)
        .unwrap_or(false);
    DurationEstimate {
        total_ns,
        n_pulses,
        n_measurements,
        exceeds_budget,
    }
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    /// Entrywise max |Delta| against the target, global phase modded out.
    pub max_error: f64,
    /// Unitarity defect of each stage's partial product.
    pub per_stage: Vec<(Stage, f64)>,
}

/// Recomposes the sequence and compares it to the target modulo global
/// phase.
pub fn verify_sequence(sequence: &PulseSequence, target: &CMatrix) -> VerificationReport {
    let d = sequence.s.dim();
    let max_error = diff_mod_phase(&sequence.unitary(), target);
    let mut per_stage = Vec::new();
    for (stage, _) in sequence.stage_counts() {
        let mut u = CMatrix::identity(d, d);
        for sp in sequence.pulses.iter().filter(|sp| sp.stage == stage) {
            u = sp.pulse.matrix(d) * u;
        }
        per_stage.push((stage, unitarity_defect(&u)));
    }
    VerificationReport {
        max_error,
        per_stage,
    }
}

/// Regression fixture: published S = 5/2 encoding angles (radians over pi).
pub const ENCODING_THETAS_S52: [f64; 5] = [0.342, 0.560, 0.552, -0.085, 1.531];
pub const ENCODING_PHIS_S52: [f64; 5] = [0.339, 0.562, 0.888, -0.440, 1.538];
