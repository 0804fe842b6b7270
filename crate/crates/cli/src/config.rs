//! Experiment configuration: TOML with full defaulting, CLI overrides, and
//! a stable content hash used for artifact consistency checks.

use quditqec::bath::{PhysicalConstants, QuditHamiltonianParams, KB_OVER_HBAR_PER_K};
use quditqec::cce::{CceOptions, EnsembleSpec, EvolutionSchedule};
use quditqec::spin::SpinQuantum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub qudit: QuditSection,
    pub bath: BathSection,
    pub schedule: ScheduleSection,
    pub cce: CceSection,
    pub grid: GridSection,
    pub code: CodeSection,
    pub theta: ThetaSection,
    pub pulse: PulseSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            qudit: QuditSection::default(),
            bath: BathSection::default(),
            schedule: ScheduleSection::default(),
            cce: CceSection::default(),
            grid: GridSection::default(),
            code: CodeSection::default(),
            theta: ThetaSection::default(),
            pulse: PulseSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct QuditSection {
    /// 2S for every qudit simulated; S = 1/2 is always added as reference.
    pub two_s: Vec<u32>,
    /// Zero-field splitting D in rad/us.
    pub d_zfs: f64,
    /// Static field in tesla.
    pub b_z: f64,
    pub g_z: f64,
}

impl Default for QuditSection {
    fn default() -> Self {
        Self {
            two_s: vec![1, 3, 5, 7, 9],
            d_zfs: KB_OVER_HBAR_PER_K,
            b_z: 1.0,
            g_z: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BathSection {
    pub n_spins: usize,
    /// Angstrom.
    pub radius: f64,
    /// Angstrom.
    pub min_distance: f64,
    pub n_configurations: usize,
    pub master_seed: u64,
}

impl Default for BathSection {
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

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// "free" or "echo".
    pub kind: String,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            kind: "echo".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CceSection {
    pub order: u8,
    /// Optional pair coupling cutoff (rad/us); pairs below it are skipped.
    pub pair_cutoff: Option<f64>,
}

impl Default for CceSection {
    fn default() -> Self {
        Self {
            order: 2,
            pair_cutoff: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Defaults depend on the schedule: 1 us / 201 points for free decay,
    /// 400 us / 401 points for echo.
    pub t_max_us: Option<f64>,
    pub n_points: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            t_max_us: None,
            n_points: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CodeSection {
    /// "numerical", "spin-binomial", or "bare".
    pub mode: String,
    pub t_opt_us: Vec<f64>,
}

impl Default for CodeSection {
    fn default() -> Self {
        Self {
            mode: "numerical".into(),
            t_opt_us: vec![10.0, 50.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaSection {
    /// Grid points over [0, pi/2].
    pub n_points: usize,
}

impl Default for ThetaSection {
    fn default() -> Self {
        Self { n_points: 9 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub pulse_ns: f64,
    pub measurement_ns: f64,
    pub ancilla_g: f64,
    /// rad/us.
    pub ancilla_jz: f64,
    /// Probe resolution floor in rad/us.
    pub ancilla_linewidth: f64,
    /// Duration budget as a fraction of the F^2 > 0.99 window.
    pub budget_fraction: f64,
}

impl Default for PulseSection {
    fn default() -> Self {
        Self {
            pulse_ns: 10.0,
            measurement_ns: 70.0,
            ancilla_g: 2.0,
            ancilla_jz: 50.0,
            ancilla_linewidth: 1.0,
            budget_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// 0 means the rayon default.
    pub workers: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    pub fn validate(&self) -> Result<(), String> {
        for &two_s in &self.qudit.two_s {
            SpinQuantum::new(two_s).map_err(|e| e.to_string())?;
        }
        if self.qudit.two_s.is_empty() {
            return Err("qudit.two_s must list at least one spin".into());
        }
        if self.qudit.d_zfs <= 0.0 || self.qudit.b_z <= 0.0 {
            return Err("qudit.d_zfs and qudit.b_z must be positive".into());
        }
        if !matches!(self.schedule.kind.as_str(), "free" | "echo") {
            return Err(format!("unknown schedule kind '{}'", self.schedule.kind));
        }
        if !matches!(self.cce.order, 1 | 2) {
            return Err("cce.order must be 1 or 2".into());
        }
        if !matches!(self.code.mode.as_str(), "numerical" | "spin-binomial" | "bare") {
            return Err(format!("unknown code mode '{}'", self.code.mode));
        }
        if self.bath.n_spins == 0 || self.bath.n_configurations == 0 {
            return Err("bath.n_spins and bath.n_configurations must be positive".into());
        }
        if self.bath.min_distance <= 0.0 || self.bath.radius <= self.bath.min_distance {
            return Err("bath radius must exceed the positive minimum distance".into());
        }
        if let Some(n) = self.grid.n_points {
            if n < 2 {
                return Err("grid.n_points must be at least 2".into());
            }
        }
        if let Some(t) = self.grid.t_max_us {
            if t <= 0.0 {
                return Err("grid.t_max_us must be positive".into());
            }
        }
        if self.code.t_opt_us.is_empty() && self.code.mode == "numerical" {
            return Err("numerical code mode needs at least one t_opt".into());
        }
        let t_max = self.t_max_us();
        for &t in &self.code.t_opt_us {
            if t <= 0.0 || t > t_max {
                return Err(format!("t_opt {t} us outside the (0, {t_max}] grid"));
            }
        }
        if self.theta.n_points < 2 {
            return Err("theta.n_points must be at least 2".into());
        }
        if self.pulse.pulse_ns <= 0.0 || self.pulse.measurement_ns <= 0.0 {
            return Err("pulse costs must be positive".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> EvolutionSchedule {
        match self.schedule.kind.as_str() {
            "free" => EvolutionSchedule::free_decay(),
            _ => EvolutionSchedule::hahn_echo(),
        }
    }

    pub fn t_max_us(&self) -> f64 {
        self.grid.t_max_us.unwrap_or(match self.schedule.kind.as_str() {
            "free" => 1.0,
            _ => 400.0,
        })
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_points.unwrap_or(match self.schedule.kind.as_str() {
            "free" => 201,
            _ => 401,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        let (t_max, n) = (self.t_max_us(), self.n_points());
        (0..n)
            .map(|i| t_max * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants::with_g_factor(self.qudit.g_z)
    }

    pub fn params(&self) -> Result<QuditHamiltonianParams, String> {
        QuditHamiltonianParams::new(self.qudit.d_zfs, self.qudit.b_z, &self.constants())
            .map_err(|e| e.to_string())
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        EnsembleSpec {
            n_spins: self.bath.n_spins,
            radius: self.bath.radius,
            min_distance: self.bath.min_distance,
            n_configurations: self.bath.n_configurations,
            master_seed: self.bath.master_seed,
        }
    }

    pub fn cce_options(&self) -> CceOptions {
        CceOptions {
            order: self.cce.order,
            pair_cutoff: self.cce.pair_cutoff,
        }
    }

    /// SHA-256 over the canonical serialization, output/worker settings
    /// excluded so they never affect numeric artifacts.
    pub fn content_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSection {
            dir: String::new(),
            workers: 0,
        };
        let text = toml::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
