//! Stage implementations: bath generation, ensemble decay, code
//! optimization, evaluation, and pulse compilation, with resumable
//! persistence and a single-writer manifest.

use crate::config::ExperimentConfig;
use crate::manifest::Manifest;
use num_complex::Complex64;
use quditqec::bath::sample_bath_geometry;
use quditqec::cce::{config_seed, ensemble_average_seeded, DecoherenceMatrix};
use quditqec::linalg::{CMatrix, CVector};
use quditqec::pulse::{
    ancilla_frequencies, compile_basis_rotation, compile_echo, compile_encoding, compile_unitary,
    duration_estimate, verify_sequence, AncillaParams, PulseSequence, Stage,
};
use quditqec::qec::{
    build_detection_recovery, gain_curve, optimize_code, recovered_fidelities,
    spin_binomial_baseline, theta_sweep, CodePlan, CodeWords, ErrorOperatorSet, RecoveryPlan,
};
use quditqec::spin::{sz_power_diagonal, PureState, SpinQuantum};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numerical(e.to_string())
            }
        }
    )*};
}
numerical_from!(
    std::io::Error,
    quditqec::bath::BathError,
    quditqec::cce::CceError,
    quditqec::qec::QecError,
    quditqec::pulse::PulseError,
    quditqec::spin::SpinError
);

pub struct Runner {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub manifest: Manifest,
    hash: String,
    /// In-memory cache of per-configuration matrices, keyed by 2S.
    matrices: BTreeMap<u32, Vec<DecoherenceMatrix>>,
}

fn spin_list(cfg: &ExperimentConfig) -> Vec<u32> {
    // Spin 1/2 is always carried along as the uncorrected reference.
    let mut list = cfg.qudit.two_s.clone();
    list.push(1);
    list.sort_unstable();
    list.dedup();
    list
}

fn uniform_state(d: usize) -> PureState {
    PureState::from_unnormalized(CVector::from_element(d, Complex64::new(1.0, 0.0)))
        .expect("uniform state is normalizable")
}

fn t_opt_tag(t: f64) -> String {
    format!("{t}").replace('.', "p")
}

impl Runner {
    pub fn new(cfg: ExperimentConfig, out: PathBuf) -> Result<Self, CliError> {
        cfg.validate().map_err(CliError::Validation)?;
        fs::create_dir_all(&out)?;
        let hash = cfg.content_hash();
        let manifest = Manifest::load_or_new(&out, &hash)?;
        Ok(Self {
            cfg,
            out,
            manifest,
            hash,
            matrices: BTreeMap::new(),
        })
    }

    fn write_artifact(&mut self, rel: &str, content: &str) -> Result<(), CliError> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, content)?;
        self.manifest.add_artifact(rel);
        Ok(())
    }

    fn finish_stage(&mut self, stage: &str, started: Instant) -> Result<(), CliError> {
        self.manifest.add_timing(stage, started.elapsed().as_secs_f64());
        self.manifest.save(&self.out)?;
        Ok(())
    }

    /// Requires persisted artifacts in this directory to belong to the same
    /// config. Reads the manifest on disk: upstream stages in the same
    /// invocation may already have rewritten it.
    fn check_hash(&self) -> Result<(), CliError> {
        let path = self.out.join(crate::manifest::MANIFEST_FILE);
        if !path.exists() {
            return Err(CliError::Validation(
                "no manifest in the output directory; run upstream stages first".into(),
            ));
        }
        let disk = Manifest::parse(&fs::read_to_string(path)?);
        if disk.config_hash != self.hash {
            return Err(CliError::Validation(
                "artifact directory was produced by a different config (hash mismatch)".into(),
            ));
        }
        Ok(())
    }

    fn write_resolved_config(&mut self) -> Result<(), CliError> {
        let mut canonical = self.cfg.clone();
        canonical.output.dir = String::new();
        canonical.output.workers = 0;
        let text =
            toml::to_string(&canonical).map_err(|e| CliError::Numerical(e.to_string()))?;
        self.write_artifact("config.resolved.toml", &text)
    }

    pub fn gen_bath(&mut self) -> Result<(), CliError> {
        let started = Instant::now();
        self.write_resolved_config()?;
        let bath = self.cfg.bath.clone();
        for i in 0..bath.n_configurations {
            let rel = format!("bath/config_{i:03}.txt");
            if self.out.join(&rel).exists() && self.manifest.artifacts.contains(&rel) {
                continue;
            }
            let seed = config_seed(bath.master_seed, i as u64);
            let geometry =
                sample_bath_geometry(seed, bath.n_spins, bath.radius, bath.min_distance)?;
            self.write_artifact(&rel, &geometry.to_text())?;
        }
        self.finish_stage("gen-bath", started)
    }

    fn matrix_rel(&self, two_s: u32, idx: usize) -> String {
        format!("matrices/s{two_s}_cfg{idx:03}.txt")
    }

    /// Per-configuration decoherence matrices for one spin, from cache,
    /// disk, or fresh computation.
    fn matrices_for(&mut self, two_s: u32) -> Result<Vec<DecoherenceMatrix>, CliError> {
        if let Some(ms) = self.matrices.get(&two_s) {
            return Ok(ms.clone());
        }
        let n_cfg = self.cfg.bath.n_configurations;
        let times = self.cfg.times();
        let all_on_disk = (0..n_cfg).all(|i| self.out.join(self.matrix_rel(two_s, i)).exists());
        let ms = if all_on_disk {
            let mut loaded = Vec::with_capacity(n_cfg);
            for i in 0..n_cfg {
                let text = fs::read_to_string(self.out.join(self.matrix_rel(two_s, i)))?;
                let m = DecoherenceMatrix::from_text(&text)?;
                if m.times.len() != times.len() {
                    return Err(CliError::Validation(format!(
                        "persisted matrix {} has a stale grid",
                        self.matrix_rel(two_s, i)
                    )));
                }
                loaded.push(m);
            }
            loaded
        } else {
            let s = SpinQuantum::new(two_s)?;
            let spec = self.cfg.ensemble_spec();
            let seeds: Vec<u64> = (0..n_cfg as u64)
                .map(|i| config_seed(spec.master_seed, i))
                .collect();
            let result = ensemble_average_seeded(
                &seeds,
                &spec,
                &self.cfg.params().map_err(CliError::Validation)?,
                &self.cfg.constants(),
                s,
                &self.cfg.schedule(),
                &times,
                &uniform_state(s.dim()),
                &self.cfg.cce_options(),
            )?;
            if result.guarded_total > 0 {
                self.manifest.add_warning(format!(
                    "cce guarded divisions for two_s={two_s}: {}",
                    result.guarded_total
                ));
            }
            result.per_config
        };
        self.matrices.insert(two_s, ms.clone());
        Ok(ms)
    }

    pub fn decay(&mut self) -> Result<(), CliError> {
        let started = Instant::now();
        self.write_resolved_config()?;
        let times = self.cfg.times();
        for two_s in spin_list(&self.cfg) {
            let matrices = self.matrices_for(two_s)?;
            for (i, m) in matrices.iter().enumerate() {
                let rel = self.matrix_rel(two_s, i);
                if !self.out.join(&rel).exists() {
                    self.write_artifact(&rel, &m.to_text())?;
                } else {
                    self.manifest.add_artifact(&rel);
                }
            }
            let s = SpinQuantum::new(two_s)?;
            let psi = uniform_state(s.dim());
            let f2s: Vec<Vec<f64>> = matrices
                .iter()
                .map(|m| m.fidelities(&psi))
                .collect::<Result<_, _>>()?;
            let n_cfg = f2s.len() as f64;
            let mut table = format!(
                "# decay two_s={two_s} schedule={}\n# t_us mean_f2 std_f2 n_configs\n",
                self.cfg.schedule.kind
            );
            for (ti, &t) in times.iter().enumerate() {
                let mean = f2s.iter().map(|f| f[ti]).sum::<f64>() / n_cfg;
                let var =
                    f2s.iter().map(|f| (f[ti] - mean).powi(2)).sum::<f64>() / n_cfg;
                writeln!(
                    table,
                    "{t:.16e} {mean:.16e} {:.16e} {}",
                    var.sqrt(),
                    f2s.len()
                )
                .unwrap();
            }
            self.write_artifact(
                &format!("decay/s{two_s}_{}.csv", self.cfg.schedule.kind),
                &table,
            )?;
        }
        self.finish_stage("decay", started)
    }

    /// Elementwise ensemble mean of the per-configuration matrices; convex
    /// combinations preserve every decoherence-matrix invariant.
    fn mean_matrix(&mut self, two_s: u32) -> Result<DecoherenceMatrix, CliError> {
        let matrices = self.matrices_for(two_s)?;
        let n = matrices.len() as f64;
        let first = &matrices[0];
        let values: Vec<CMatrix> = (0..first.times.len())
            .map(|ti| {
                let mut acc = first.values[ti].clone();
                for m in &matrices[1..] {
                    acc += &m.values[ti];
                }
                acc.scale(1.0 / n)
            })
            .collect();
        let mean = DecoherenceMatrix {
            s: first.s,
            schedule: first.schedule.clone(),
            order: first.order,
            seed: self.cfg.bath.master_seed,
            coeff_hash: 0,
            times: first.times.clone(),
            values,
            guarded: matrices.iter().map(|m| m.guarded).sum(),
        };
        mean.check_invariants()?;
        Ok(mean)
    }

    fn bare_plan(s: SpinQuantum) -> CodePlan {
        let d = s.dim();
        let (l0, l1) = quditqec::pulse::source_levels(s);
        let mut zero_l = CVector::zeros(d);
        let mut one_l = CVector::zeros(d);
        zero_l[l0] = Complex64::new(1.0, 0.0);
        one_l[l1] = Complex64::new(1.0, 0.0);
        CodePlan {
            errors: ErrorOperatorSet {
                s,
                diagonals: vec![CVector::from_element(d, Complex64::new(1.0, 0.0))],
                optimization_time: 0.0,
                residual_norms: vec![],
                converged: true,
            },
            words: CodeWords {
                s,
                zero_l,
                one_l,
                kl_residual: 0.0,
                flagged: false,
            },
        }
    }

    fn binomial_plan(s: SpinQuantum) -> Result<CodePlan, CliError> {
        let words = spin_binomial_baseline(s)?;
        Ok(CodePlan {
            errors: ErrorOperatorSet {
                s,
                diagonals: (0..quditqec::qec::operator_count(s) as u32)
                    .map(|k| sz_power_diagonal(s, k))
                    .collect(),
                optimization_time: 0.0,
                residual_norms: vec![],
                converged: true,
            },
            words,
        })
    }

    /// Plan tags per spin: one per t_opt in numerical mode, a single
    /// mode-named plan otherwise.
    fn plan_tags(&self) -> Vec<String> {
        match self.cfg.code.mode.as_str() {
            "numerical" => self.cfg.code.t_opt_us.iter().map(|&t| t_opt_tag(t)).collect(),
            mode => vec![mode.to_string()],
        }
    }

    fn code_spins(&self) -> Vec<u32> {
        spin_list(&self.cfg)
            .into_iter()
            .filter(|two_s| two_s % 2 == 1)
            .collect()
    }

    pub fn optimize(&mut self) -> Result<(), CliError> {
        let started = Instant::now();
        self.write_resolved_config()?;
        for two_s in self.code_spins() {
            let s = SpinQuantum::new(two_s)?;
            match self.cfg.code.mode.as_str() {
                "numerical" => {
                    let mean = self.mean_matrix(two_s)?;
                    for &t_opt in &self.cfg.code.t_opt_us.clone() {
                        let plan = match optimize_code(s, &mean, t_opt) {
                            Ok(p) => p,
                            Err(e) => {
                                self.manifest.add_warning(format!(
                                    "optimizer failed for two_s={two_s} t_opt={t_opt}: {e}"
                                ));
                                continue;
                            }
                        };
                        if plan.words.flagged {
                            self.manifest.add_warning(format!(
                                "KL residual {:.3e} above threshold for two_s={two_s} t_opt={t_opt}",
                                plan.words.kl_residual
                            ));
                        }
                        if !plan.errors.converged {
                            self.manifest.add_warning(format!(
                                "error fit hit the iteration cap for two_s={two_s} t_opt={t_opt}"
                            ));
                        }
                        self.write_artifact(
                            &format!("plans/s{two_s}_topt{}.txt", t_opt_tag(t_opt)),
                            &plan.to_text(),
                        )?;
                    }
                }
                "spin-binomial" => {
                    let plan = Self::binomial_plan(s)?;
                    self.write_artifact(
                        &format!("plans/s{two_s}_toptspin-binomial.txt"),
                        &plan.to_text(),
                    )?;
                }
                _ => {
                    let plan = Self::bare_plan(s);
                    self.write_artifact(
                        &format!("plans/s{two_s}_toptbare.txt"),
                        &plan.to_text(),
                    )?;
                }
            }
        }
        self.finish_stage("optimize", started)
    }

    fn load_plan(&self, two_s: u32, tag: &str) -> Result<CodePlan, CliError> {
        let rel = format!("plans/s{two_s}_topt{tag}.txt");
        let text = fs::read_to_string(self.out.join(&rel))
            .map_err(|_| CliError::Validation(format!("missing plan {rel}; run optimize first")))?;
        Ok(CodePlan::from_text(&text)?)
    }

    pub fn evaluate(&mut self) -> Result<(), CliError> {
        let started = Instant::now();
        self.check_hash()?;
        let times = self.cfg.times();
        let theta_pts = self.cfg.theta.n_points;
        let thetas: Vec<f64> = (0..theta_pts)
            .map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / (theta_pts - 1) as f64)
            .collect();

        // Uncorrected spin-1/2 reference, per configuration.
        let half = self.matrices_for(1)?;
        let psi_half = uniform_state(2);
        let f2_half: Vec<Vec<f64>> = half
            .iter()
            .map(|m| m.fidelities(&psi_half))
            .collect::<Result<_, _>>()?;
        {
            let n = f2_half.len() as f64;
            let mut table =
                String::from("# uncorrected spin-1/2 reference\n# t_us mean_f2 std_f2\n");
            for (ti, &t) in times.iter().enumerate() {
                let mean = f2_half.iter().map(|f| f[ti]).sum::<f64>() / n;
                let var = f2_half.iter().map(|f| (f[ti] - mean).powi(2)).sum::<f64>() / n;
                writeln!(table, "{t:.16e} {mean:.16e} {:.16e}", var.sqrt()).unwrap();
            }
            self.write_artifact("eval/f2_reference.csv", &table)?;
        }

        for two_s in self.code_spins() {
            let matrices = self.matrices_for(two_s)?;
            for tag in self.plan_tags() {
                let plan = match self.load_plan(two_s, &tag) {
                    Ok(p) => p,
                    Err(CliError::Validation(msg)) => {
                        self.manifest.add_warning(msg);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let recovery = build_detection_recovery(&plan.errors, &plan.words)?;
                let psi = plan.words.logical_state(std::f64::consts::FRAC_PI_4);
                let rec_f2: Vec<Vec<f64>> = matrices
                    .iter()
                    .map(|m| recovered_fidelities(m, &psi, &recovery))
                    .collect::<Result<_, _>>()?;
                let bare_f2: Vec<Vec<f64>> = matrices
                    .iter()
                    .map(|m| m.fidelities(&psi))
                    .collect::<Result<_, _>>()?;

                let n = rec_f2.len() as f64;
                let mut table = format!(
                    "# recovered fidelity two_s={two_s} plan={tag}\n# t_us mean_recovered_f2 std_recovered_f2 mean_bare_f2\n"
                );
                for (ti, &t) in times.iter().enumerate() {
                    let mean = rec_f2.iter().map(|f| f[ti]).sum::<f64>() / n;
                    let var =
                        rec_f2.iter().map(|f| (f[ti] - mean).powi(2)).sum::<f64>() / n;
                    let bare = bare_f2.iter().map(|f| f[ti]).sum::<f64>() / n;
                    writeln!(
                        table,
                        "{t:.16e} {mean:.16e} {:.16e} {bare:.16e}",
                        var.sqrt()
                    )
                    .unwrap();
                }
                self.write_artifact(&format!("eval/f2_s{two_s}_topt{tag}.csv"), &table)?;

                let gains = gain_curve(&times, &rec_f2, &f2_half)?;
                let mut table = format!(
                    "# gain two_s={two_s} plan={tag}\n# t_us mean_gain std_gain\n"
                );
                for (ti, &t) in times.iter().enumerate() {
                    match (gains.mean[ti], gains.std[ti]) {
                        (Some(m), Some(s)) => {
                            writeln!(table, "{t:.16e} {m:.16e} {s:.16e}").unwrap()
                        }
                        _ => writeln!(table, "{t:.16e} na na").unwrap(),
                    }
                }
                self.write_artifact(&format!("eval/gain_s{two_s}_topt{tag}.csv"), &table)?;

                let mean = self.mean_matrix(two_s)?;
                let sweep = theta_sweep(&plan.words, &mean, &recovery, &thetas)?;
                let mut table = format!(
                    "# theta sweep two_s={two_s} plan={tag}\n# theta_rad t_us recovered_f2\n"
                );
                for (qi, &theta) in sweep.thetas.iter().enumerate() {
                    for (ti, &t) in sweep.times.iter().enumerate() {
                        writeln!(table, "{theta:.16e} {t:.16e} {:.16e}", sweep.f2[qi][ti])
                            .unwrap();
                    }
                }
                self.write_artifact(&format!("eval/theta_s{two_s}_topt{tag}.csv"), &table)?;
            }
        }
        self.finish_stage("evaluate", started)
    }

    fn is_bare(words: &CodeWords) -> bool {
        let (l0, l1) = quditqec::pulse::source_levels(words.s);
        (words.zero_l[l0].norm() - 1.0).abs() < 1e-12
            && (words.one_l[l1].norm() - 1.0).abs() < 1e-12
    }

    /// Largest grid time with mean recovered F^2 >= 0.99, from the persisted
    /// evaluation table.
    fn f2_window_us(&self, two_s: u32, tag: &str) -> Option<f64> {
        let rel = format!("eval/f2_s{two_s}_topt{tag}.csv");
        let text = fs::read_to_string(self.out.join(rel)).ok()?;
        let mut window = None;
        for line in text.lines().filter(|l| !l.starts_with('#')) {
            let mut cols = line.split_whitespace();
            let t: f64 = cols.next()?.parse().ok()?;
            let mean: f64 = cols.next()?.parse().ok()?;
            if mean >= 0.99 {
                window = Some(t);
            }
        }
        window
    }

    pub fn compile(&mut self) -> Result<(), CliError> {
        let started = Instant::now();
        self.check_hash()?;
        let pulse_cfg = self.cfg.pulse.clone();
        for two_s in self.code_spins() {
            let s = SpinQuantum::new(two_s)?;
            for tag in self.plan_tags() {
                let plan = match self.load_plan(two_s, &tag) {
                    Ok(p) => p,
                    Err(CliError::Validation(msg)) => {
                        self.manifest.add_warning(msg);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let recovery = build_detection_recovery(&plan.errors, &plan.words)?;
                match self.compile_plan(s, &tag, &plan, &recovery, &pulse_cfg) {
                    Ok(()) => {}
                    Err(CliError::Numerical(msg)) => {
                        self.manifest.add_warning(format!(
                            "compilation failed for two_s={two_s} plan={tag}: {msg}"
                        ));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        self.finish_stage("compile", started)
    }

    fn compile_plan(
        &mut self,
        s: SpinQuantum,
        tag: &str,
        plan: &CodePlan,
        recovery: &RecoveryPlan,
        pulse_cfg: &crate::config::PulseSection,
    ) -> Result<(), CliError> {
        let two_s = s.two_s();
        let with_costs = |mut seq: PulseSequence| {
            for sp in seq.pulses.iter_mut() {
                sp.pulse.duration_ns = pulse_cfg.pulse_ns;
            }
            seq.measurement_ns = pulse_cfg.measurement_ns;
            seq
        };
        let encoding = if Self::is_bare(&plan.words) {
            PulseSequence::empty(s)
        } else {
            with_costs(compile_encoding(&plan.words)?)
        };
        let echo = compile_echo(s)?;
        let echo_seq = with_costs(echo.sequence.clone());
        let basis = compile_basis_rotation(recovery)?;
        let basis_seq = with_costs(basis.sequence.clone());
        let recoveries: Vec<PulseSequence> = recovery
            .recoveries
            .iter()
            .map(|r| compile_unitary(s, r, Stage::Recovery).map(&with_costs))
            .collect::<Result<_, _>>()?;

        let mut report = format!("# pulse report two_s={two_s} plan={tag}\n");
        let mut total_pulses = 0usize;
        for (name, seq) in [("encoding", &encoding), ("echo", &echo_seq), ("basis-rotation", &basis_seq)] {
            self.write_artifact(
                &format!("pulses/s{two_s}_topt{tag}_{name}.txt"),
                &seq.to_text(),
            )?;
            total_pulses += seq.pulses.len();
            let err = verify_sequence(seq, &seq.unitary()).max_error;
            writeln!(report, "stage {name} pulses {} verify {err:.3e}", seq.pulses.len())
                .unwrap();
        }
        let mut worst_recovery = 0usize;
        for (k, seq) in recoveries.iter().enumerate() {
            self.write_artifact(
                &format!("pulses/s{two_s}_topt{tag}_recovery{k}.txt"),
                &seq.to_text(),
            )?;
            worst_recovery = worst_recovery.max(seq.pulses.len());
            writeln!(report, "stage recovery{k} pulses {}", seq.pulses.len()).unwrap();
        }
        total_pulses += worst_recovery;
        for (l, phase) in echo.level_phases.iter().enumerate() {
            writeln!(report, "echo_phase level {l} {phase:.16e}").unwrap();
        }

        let ancilla = AncillaParams {
            g_a: pulse_cfg.ancilla_g,
            j_z: pulse_cfg.ancilla_jz,
            b_z: self.cfg.qudit.b_z,
            measurement_ns: pulse_cfg.measurement_ns,
        };
        let probes =
            ancilla_frequencies(&ancilla, s, &basis.assignment, pulse_cfg.ancilla_linewidth)?;
        for (l, f) in probes.frequencies.iter().enumerate() {
            writeln!(report, "probe_frequency level {l} {f:.16e}").unwrap();
        }
        for (k, pair) in probes.probe_pairs.iter().enumerate() {
            writeln!(
                report,
                "probe_pair outcome {k} {:.16e} {:.16e}",
                pair[0], pair[1]
            )
            .unwrap();
        }

        // Worst-case cycle: all stages, floor(S) measurements, one recovery.
        let mut cycle = PulseSequence::empty(s);
        for seq in [&encoding, &echo_seq, &basis_seq] {
            for sp in &seq.pulses {
                cycle.pulses.push(sp.clone());
            }
        }
        let n_meas = s.s().floor() as usize;
        let window = self.f2_window_us(two_s, tag);
        let est = duration_estimate(
            &cycle,
            pulse_cfg.pulse_ns,
            pulse_cfg.measurement_ns,
            n_meas,
            window,
            pulse_cfg.budget_fraction,
        );
        let total_ns =
            total_pulses as f64 * pulse_cfg.pulse_ns + est.n_measurements as f64 * pulse_cfg.measurement_ns;
        writeln!(report, "total_pulses {total_pulses}").unwrap();
        writeln!(report, "measurements {}", est.n_measurements).unwrap();
        writeln!(report, "duration_ns {total_ns:.16e}").unwrap();
        match window {
            Some(w) => writeln!(report, "f2_window_us {w:.16e}").unwrap(),
            None => writeln!(report, "f2_window_us na").unwrap(),
        }
        let exceeds = window
            .map(|w| total_ns > pulse_cfg.budget_fraction * w * 1e3)
            .unwrap_or(false);
        writeln!(report, "exceeds_budget {exceeds}").unwrap();
        if exceeds {
            self.manifest.add_warning(format!(
                "cycle duration exceeds budget for two_s={two_s} plan={tag}"
            ));
        }
        self.write_artifact(&format!("pulses/s{two_s}_topt{tag}_report.txt"), &report)
    }

    pub fn run_all(&mut self) -> Result<(), CliError> {
        self.gen_bath()?;
        self.decay()?;
        self.optimize()?;
        self.evaluate()?;
        self.compile()
    }
}
