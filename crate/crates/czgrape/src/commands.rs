//! Command implementations shared by the binary and the tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use czgrape_core::grape::{measure_step, run_optimization_observed, step_gradient, IterationRecord};
use czgrape_core::lab::{chevron_scan, fit_chevron, LabEmulator, MeasurementMode};
use czgrape_core::pulse::PulseSequence;
use czgrape_core::rad_per_ns_to_mhz;
use czgrape_core::rb::{build_clifford_group, rb_fidelity, run_rb_with, CzImpl};
use czgrape_core::system::ideal_cz4;
use czgrape_core::tomography::{
    default_fit_options, ideal_cz_chi, operator_fidelity, powell_fit, principal_operator, process_fidelity,
};

use crate::artifacts::{
    self, decay_json, matrix_to_json, write_chevron_csv, write_fidelity_csv, write_json, write_pulse, write_rb_csv,
    ChevronSummary, ChiFile, Provenance, RbSummary, RecordJson, TrajectoryFile, TRAJECTORY_FORMAT,
};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::exec::PoolExecutor;

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct GlobalOptions {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub dry_run: bool,
    pub output_dir: Option<PathBuf>,
}

/// A loaded configuration with command-line overrides applied.
pub struct Session {
    pub config: RunConfig,
    pub output_dir: PathBuf,
    pub dry_run: bool,
    pub exec: PoolExecutor,
}

impl Session {
    pub fn new(mut config: RunConfig, opts: &GlobalOptions) -> Result<Self, CliError> {
        if let Some(seed) = opts.seed {
            config.seed = seed;
        }
        let output_dir = opts.output_dir.clone().unwrap_or_else(|| config.output_dir.clone());
        let exec = PoolExecutor::new(opts.jobs).map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        Ok(Self { config, output_dir, dry_run: opts.dry_run, exec })
    }

    pub fn load(path: &Path, opts: &GlobalOptions) -> Result<Self, CliError> {
        Self::new(RunConfig::load(path)?, opts)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { config_hash: self.config.hash(), seed: self.config.seed }
    }

    pub fn lab(&self) -> Result<LabEmulator<PoolExecutor>, CliError> {
        Ok(LabEmulator::with_executor(
            self.config.model()?,
            self.config.distortion.model(),
            self.config.measurement()?,
            self.exec.clone(),
        )?)
    }

    fn pulse(&self, path: Option<&Path>) -> Result<PulseSequence, CliError> {
        match path {
            Some(p) => artifacts::read_pulse(p),
            None => self.config.initial_pulse(),
        }
    }

    /// Creates the output directory, or reports what would be written.
    fn prepare(&self, out: &mut dyn Write, files: &[&str]) -> Result<bool, CliError> {
        if self.dry_run {
            writeln!(out, "dry run: configuration {} is valid", self.config.hash())?;
            for f in files {
                writeln!(out, "  would write {}", self.output_dir.join(f).display())?;
            }
            return Ok(false);
        }
        fs::create_dir_all(&self.output_dir)?;
        Ok(true)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn print_row(out: &mut dyn Write, r: &IterationRecord) {
    let _ = writeln!(
        out,
        "{:>4}  {:>8}  {:>8}  {:>8}  {:>10}  {:>8.1}",
        r.step,
        fmt_opt(r.f_chi),
        fmt_opt(r.f_uexp),
        fmt_opt(mean(&r.f_rho)),
        r.grad_norm.map_or_else(|| "-".to_string(), |g| format!("{g:.3e}")),
        r.elapsed_s
    );
}

/// Result of `optimize`: the trajectory and where it was written.
pub struct OptimizeOutcome {
    pub records: Vec<IterationRecord>,
    pub trajectory_path: Option<PathBuf>,
}

pub fn optimize(session: &Session, out: &mut dyn Write) -> Result<OptimizeOutcome, CliError> {
    let cfg = &session.config;
    let opt = cfg.optimizer()?;
    let initial = cfg.initial_pulse()?;
    if !session.prepare(out, &["trajectory.json", "fidelity.csv", "pulses/pulse_step_XX.txt"])? {
        writeln!(out, "  {} segments of {} ns, up to {} steps", initial.len(), initial.tau(), opt.max_steps)?;
        return Ok(OptimizeOutcome { records: Vec::new(), trajectory_path: None });
    }
    let prov = session.provenance();
    let model = cfg.model()?;
    let mut lab = session.lab()?;
    writeln!(out, "{:>4}  {:>8}  {:>8}  {:>8}  {:>10}  {:>8}", "step", "F_chi", "F_uexp", "F_rho", "|grad|", "t[s]")?;
    let start = Instant::now();
    let result = run_optimization_observed(
        &opt,
        &model,
        &mut lab,
        &initial,
        || start.elapsed().as_secs_f64(),
        |r| print_row(out, r),
    );
    let (records, error) = match result {
        Ok(r) => (r, None),
        Err(f) => (f.trajectory, Some(f.error)),
    };
    let pulses = session.output_dir.join("pulses");
    fs::create_dir_all(&pulses)?;
    for r in &records {
        write_pulse(&pulses.join(format!("pulse_step_{:02}.txt", r.step)), &r.pulse, &prov)?;
    }
    write_fidelity_csv(&session.output_dir.join("fidelity.csv"), &prov, &records)?;
    let trajectory = TrajectoryFile {
        format: TRAJECTORY_FORMAT.to_string(),
        provenance: prov,
        config_toml: cfg.to_toml(),
        records: records.iter().map(RecordJson::from_record).collect(),
        error: error.as_ref().map(ToString::to_string),
    };
    let path = session.output_dir.join("trajectory.json");
    write_json(&path, &trajectory)?;
    if let Some(e) = error {
        writeln!(out, "stopped after {} steps: {e}", records.len())?;
        return Err(e.into());
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(OptimizeOutcome { records, trajectory_path: Some(path) })
}

pub struct QptOutcome {
    pub f_chi: f64,
    pub f_uexp: Option<f64>,
}

pub fn qpt(session: &Session, pulse: Option<&Path>, fit_operator: bool, out: &mut dyn Write) -> Result<Option<QptOutcome>, CliError> {
    let seq = session.pulse(pulse)?;
    if !session.prepare(out, &["chi.json"])? {
        return Ok(None);
    }
    let lab = session.lab()?;
    let chi = lab.measure_qpt(&seq, 0)?;
    let f_chi = process_fidelity(&chi, &ideal_cz_chi());
    let fit = if fit_operator {
        Some(powell_fit(&chi, &principal_operator(&chi), &default_fit_options())?)
    } else {
        None
    };
    let f_uexp = fit.as_ref().map(|f| operator_fidelity(&f.operator.matrix, &ideal_cz4()));
    writeln!(out, "F_chi  = {f_chi:.6}")?;
    if let Some(f) = f_uexp {
        writeln!(out, "F_uexp = {f:.6}")?;
    }
    let file = ChiFile {
        provenance: session.provenance(),
        f_chi,
        f_uexp,
        chi: matrix_to_json(&chi.0),
        u_exp: fit.map(|f| matrix_to_json(&f.operator.matrix)),
    };
    write_json(&session.output_dir.join("chi.json"), &file)?;
    Ok(Some(QptOutcome { f_chi, f_uexp }))
}

pub fn chevron(session: &Session, out: &mut dyn Write) -> Result<Option<ChevronSummary>, CliError> {
    let cfg = &session.config;
    let (det, times) = cfg.chevron_grids()?;
    if !session.prepare(out, &["chevron.csv", "chevron_fit.json"])? {
        writeln!(out, "  {} detunings x {} times", det.len(), times.len())?;
        return Ok(None);
    }
    let model = cfg.model()?;
    let p11 = chevron_scan(&model, &det, &times, cfg.chevron.dissipation)?;
    let prov = session.provenance();
    let det_mhz: Vec<f64> = det.iter().map(|&d| rad_per_ns_to_mhz(d)).collect();
    write_chevron_csv(&session.output_dir.join("chevron.csv"), &prov, &det_mhz, &times, &p11)?;
    let mut summary = ChevronSummary { provenance: prov, g_est_mhz: None, resonance_est_mhz: None, residual_rms: None };
    if cfg.chevron.fit {
        let fit = fit_chevron(&p11, &det, &times)?;
        summary.g_est_mhz = Some(rad_per_ns_to_mhz(fit.coupling));
        summary.resonance_est_mhz = Some(rad_per_ns_to_mhz(fit.resonance));
        summary.residual_rms = Some(fit.residual);
        writeln!(out, "g/2pi         = {:.3} MHz", rad_per_ns_to_mhz(fit.coupling))?;
        writeln!(out, "resonance/2pi = {:.3} MHz", rad_per_ns_to_mhz(fit.resonance))?;
        writeln!(out, "rms residual  = {:.2e}", fit.residual)?;
    }
    write_json(&session.output_dir.join("chevron_fit.json"), &summary)?;
    Ok(Some(summary))
}

pub fn rb(session: &Session, pulse: Option<&Path>, ideal: bool, out: &mut dyn Write) -> Result<Option<RbSummary>, CliError> {
    let cfg = &session.config;
    let rb_cfg = cfg.rb();
    rb_cfg.validate()?;
    let seq = if ideal { None } else { Some(session.pulse(pulse)?) };
    if !session.prepare(out, &["rb.csv", "rb_summary.json"])? {
        return Ok(None);
    }
    let group = build_clifford_group()?;
    let cz = match &seq {
        None => CzImpl::Ideal,
        Some(s) => CzImpl::Superoperator(session.lab()?.gate_superoperator(s)?),
    };
    let result = run_rb_with(&group, &cz, &rb_cfg, &session.exec)?;
    let prov = session.provenance();
    write_rb_csv(&session.output_dir.join("rb.csv"), &prov, &result)?;
    let f_rb = rb_fidelity(&result)?;
    let degenerate = [Some(&result.reference), result.interleaved.as_ref()]
        .into_iter()
        .flatten()
        .any(|c| c.fit.is_some_and(|f| f.degenerate));
    if degenerate {
        writeln!(out, "note: DegenerateFit, survival shows no decay and p = 1 is used")?;
    }
    let summary = RbSummary {
        provenance: prov,
        gate: if ideal { "ideal".into() } else { "pulse".into() },
        reference: decay_json(&result.reference),
        interleaved: result.interleaved.as_ref().and_then(decay_json),
        f_rb: Some(f_rb),
    };
    if let (Some(r), Some(i)) = (&summary.reference, &summary.interleaved) {
        writeln!(out, "p_ref = {:.6}  p_CZ = {:.6}", r.p, i.p)?;
    }
    writeln!(out, "F_RB  = {f_rb:.6}")?;
    write_json(&session.output_dir.join("rb_summary.json"), &summary)?;
    Ok(Some(summary))
}

/// Largest deviation found by `replay`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayReport {
    pub steps: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
}

/// Re-measures each recorded step (or only `step`) and compares fidelities
/// and gradients with the stored trajectory.
pub fn replay(path: &Path, step: Option<usize>, jobs: Option<usize>, out: &mut dyn Write) -> Result<ReplayReport, CliError> {
    let t = artifacts::read_trajectory(path)?;
    let cfg = RunConfig::from_toml(&t.config_toml)?;
    if cfg.hash() != t.provenance.config_hash {
        return Err(CliError::Config(format!("{}: configuration hash does not match", path.display())));
    }
    let session = Session::new(cfg, &GlobalOptions { jobs, ..GlobalOptions::default() })?;
    let opt = session.config.optimizer()?;
    let model = session.config.model()?;
    let mut lab = session.lab()?;
    let tolerance = match lab.measurement.mode {
        MeasurementMode::Exact => 1e-9,
        // Two standard deviations of a binomial frequency at p = 1/2.
        MeasurementMode::Sampled { shots } => 2.0 * 0.5 / (shots as f64).sqrt(),
    };
    let selected: Vec<&RecordJson> = t.records.iter().filter(|r| step.is_none_or(|s| r.step == s)).collect();
    if selected.is_empty() {
        return Err(CliError::Config(format!("{}: no matching step recorded", path.display())));
    }
    let mut worst = 0.0f64;
    for stored in &selected {
        let pulse = stored.pulse()?;
        let rec = measure_step(&opt, &mut lab, &pulse, stored.step)?;
        let mut dev = 0.0f64;
        let mut cmp = |a: Option<f64>, b: Option<f64>, what: &str| -> Result<(), CliError> {
            match (a, b) {
                (Some(x), Some(y)) => dev = dev.max((x - y).abs()),
                (None, None) => {}
                _ => return Err(CliError::Replay(format!("step {}: {what} present in only one run", stored.step))),
            }
            Ok(())
        };
        cmp(rec.f_chi, stored.f_chi, "F_chi")?;
        cmp(rec.f_uexp, stored.f_uexp, "F_uexp")?;
        if rec.f_rho.len() != stored.f_rho.len() {
            return Err(CliError::Replay(format!("step {}: number of input states differs", stored.step)));
        }
        for (a, b) in rec.f_rho.iter().zip(&stored.f_rho) {
            dev = dev.max((a - b).abs());
        }
        if let Some(g) = &stored.gradient {
            let k = step_gradient(&opt, &model, &rec)?;
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let gdev = k.0.iter().zip(g).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
            dev = dev.max(gdev);
        }
        writeln!(out, "step {:>3}: max deviation {dev:.3e}", stored.step)?;
        worst = worst.max(dev);
    }
    let report = ReplayReport { steps: selected.len(), max_deviation: worst, tolerance };
    if worst.is_nan() || worst > tolerance {
        return Err(CliError::Replay(format!("max deviation {worst:.3e} exceeds tolerance {tolerance:.1e}")));
    }
    writeln!(out, "replay ok: {} steps within {tolerance:.1e}", report.steps)?;
    Ok(report)
}
