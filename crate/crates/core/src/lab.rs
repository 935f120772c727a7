//! Software stand-in for the physical experiment.
//!
//! The emulator distorts the nominal pulse, evolves under the dissipative
//! Liouvillian of the true device, undoes the dynamic phases the
//! experimenter expects from the nominal pulse, and measures with optional
//! shot noise and readout error.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::dynamics::{commutator_superoperator, dissipation_superoperator, LDIM};
use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::grape::Experiment;
use crate::linalg::{c, expm, hermitian_eigen, identity, matmul, matvec, unvectorize, vectorize, CMatrix};
use crate::powell::{powell, PowellOptions};
use crate::pulse::PulseSequence;
use crate::system::{basis_index, SystemModel};
use crate::tomography::{
    qst, setting_populations, settings, ProcessMatrix, ProcessTomography, ProductState, QstData, ReadoutModel,
};

/// Control-line response.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionKind {
    None,
    /// First-order low-pass filter with the given time constant in ns.
    ExponentialFilter { time_constant: f64 },
    AmplitudeScale { factor: f64 },
    /// Applied in order.
    Composite(Vec<DistortionKind>),
}

impl DistortionKind {
    fn has_memory(&self) -> bool {
        match self {
            DistortionKind::ExponentialFilter { .. } => true,
            DistortionKind::Composite(parts) => parts.iter().any(Self::has_memory),
            _ => false,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DistortionKind::None => Ok(()),
            DistortionKind::ExponentialFilter { time_constant } if *time_constant > 0.0 && time_constant.is_finite() => Ok(()),
            DistortionKind::AmplitudeScale { factor } if factor.is_finite() => Ok(()),
            DistortionKind::Composite(parts) => parts.iter().try_for_each(Self::validate),
            other => Err(Error::InvalidConfig(format!("invalid distortion {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionModel {
    pub kind: DistortionKind,
    /// Step of the internal grid used when the response has memory (ns).
    pub fine_step: f64,
    /// Zero-amplitude time appended after the pulse so that a filter tail
    /// plays out before measurement (ns). The compensation accounts for it.
    pub settle_time: f64,
}

impl DistortionModel {
    pub fn none() -> Self {
        Self { kind: DistortionKind::None, fine_step: 0.05, settle_time: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if !(self.fine_step > 0.0) || !self.fine_step.is_finite() {
            return Err(Error::InvalidConfig(format!("fine step must be positive, got {}", self.fine_step)));
        }
        if !(self.settle_time >= 0.0) || !self.settle_time.is_finite() {
            return Err(Error::InvalidConfig(format!("settle time must be non-negative, got {}", self.settle_time)));
        }
        Ok(())
    }

    /// Number of zero segments of length `tau` appended for settling.
    pub fn settle_segments(&self, tau: f64) -> usize {
        if self.settle_time <= 0.0 {
            0
        } else {
            (self.settle_time / tau - 1e-9).ceil() as usize
        }
    }
}

/// Cell averages of a first-order filter driven by a piecewise-constant
/// input, starting from rest.
fn exponential_filter(input: &[f64], h: f64, time_constant: f64) -> Vec<f64> {
    let decay = (-h / time_constant).exp();
    let avg_weight = time_constant / h * (1.0 - decay);
    let mut y = 0.0;
    input
        .iter()
        .map(|&x| {
            let avg = x + (y - x) * avg_weight;
            y = x + (y - x) * decay;
            avg
        })
        .collect()
}

fn apply_kind(kind: &DistortionKind, samples: Vec<f64>, h: f64) -> Vec<f64> {
    match kind {
        DistortionKind::None => samples,
        DistortionKind::ExponentialFilter { time_constant } => exponential_filter(&samples, h, *time_constant),
        DistortionKind::AmplitudeScale { factor } => samples.into_iter().map(|v| v * factor).collect(),
        DistortionKind::Composite(parts) => parts.iter().fold(samples, |s, k| apply_kind(k, s, h)),
    }
}

/// The pulse the qubit actually sees. Responses with memory are evaluated on
/// a zero-order-hold fine grid; memoryless ones act per segment. Settling
/// time is appended first.
pub fn apply_distortion(seq: &PulseSequence, model: &DistortionModel) -> Result<PulseSequence> {
    model.validate()?;
    let padded = seq.padded(model.settle_segments(seq.tau()));
    if !model.kind.has_memory() {
        let out = apply_kind(&model.kind, padded.amplitudes().to_vec(), padded.tau());
        return PulseSequence::new(padded.tau(), out);
    }
    let per_segment = (padded.tau() / model.fine_step - 1e-9).ceil().max(1.0) as usize;
    let h = padded.tau() / per_segment as f64;
    let fine: Vec<f64> = padded
        .amplitudes()
        .iter()
        .flat_map(|&a| core::iter::repeat_n(a, per_segment))
        .collect();
    PulseSequence::new(h, apply_kind(&model.kind, fine, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementMode {
    /// Infinite-shot outcome probabilities.
    Exact,
    Sampled { shots: u64 },
}

/// What the readout does with a transmon left in `|2>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeakageReadout {
    /// The shot is recognized as leaked and dropped.
    #[default]
    Discarded,
    /// `|2>` is indistinguishable from `|1>`.
    Excited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementConfig {
    pub mode: MeasurementMode,
    pub readout_error: bool,
    pub readout_correction: bool,
    pub leakage: LeakageReadout,
    pub seed: u64,
}

impl MeasurementConfig {
    pub fn exact() -> Self {
        Self {
            mode: MeasurementMode::Exact,
            readout_error: false,
            readout_correction: false,
            leakage: LeakageReadout::Discarded,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let MeasurementMode::Sampled { shots: 0 } = self.mode {
            return Err(Error::InvalidConfig("sampled measurement needs at least one shot".into()));
        }
        Ok(())
    }
}

/// Random stream for one (step, task) pair.
pub fn task_rng(seed: u64, step: usize, task: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 20) | task as u64);
    rng
}

const QST_TASK_OFFSET: usize = 1 << 10;

pub struct LabEmulator<E: Executor = Sequential> {
    pub model: SystemModel,
    pub distortion: DistortionModel,
    pub measurement: MeasurementConfig,
    tomography: ProcessTomography,
    exec: E,
}

impl LabEmulator<Sequential> {
    pub fn new(model: SystemModel, distortion: DistortionModel, measurement: MeasurementConfig) -> Result<Self> {
        Self::with_executor(model, distortion, measurement, Sequential)
    }
}

impl<E: Executor> LabEmulator<E> {
    pub fn with_executor(
        model: SystemModel,
        distortion: DistortionModel,
        measurement: MeasurementConfig,
        exec: E,
    ) -> Result<Self> {
        model.params.validate()?;
        distortion.validate()?;
        measurement.validate()?;
        Ok(Self { model, distortion, measurement, tomography: ProcessTomography::new()?, exec })
    }

    pub fn tomography(&self) -> &ProcessTomography {
        &self.tomography
    }

    /// Superoperator of the emulated gate: distorted dissipative evolution
    /// followed by the nominal dynamic-phase compensation.
    pub fn gate_superoperator(&self, seq: &PulseSequence) -> Result<CMatrix> {
        let actual = apply_distortion(seq, &self.distortion)?;
        let nominal = seq.padded(self.distortion.settle_segments(seq.tau()));
        let forward = self.coupled_evolution(&actual);
        let compensation = self.decoupled_inverse(&nominal);
        let gate = matmul(&compensation, &forward);
        if !crate::linalg::is_finite(&gate) {
            return Err(Error::NonFinite("emulated gate"));
        }
        Ok(gate)
    }

    fn coupled_evolution(&self, seq: &PulseSequence) -> CMatrix {
        let model = &self.model;
        let dissipation = model.dissipative.then(|| dissipation_superoperator(&model.params));
        let h0 = commutator_superoperator(&model.static_hamiltonian(true));
        let drive = commutator_superoperator(&crate::system::number_a());
        let tau = seq.tau();
        let amps = seq.amplitudes();
        let chunk = 64usize;
        let chunks = amps.len().div_ceil(chunk);
        let products = self.exec.map(chunks, |k| {
            let mut acc = identity(LDIM);
            for &mu in &amps[k * chunk..((k + 1) * chunk).min(amps.len())] {
                let mut l = &h0 + &drive * c(mu, 0.0);
                if let Some(d) = &dissipation {
                    l += d;
                }
                acc = matmul(&expm(&(l * c(0.0, -tau))), &acc);
            }
            acc
        });
        products.into_iter().fold(identity(LDIM), |acc, p| matmul(&p, &acc))
    }

    /// `U_d^{-1}` of the nominal pulse; the decoupled Liouvillian is
    /// diagonal, so this is exact.
    fn decoupled_inverse(&self, seq: &PulseSequence) -> CMatrix {
        let h = self.model.static_hamiltonian(false);
        let n = crate::system::number_a();
        let mut phase = alloc::vec![0.0; LDIM];
        for &mu in seq.amplitudes() {
            for k in 0..crate::system::DIM {
                for l in 0..crate::system::DIM {
                    let ek = h[(k, k)].re + mu * n[(k, k)].re;
                    let el = h[(l, l)].re + mu * n[(l, l)].re;
                    phase[k * crate::system::DIM + l] += (ek - el) * seq.tau();
                }
            }
        }
        CMatrix::from_fn(LDIM, LDIM, |i, j| if i == j { c(0.0, phase[i]).exp() } else { c(0.0, 0.0) })
    }

    /// Final qutrit-space state for `rho0` (9x9, or 4x4 embedded).
    pub fn run_gate(&self, seq: &PulseSequence, rho0: &CMatrix) -> Result<CMatrix> {
        let rho0 = match rho0.nrows() {
            9 => rho0.clone(),
            4 => crate::system::embed_computational(rho0),
            n => return Err(Error::DimensionMismatch { expected: 9, found: n }),
        };
        let gate = self.gate_superoperator(seq)?;
        Ok(unvectorize(&matvec(&gate, &vectorize(&rho0))))
    }

    /// Tomography of one final state through the configured measurement.
    fn observe(&self, rho9: &CMatrix, step: usize, task: usize) -> Result<CMatrix> {
        let readout = ReadoutModel::new(self.model.params.readout);
        let mut rng = task_rng(self.measurement.seed, step, task);
        let mut freqs = Vec::with_capacity(9);
        for s in settings() {
            let pops = setting_populations(rho9, s);
            let mut p = [0.0; 4];
            let mut leaked = 0.0;
            for (ja, row) in pops.iter().enumerate() {
                for (jb, &v) in row.iter().enumerate() {
                    let v = v.max(0.0);
                    if (ja == 2 || jb == 2) && self.measurement.leakage == LeakageReadout::Discarded {
                        leaked += v;
                    } else {
                        p[usize::from(ja > 0) + 2 * usize::from(jb > 0)] += v;
                    }
                }
            }
            let total: f64 = p.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Provider("every shot leaked out of the qubit subspace".into()));
            }
            p.iter_mut().for_each(|v| *v /= total);
            if self.measurement.readout_error {
                p = readout.apply(p);
            }
            if let MeasurementMode::Sampled { shots } = self.measurement.mode {
                let kept = if leaked > 0.0 {
                    Binomial::new(shots, (total / (total + leaked)).clamp(0.0, 1.0))
                        .map_err(|e| Error::Provider(format!("{e}")))?
                        .sample(&mut rng)
                } else {
                    shots
                };
                if kept == 0 {
                    return Err(Error::Provider("every shot leaked out of the qubit subspace".into()));
                }
                p = sample_counts(&p, kept, &mut rng)?;
            }
            if self.measurement.readout_correction {
                p = readout.correct(p);
            }
            freqs.push(p);
        }
        qst(&QstData::SettingFrequencies(freqs))
    }

    pub fn measure_qst_states(&self, seq: &PulseSequence, states: &[ProductState], step: usize) -> Result<Vec<CMatrix>> {
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let gate = self.gate_superoperator(seq)?;
        self.exec
            .map(states.len(), |k| {
                let out = unvectorize(&matvec(&gate, &vectorize(&states[k].density9())));
                self.observe(&out, step, QST_TASK_OFFSET + k)
            })
            .into_iter()
            .collect()
    }

    pub fn measure_qpt(&self, seq: &PulseSequence, step: usize) -> Result<ProcessMatrix> {
        let gate = self.gate_superoperator(seq)?;
        self.qpt_of_superoperator(&gate, step)
    }

    /// Process tomography of an already computed gate superoperator.
    pub fn qpt_of_superoperator(&self, gate: &CMatrix, step: usize) -> Result<ProcessMatrix> {
        let inputs = self.tomography.inputs();
        let outputs = self
            .exec
            .map(inputs.len(), |k| {
                let out = unvectorize(&matvec(gate, &vectorize(&inputs[k].density9())));
                self.observe(&out, step, k)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        self.tomography.reconstruct(&outputs)
    }
}

/// Multinomial draw of `shots` outcomes, returned as frequencies.
fn sample_counts(p: &[f64; 4], shots: u64, rng: &mut ChaCha8Rng) -> Result<[f64; 4]> {
    let mut remaining = shots;
    let mut mass = 1.0;
    let mut out = [0.0; 4];
    for k in 0..4 {
        let n = if k == 3 || remaining == 0 {
            remaining
        } else {
            let q = (p[k] / mass).clamp(0.0, 1.0);
            let d = Binomial::new(remaining, q).map_err(|e| Error::Provider(format!("{e}")))?;
            d.sample(rng)
        };
        out[k] = n as f64 / shots as f64;
        remaining -= n;
        mass -= p[k];
    }
    Ok(out)
}

impl<E: Executor> Experiment for LabEmulator<E> {
    fn process_tomography(&mut self, pulse: &PulseSequence, step: usize) -> Result<ProcessMatrix> {
        self.measure_qpt(pulse, step)
    }

    fn state_tomography(&mut self, pulse: &PulseSequence, inputs: &[ProductState], step: usize) -> Result<Vec<CMatrix>> {
        self.measure_qst_states(pulse, inputs, step)
    }

    fn seed(&self) -> Option<u64> {
        Some(self.measurement.seed)
    }
}

/// `P_11` after holding the drive at each amplitude for each time, starting
/// from `|11>`. Rows follow `detunings`, columns follow `times`.
pub fn chevron_scan(model: &SystemModel, detunings: &[f64], times: &[f64], dissipative: bool) -> Result<Vec<Vec<f64>>> {
    if detunings.is_empty() || times.is_empty() {
        return Err(Error::InvalidConfig("chevron grids must be non-empty".into()));
    }
    crate::error::ensure_finite(detunings, "chevron detunings")?;
    crate::error::ensure_finite(times, "chevron times")?;
    let s11 = basis_index(1, 1);
    let mut out = Vec::with_capacity(detunings.len());
    for &mu in detunings {
        let h = model.hamiltonian(mu, true);
        if !dissipative {
            let (vals, vecs) = hermitian_eigen(&h);
            let w: Vec<f64> = (0..vals.len()).map(|j| vecs[(s11, j)].norm_sqr()).collect();
            out.push(
                times
                    .iter()
                    .map(|&t| {
                        let amp: crate::linalg::C64 =
                            vals.iter().zip(&w).map(|(e, wj)| c(0.0, -e * t).exp() * *wj).sum();
                        amp.norm_sqr()
                    })
                    .collect(),
            );
        } else {
            let mut l = commutator_superoperator(&h);
            l += dissipation_superoperator(&model.params);
            let mut rho = CMatrix::zeros(9, 9);
            rho[(s11, s11)] = c(1.0, 0.0);
            let v0 = vectorize(&rho);
            let idx = s11 * 9 + s11;
            out.push(
                times
                    .iter()
                    .map(|&t| matvec(&expm(&(&l * c(0.0, -t))), &v0)[idx].re)
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Generalized Rabi formula for the `|11> <-> |20>` exchange.
pub fn chevron_model(coupling: f64, resonance: f64, mu: f64, t: f64) -> f64 {
    let omega_sq = 8.0 * coupling * coupling;
    let delta = mu - resonance;
    let rate_sq = omega_sq + delta * delta;
    let s = (0.5 * rate_sq.sqrt() * t).sin();
    1.0 - omega_sq / rate_sq * s * s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChevronFit {
    pub coupling: f64,
    pub resonance: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

fn chevron_rms(p11: &[Vec<f64>], detunings: &[f64], times: &[f64], g: f64, res: f64) -> f64 {
    let mut acc = 0.0;
    for (row, &mu) in p11.iter().zip(detunings) {
        for (&p, &t) in row.iter().zip(times) {
            let d = p - chevron_model(g, res, mu, t);
            acc += d * d;
        }
    }
    (acc / (detunings.len() * times.len()) as f64).sqrt()
}

/// Fits the coupling and resonance amplitude to a chevron scan.
pub fn fit_chevron(p11: &[Vec<f64>], detunings: &[f64], times: &[f64]) -> Result<ChevronFit> {
    if p11.len() != detunings.len() || p11.iter().any(|r| r.len() != times.len()) {
        return Err(Error::InvalidConfig("chevron data does not match its grids".into()));
    }
    if detunings.len() < 3 || times.len() < 3 {
        return Err(Error::FitFailure("chevron grid too small".into()));
    }
    let (lo, hi) = p11
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi - lo > 0.05) {
        return Err(Error::FitFailure("no exchange signal in chevron data".into()));
    }
    let means: Vec<f64> = p11.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let best_row = (0..means.len()).min_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap_or(0);
    let res0 = detunings[best_row];

    let t_max = times.iter().fold(0.0f64, |m, &t| m.max(t.abs()));
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let dt = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let g_lo = 0.25 * PI / (SQRT_2 * t_max);
    let g_hi = PI / (2.0 * SQRT_2 * dt);
    if !(g_hi > g_lo) {
        return Err(Error::FitFailure("time grid cannot resolve an exchange oscillation".into()));
    }
    let steps = 2000;
    let ratio = (g_hi / g_lo).ln();
    let g0 = (0..=steps)
        .map(|k| g_lo * (ratio * k as f64 / steps as f64).exp())
        .map(|g| (g, chevron_rms(p11, detunings, times, g, res0)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(g, _)| g)
        .unwrap_or(g_lo);

    let objective = |x: &[f64]| chevron_rms(p11, detunings, times, g0 * x[0], res0 + g0 * x[1]);
    let opts = PowellOptions { max_sweeps: 200, ftol: 1e-12, abs_tol: 1e-15, line_tol: 1e-8, initial_step: 0.02 };
    let r = powell(objective, &[1.0, 0.0], &opts);
    let fit = ChevronFit { coupling: g0 * r.x[0], resonance: res0 + g0 * r.x[1], residual: r.value };
    if !(fit.residual < 0.05) || !(fit.coupling > 0.0) {
        return Err(Error::FitFailure(format!("chevron residual {:.3e} too large", fit.residual)));
    }
    Ok(fit)
}
