//! Data-driven GRAPE: gradients from measured gate operators (protocol I)
//! or measured final states (protocol II), the update rule, and the
//! closed-loop controller.

use alloc::format;
use alloc::vec::Vec;

use crate::dynamics::{commutator_superoperator, propagate_superoperator, propagate_unitary, PropagatorChain, SuperoperatorChain};
use crate::error::{Error, Result};
use crate::linalg::{c, conjugate, inner, matmul, matvec, restrict, vectorize, CMatrix, CVector, C64, ZERO};
use crate::powell::PowellOptions;
use crate::pulse::PulseSequence;
use crate::system::{embed_computational, ideal_cz4, ideal_cz5, number_a, SystemModel, DIM, FIVE_STATE};
use crate::tomography::{
    default_fit_options, ideal_cz_chi, operator_fidelity, powell_fit, principal_operator, process_fidelity,
    state_fidelity, GateOperator, ProcessMatrix, ProductState,
};

/// Per-segment objective gradient in 1/(rad/ns).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSequence(pub Vec<f64>);

impl GradientSequence {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|k| k * k).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, k| m.max(k.abs()))
    }
}

/// Five-state embedding of a measured gate: a 4x4 computational block gets
/// `-1` on `|20>`.
fn five_state_gate(u_exp: &CMatrix) -> Result<CMatrix> {
    match u_exp.nrows() {
        5 if u_exp.ncols() == 5 => Ok(u_exp.clone()),
        4 if u_exp.ncols() == 4 => {
            let mut out = CMatrix::zeros(5, 5);
            out.view_mut((0, 0), (4, 4)).copy_from(u_exp);
            out[(4, 4)] = c(-1.0, 0.0);
            Ok(out)
        }
        n => Err(Error::DimensionMismatch { expected: 4, found: n }),
    }
}

/// `k_m = -2τ Im Tr{U_CZ U_exp Q_{c;m}} - 2τ Im Tr{U_CZ U_exp† Q_{d;m}}`
/// with traces over the five-state set.
pub fn gradient_protocol_one(chain: &PropagatorChain, u_exp: &CMatrix) -> Result<GradientSequence> {
    let u5 = five_state_gate(u_exp)?;
    let cz = ideal_cz5();
    let a = matmul(&cz, &u5);
    let b = matmul(&cz, &u5.adjoint());
    let n = number_a();
    let tau = chain.tau();
    let k = (0..chain.len())
        .map(|m| {
            let qc = restrict(&conjugate(&chain.partial_coupled(m).adjoint(), &n), &FIVE_STATE);
            let qd = restrict(&conjugate(&chain.partial_decoupled(m).adjoint(), &n), &FIVE_STATE);
            let tc = matmul(&a, &qc).trace();
            let td = matmul(&b, &qd).trace();
            -2.0 * tau * (tc.im + td.im)
        })
        .collect::<Vec<_>>();
    finite(GradientSequence(k))
}

fn finite(k: GradientSequence) -> Result<GradientSequence> {
    crate::error::ensure_finite(&k.0, "gradient")?;
    Ok(k)
}

fn lift(rho: &CMatrix) -> Result<CMatrix> {
    match rho.nrows() {
        DIM => Ok(rho.clone()),
        4 => Ok(embed_computational(rho)),
        n => Err(Error::DimensionMismatch { expected: DIM, found: n }),
    }
}

/// Row vector times matrix.
fn row_mul(a: &CVector, m: &CMatrix) -> CVector {
    m.tr_mul(a)
}

/// `k_m = 2iτ [<<ρ_id| Q_{c;m} |ρ_exp>> - <<ρ_id| Q_{d;m} |ρ_exp>>]`.
///
/// Both brackets are evaluated by vector recursions instead of forming the
/// partial products explicitly.
pub fn gradient_protocol_two(
    chain: &SuperoperatorChain,
    rho_exp: &CMatrix,
    rho_ideal: &CMatrix,
) -> Result<GradientSequence> {
    let rho_exp = vectorize(&lift(rho_exp)?);
    let bra: CVector = vectorize(&lift(rho_ideal)?).map(|z| z.conj());
    let p: Vec<C64> = commutator_superoperator(&number_a()).diagonal().iter().copied().collect();
    let bracket = |a: &CVector, b: &CVector| -> C64 {
        a.iter().zip(b.iter()).zip(&p).map(|((x, y), w)| x * y * w).sum()
    };
    let m_len = chain.len();
    let mut term_c = alloc::vec![ZERO; m_len];
    let mut b = matvec(chain.total_decoupled(), &rho_exp);
    let mut a = row_mul(&bra, chain.total_decoupled_inverse());
    for m in (0..m_len).rev() {
        term_c[m] = bracket(&a, &b);
        if m > 0 {
            b = matvec(chain.coupled_segment_inverse(m), &b);
            a = row_mul(&a, chain.coupled_segment(m));
        }
    }
    let mut beta = rho_exp;
    let mut alpha = bra;
    let tau = chain.tau();
    let mut k = Vec::with_capacity(m_len);
    let mut worst_residue: f64 = 0.0;
    for (m, &tc) in term_c.iter().enumerate() {
        beta = matvec(chain.decoupled_segment(m), &beta);
        alpha = row_mul(&alpha, chain.decoupled_segment_inverse(m));
        let t = tc - bracket(&alpha, &beta);
        let value = c(0.0, 2.0 * tau) * t;
        worst_residue = worst_residue.max(value.im.abs());
        k.push(value.re);
    }
    if worst_residue > 1e-9 {
        return Err(Error::NonRealGradient(worst_residue));
    }
    finite(GradientSequence(k))
}

/// `||U_d† U_c - U_CZ||^2` on the five-state set.
pub fn unitary_objective(chain: &PropagatorChain) -> f64 {
    let u5 = restrict(&chain.gate(), &FIVE_STATE);
    (u5 - ideal_cz5()).norm_squared()
}

/// `2 - 2 Re Tr{rho(T) rho_ideal}`.
pub fn state_objective(rho_t: &CMatrix, rho_ideal: &CMatrix) -> Result<f64> {
    Ok(2.0 - 2.0 * inner(&lift(rho_ideal)?, &lift(rho_t)?).re)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateSign {
    /// `mu - alpha k`, which lowers the objective.
    #[default]
    Descent,
    /// `mu + alpha k`.
    Ascent,
}

impl UpdateSign {
    fn factor(self) -> f64 {
        match self {
            UpdateSign::Descent => -1.0,
            UpdateSign::Ascent => 1.0,
        }
    }
}

pub fn update_pulse(seq: &PulseSequence, k: &GradientSequence, alpha: f64, sign: UpdateSign) -> Result<PulseSequence> {
    if k.0.len() != seq.len() {
        return Err(Error::LengthMismatch { expected: seq.len(), found: k.0.len() });
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::OutOfRange(format!("learning rate must be positive, got {alpha}")));
    }
    let s = sign.factor() * alpha;
    let amps = seq.amplitudes().iter().zip(&k.0).map(|(mu, g)| mu + s * g).collect();
    PulseSequence::new(seq.tau(), amps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Gradient from a fitted gate operator after process tomography.
    Unitary,
    /// Gradient from final states after state tomography.
    State,
}

/// How protocol II combines the per-input updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Pulses,
    Gradients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopCriteria {
    /// Stop once the gradient norm drops below this value.
    pub grad_norm: f64,
    /// Stop once the largest amplitude change drops below this value (rad/ns).
    pub pulse_change: f64,
    /// Stop once the primary fidelity reaches this value.
    pub fidelity_target: Option<f64>,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self { grad_norm: 1e-4, pulse_change: 0.0, fidelity_target: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub protocol: Protocol,
    /// Learning rate in GHz^2, which equals ns^-2 internally.
    pub learning_rate: f64,
    pub max_steps: usize,
    pub stop: StopCriteria,
    pub sign: UpdateSign,
    pub averaging: Averaging,
    /// Input states for protocol II.
    pub inputs: Vec<ProductState>,
    /// Also run process tomography on every protocol II step.
    pub track_process: bool,
    pub fit: PowellOptions,
}

impl OptimizerConfig {
    pub fn protocol_one() -> Self {
        Self {
            protocol: Protocol::Unitary,
            learning_rate: 0.03,
            max_steps: 5,
            stop: StopCriteria::default(),
            sign: UpdateSign::Descent,
            averaging: Averaging::Pulses,
            inputs: crate::tomography::optimization_inputs().to_vec(),
            track_process: true,
            fit: default_fit_options(),
        }
    }

    pub fn protocol_two() -> Self {
        Self { protocol: Protocol::State, learning_rate: 0.1, ..Self::protocol_one() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_steps < 1 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if self.protocol == Protocol::State && self.inputs.is_empty() {
            return Err(Error::InvalidConfig("protocol II needs at least one input state".into()));
        }
        Ok(())
    }
}

/// Anything that can run a pulse and report tomography results.
/// `step` keys any randomness so that re-running a step reproduces it.
pub trait Experiment {
    fn process_tomography(&mut self, pulse: &PulseSequence, step: usize) -> Result<ProcessMatrix>;

    /// Reconstructed 4x4 final states for each input.
    fn state_tomography(&mut self, pulse: &PulseSequence, inputs: &[ProductState], step: usize) -> Result<Vec<CMatrix>>;

    /// Seed of the measurement randomness, if any.
    fn seed(&self) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub step: usize,
    pub pulse: PulseSequence,
    pub gradient: Option<GradientSequence>,
    pub chi: Option<ProcessMatrix>,
    pub u_exp: Option<GateOperator>,
    pub rho_exp: Vec<CMatrix>,
    pub f_chi: Option<f64>,
    pub f_uexp: Option<f64>,
    pub f_rho: Vec<f64>,
    pub grad_norm: Option<f64>,
    /// Seconds since the start of the run, as reported by the caller's clock.
    pub elapsed_s: f64,
    pub seed: Option<u64>,
}

impl IterationRecord {
    /// Fidelity the loop optimizes: `F(chi)` for protocol I, mean `F(rho)`
    /// for protocol II.
    pub fn primary_fidelity(&self) -> Option<f64> {
        if self.f_rho.is_empty() {
            self.f_chi
        } else {
            Some(self.f_rho.iter().sum::<f64>() / self.f_rho.len() as f64)
        }
    }
}

/// The optimization stopped on an error after completing some steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub error: Error,
    pub trajectory: Vec<IterationRecord>,
}

/// Measured data and fidelities at one pulse, without a gradient.
pub fn measure_step<X: Experiment>(
    config: &OptimizerConfig,
    experiment: &mut X,
    pulse: &PulseSequence,
    step: usize,
) -> Result<IterationRecord> {
    let mut rec = IterationRecord {
        step,
        pulse: pulse.clone(),
        gradient: None,
        chi: None,
        u_exp: None,
        rho_exp: Vec::new(),
        f_chi: None,
        f_uexp: None,
        f_rho: Vec::new(),
        grad_norm: None,
        elapsed_s: 0.0,
        seed: experiment.seed(),
    };
    if config.protocol == Protocol::Unitary || config.track_process {
        let chi = experiment.process_tomography(pulse, step)?;
        rec.f_chi = Some(process_fidelity(&chi, &ideal_cz_chi()));
        if config.protocol == Protocol::Unitary {
            let fit = powell_fit(&chi, &principal_operator(&chi), &config.fit)?;
            rec.f_uexp = Some(operator_fidelity(&fit.operator.matrix, &ideal_cz4()));
            rec.u_exp = Some(fit.operator);
        }
        rec.chi = Some(chi);
    }
    if config.protocol == Protocol::State {
        let states = experiment.state_tomography(pulse, &config.inputs, step)?;
        rec.f_rho = states
            .iter()
            .zip(&config.inputs)
            .map(|(rho, s)| state_fidelity(rho, &ideal_final_state(*s)))
            .collect();
        rec.rho_exp = states;
    }
    Ok(rec)
}

/// `U_CZ rho(0) U_CZ†` on the computational subspace.
pub fn ideal_final_state(s: ProductState) -> CMatrix {
    conjugate(&ideal_cz4(), &s.density4())
}

/// Gradient at `pulse` from the measured data in `rec`.
pub fn step_gradient(config: &OptimizerConfig, model: &SystemModel, rec: &IterationRecord) -> Result<GradientSequence> {
    match config.protocol {
        Protocol::Unitary => {
            let chain = propagate_unitary(&rec.pulse, model)?;
            let u = rec.u_exp.as_ref().ok_or(Error::MissingFit("gate operator"))?;
            gradient_protocol_one(&chain, &u.matrix)
        }
        Protocol::State => {
            let chain = propagate_superoperator(&rec.pulse, model)?;
            let ks = rec
                .rho_exp
                .iter()
                .zip(&config.inputs)
                .map(|(rho, s)| gradient_protocol_two(&chain, rho, &ideal_final_state(*s)))
                .collect::<Result<Vec<_>>>()?;
            let n = ks.len() as f64;
            let mut mean = alloc::vec![0.0; rec.pulse.len()];
            for k in &ks {
                for (acc, v) in mean.iter_mut().zip(&k.0) {
                    *acc += v / n;
                }
            }
            Ok(GradientSequence(mean))
        }
    }
}

fn next_pulse(config: &OptimizerConfig, model: &SystemModel, rec: &IterationRecord, k: &GradientSequence) -> Result<PulseSequence> {
    if config.protocol == Protocol::State && config.averaging == Averaging::Pulses {
        // Average the per-input updated pulses.
        let chain = propagate_superoperator(&rec.pulse, model)?;
        let mut acc = alloc::vec![0.0; rec.pulse.len()];
        let n = rec.rho_exp.len() as f64;
        for (rho, s) in rec.rho_exp.iter().zip(&config.inputs) {
            let ks = gradient_protocol_two(&chain, rho, &ideal_final_state(*s))?;
            let updated = update_pulse(&rec.pulse, &ks, config.learning_rate, config.sign)?;
            for (a, v) in acc.iter_mut().zip(updated.amplitudes()) {
                *a += v / n;
            }
        }
        return PulseSequence::new(rec.pulse.tau(), acc);
    }
    update_pulse(&rec.pulse, k, config.learning_rate, config.sign)
}

/// Closed-loop optimization. `clock` returns seconds since an arbitrary
/// origin; pass `|| 0.0` when timing is not needed.
pub fn run_optimization<X: Experiment, K: FnMut() -> f64>(
    config: &OptimizerConfig,
    model: &SystemModel,
    experiment: &mut X,
    initial: &PulseSequence,
    clock: K,
) -> core::result::Result<Vec<IterationRecord>, RunFailure> {
    run_optimization_observed(config, model, experiment, initial, clock, |_| {})
}

/// [`run_optimization`] that also hands every finished record to `observe`.
pub fn run_optimization_observed<X: Experiment, K: FnMut() -> f64, O: FnMut(&IterationRecord)>(
    config: &OptimizerConfig,
    model: &SystemModel,
    experiment: &mut X,
    initial: &PulseSequence,
    mut clock: K,
    mut observe: O,
) -> core::result::Result<Vec<IterationRecord>, RunFailure> {
    if let Err(error) = config.validate() {
        return Err(RunFailure { error, trajectory: Vec::new() });
    }
    let start = clock();
    let mut trajectory: Vec<IterationRecord> = Vec::new();
    let mut pulse = initial.clone();
    for step in 0..=config.max_steps {
        let mut rec = match measure_step(config, experiment, &pulse, step) {
            Ok(r) => r,
            Err(error) => return Err(RunFailure { error, trajectory }),
        };
        let reached = match (config.stop.fidelity_target, rec.primary_fidelity()) {
            (Some(t), Some(f)) => f >= t,
            _ => false,
        };
        if step == config.max_steps || reached {
            rec.elapsed_s = clock() - start;
            observe(&rec);
            trajectory.push(rec);
            break;
        }
        let update = step_gradient(config, model, &rec)
            .and_then(|k| next_pulse(config, model, &rec, &k).map(|p| (k, p)));
        let (k, next) = match update {
            Ok(v) => v,
            Err(error) => return Err(RunFailure { error, trajectory }),
        };
        let norm = k.norm();
        let change = next
            .amplitudes()
            .iter()
            .zip(pulse.amplitudes())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        rec.grad_norm = Some(norm);
        rec.gradient = Some(k);
        rec.elapsed_s = clock() - start;
        observe(&rec);
        trajectory.push(rec);
        if norm < config.stop.grad_norm || change < config.stop.pulse_change {
            break;
        }
        pulse = next;
    }
    Ok(trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Coupling, DeviceParams};

    fn closed_model() -> SystemModel {
        SystemModel::new(DeviceParams::paper().without_dissipation())
            .unwrap()
            .with_coupling(Coupling::AvoidedCrossing)
            .with_dissipation(false)
    }

    fn optimal_square(model: &SystemModel) -> PulseSequence {
        let t = model.params.swap_time();
        crate::pulse::square(model.params.resonance_amplitude(), t, t / 80.0).unwrap()
    }

    #[test]
    fn protocol_one_is_stationary_at_the_optimum() {
        let model = closed_model();
        let seq = optimal_square(&model);
        let chain = propagate_unitary(&seq, &model).unwrap();
        let u5 = restrict(&chain.gate(), &FIVE_STATE);
        let k = gradient_protocol_one(&chain, &u5).unwrap();
        assert!(k.max_abs() < 1e-3 * seq.tau(), "{}", k.max_abs());
    }

    #[test]
    fn protocol_two_is_stationary_at_the_optimum() {
        let model = closed_model();
        let seq = optimal_square(&model);
        let chain = propagate_superoperator(&seq, &model).unwrap();
        for s in crate::tomography::optimization_inputs() {
            let rho_t = chain.evolve(&s.density9());
            let k = gradient_protocol_two(&chain, &rho_t, &ideal_final_state(s)).unwrap();
            assert!(k.max_abs() < 1e-3 * seq.tau(), "{}", k.max_abs());
        }
    }

    #[test]
    fn rejects_wrong_operator_size() {
        let model = closed_model();
        let chain = propagate_unitary(&optimal_square(&model), &model).unwrap();
        assert!(matches!(
            gradient_protocol_one(&chain, &CMatrix::identity(3, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn update_moves_only_the_touched_segment() {
        let seq = PulseSequence::new(0.5, alloc::vec![1.0, 2.0, 3.0]).unwrap();
        let k = GradientSequence(alloc::vec![0.0, 0.5, 0.0]);
        let next = update_pulse(&seq, &k, 0.1, UpdateSign::Descent).unwrap();
        assert_eq!(next.amplitudes()[0], seq.amplitudes()[0]);
        assert_eq!(next.amplitudes()[2], seq.amplitudes()[2]);
        assert!((next.amplitudes()[1] - (2.0 - 0.05)).abs() < 1e-15);
        let zero = GradientSequence(alloc::vec![0.0; 3]);
        assert_eq!(update_pulse(&seq, &zero, 0.1, UpdateSign::Descent).unwrap(), seq);
        assert!(matches!(
            update_pulse(&seq, &GradientSequence(alloc::vec![0.0; 2]), 0.1, UpdateSign::Descent),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_steps_is_a_config_error() {
        let cfg = OptimizerConfig { max_steps: 0, ..OptimizerConfig::protocol_one() };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }
}
