use czgrape_core::dynamics::{propagate_superoperator, propagate_unitary};
use czgrape_core::grape::*;
use czgrape_core::linalg::restrict;
use czgrape_core::pulse::{flattop, Flattop, PulseSequence};
use czgrape_core::system::{DeviceParams, SystemModel, FIVE_STATE};
use czgrape_core::tomography::{optimization_inputs, ProductState};

const H: f64 = 1e-5;

fn model(dissipative: bool) -> SystemModel {
    SystemModel::new(DeviceParams::paper()).unwrap().with_dissipation(dissipative)
}

fn nudged(seq: &PulseSequence, m: usize, d: f64) -> PulseSequence {
    let mut a = seq.amplitudes().to_vec();
    a[m] += d;
    PulseSequence::new(seq.tau(), a).unwrap()
}

fn unitary_objective_at(seq: &PulseSequence, model: &SystemModel) -> f64 {
    unitary_objective(&propagate_unitary(seq, model).unwrap())
}

fn state_objective_at(seq: &PulseSequence, model: &SystemModel, input: ProductState) -> f64 {
    let rho = propagate_superoperator(seq, model).unwrap().evolve(&input.density9());
    state_objective(&rho, &ideal_final_state(input)).unwrap()
}

/// Normwise relative mismatch between the analytic gradient and central
/// differences on the sampled components.
fn mismatch(k: &[f64], fd: &[(usize, f64)]) -> f64 {
    let num: f64 = fd.iter().map(|&(m, v)| (k[m] - v).powi(2)).sum();
    let den: f64 = fd.iter().map(|&(_, v)| v * v).sum();
    (num / den).sqrt()
}

fn central<F: Fn(&PulseSequence) -> f64>(seq: &PulseSequence, m: usize, f: F) -> f64 {
    (f(&nudged(seq, m, H)) - f(&nudged(seq, m, -H))) / (2.0 * H)
}

fn protocol_one_mismatch(tau: f64) -> f64 {
    let seq = flattop(&Flattop::paper(), tau).unwrap();
    let m = model(false);
    let chain = propagate_unitary(&seq, &m).unwrap();
    let k = gradient_protocol_one(&chain, &restrict(&chain.gate(), &FIVE_STATE)).unwrap();
    let fd: Vec<(usize, f64)> = (0..seq.len()).map(|i| (i, central(&seq, i, |s| unitary_objective_at(s, &m)))).collect();
    mismatch(&k.0, &fd)
}

fn protocol_two_mismatch(tau: f64) -> f64 {
    let seq = flattop(&Flattop::paper(), tau).unwrap();
    let m = model(true);
    let input = optimization_inputs()[0];
    let chain = propagate_superoperator(&seq, &m).unwrap();
    let rho = chain.evolve(&input.density9());
    let k = gradient_protocol_two(&chain, &rho, &ideal_final_state(input)).unwrap();
    let stride = seq.len() / 10;
    let fd: Vec<(usize, f64)> =
        (0..seq.len()).step_by(stride).map(|i| (i, central(&seq, i, |s| state_objective_at(s, &m, input)))).collect();
    mismatch(&k.0, &fd)
}

#[test]
fn protocol_one_gradient_matches_finite_differences() {
    let coarse = protocol_one_mismatch(0.5);
    let fine = protocol_one_mismatch(0.25);
    println!("protocol I mismatch: {coarse:.4} -> {fine:.4}");
    assert!(coarse < 0.05);
    assert!(fine < 0.6 * coarse);
}

#[test]
fn protocol_two_gradient_matches_finite_differences() {
    let coarse = protocol_two_mismatch(0.5);
    let fine = protocol_two_mismatch(0.25);
    println!("protocol II mismatch: {coarse:.4} -> {fine:.4}");
    assert!(coarse < 0.05);
    assert!(fine < 0.6 * coarse);
}
