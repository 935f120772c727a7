//! Piecewise-constant propagation in Hilbert space and in Liouville space.
//!
//! Segment `m` (1-based in the docs, 0-based in storage) evolves under
//! `H_{c;m} = H_0(g) + mu_m n_A` in the coupled frame and `H_{d;m} = H_0(0) +
//! mu_m n_A` in the decoupled frame used for phase bookkeeping.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::linalg::{
    c, expm, hermiticity_defect, identity, kron, matmul, matvec, unvectorize, vectorize, CMatrix,
    C64, ZERO,
};
use crate::pulse::PulseSequence;
use crate::system::{DeviceParams, SystemModel, DIM, LEVELS};

/// Dimension of Liouville space.
pub const LDIM: usize = DIM * DIM;

#[derive(Debug, Clone)]
pub struct PropagatorChain {
    tau: f64,
    coupled: Vec<CMatrix>,
    decoupled: Vec<CMatrix>,
    partial_coupled: Vec<CMatrix>,
    partial_decoupled: Vec<CMatrix>,
}

impl PropagatorChain {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.coupled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coupled.is_empty()
    }

    /// `U_{c;m}` for 0-based `m`.
    pub fn coupled_segment(&self, m: usize) -> &CMatrix {
        &self.coupled[m]
    }

    pub fn decoupled_segment(&self, m: usize) -> &CMatrix {
        &self.decoupled[m]
    }

    /// `R_{c;m} = U_{c;m} ... U_{c;1}` for 0-based `m`.
    pub fn partial_coupled(&self, m: usize) -> &CMatrix {
        &self.partial_coupled[m]
    }

    pub fn partial_decoupled(&self, m: usize) -> &CMatrix {
        &self.partial_decoupled[m]
    }

    pub fn total_coupled(&self) -> &CMatrix {
        self.partial_coupled.last().expect("non-empty chain")
    }

    pub fn total_decoupled(&self) -> &CMatrix {
        self.partial_decoupled.last().expect("non-empty chain")
    }

    /// Gate in the decoupled frame, `U_d† U_c`.
    pub fn gate(&self) -> CMatrix {
        matmul(&self.total_decoupled().adjoint(), self.total_coupled())
    }
}

fn segment_unitary(model: &SystemModel, mu: f64, tau: f64, coupled: bool) -> CMatrix {
    expm(&(model.hamiltonian(mu, coupled) * c(0.0, -tau)))
}

pub fn propagate_unitary(seq: &PulseSequence, model: &SystemModel) -> Result<PropagatorChain> {
    propagate_unitary_with(seq, model, &Sequential)
}

pub fn propagate_unitary_with<E: Executor>(
    seq: &PulseSequence,
    model: &SystemModel,
    exec: &E,
) -> Result<PropagatorChain> {
    let tau = seq.tau();
    let amps = seq.amplitudes();
    let pairs = exec.map(amps.len(), |m| {
        (segment_unitary(model, amps[m], tau, true), segment_unitary(model, amps[m], tau, false))
    });
    let (coupled, decoupled): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    if !coupled.iter().chain(&decoupled).all(crate::linalg::is_finite) {
        return Err(Error::NonFinite("segment propagator"));
    }
    let partial_coupled = accumulate(&coupled);
    let partial_decoupled = accumulate(&decoupled);
    Ok(PropagatorChain { tau, coupled, decoupled, partial_coupled, partial_decoupled })
}

fn accumulate(segments: &[CMatrix]) -> Vec<CMatrix> {
    let mut out: Vec<CMatrix> = Vec::with_capacity(segments.len());
    for u in segments {
        let next = match out.last() {
            Some(prev) => matmul(u, prev),
            None => u.clone(),
        };
        out.push(next);
    }
    out
}

/// Generator of `rho' = -i L rho` on row-major vectorized density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LiouvilleSuperoperator {
    pub matrix: CMatrix,
    pub dissipative: bool,
}

/// Commutator superoperator `rho -> [A, rho]`.
pub fn commutator_superoperator(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    kron(a, &identity(n)) - kron(&identity(n), &a.transpose())
}

fn qutrit_dissipator(t1: f64, tphi: f64) -> [[C64; LEVELS * LEVELS]; LEVELS * LEVELS] {
    let mut out = [[ZERO; LEVELS * LEVELS]; LEVELS * LEVELS];
    let g1 = 1.0 / t1;
    let gphi = 1.0 / tphi;
    for k1 in 0..LEVELS {
        for l1 in 0..LEVELS {
            let row = k1 * LEVELS + l1;
            let diag = -0.5 * (k1 + l1) as f64 * g1 - gphi * ((k1 as f64 - l1 as f64).powi(2));
            out[row][row] += c(0.0, diag);
            if k1 + 1 < LEVELS && l1 + 1 < LEVELS {
                let col = (k1 + 1) * LEVELS + (l1 + 1);
                out[row][col] += c(0.0, g1 * (((k1 + 1) * (l1 + 1)) as f64).sqrt());
            }
        }
    }
    out
}

/// Relaxation and dephasing of both transmons, already multiplied by `i` so
/// that it adds directly to the commutator part.
pub fn dissipation_superoperator(params: &DeviceParams) -> CMatrix {
    let da = qutrit_dissipator(params.t1_a, params.tphi_a);
    let db = qutrit_dissipator(params.t1_b, params.tphi_b);
    let mut out = CMatrix::zeros(LDIM, LDIM);
    let idx = |k: usize, l: usize| k * DIM + l;
    for ka in 0..LEVELS {
        for kb in 0..LEVELS {
            for la in 0..LEVELS {
                for lb in 0..LEVELS {
                    let row = idx(ka * LEVELS + kb, la * LEVELS + lb);
                    for ka2 in 0..LEVELS {
                        for la2 in 0..LEVELS {
                            let v = da[ka * LEVELS + la][ka2 * LEVELS + la2];
                            if v != ZERO {
                                out[(row, idx(ka2 * LEVELS + kb, la2 * LEVELS + lb))] += v;
                            }
                        }
                    }
                    for kb2 in 0..LEVELS {
                        for lb2 in 0..LEVELS {
                            let v = db[kb * LEVELS + lb][kb2 * LEVELS + lb2];
                            if v != ZERO {
                                out[(row, idx(ka * LEVELS + kb2, la * LEVELS + lb2))] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn build_liouvillian(
    h: &CMatrix,
    params: &DeviceParams,
    dissipative: bool,
) -> Result<LiouvilleSuperoperator> {
    if h.nrows() != DIM || h.ncols() != DIM {
        return Err(Error::DimensionMismatch { expected: DIM, found: h.nrows() });
    }
    let defect = hermiticity_defect(h);
    if defect > 1e-12 * (1.0 + crate::linalg::max_abs(h)) {
        return Err(Error::NonHermitianInput(defect));
    }
    let mut matrix = commutator_superoperator(h);
    if dissipative {
        matrix += dissipation_superoperator(params);
    }
    Ok(LiouvilleSuperoperator { matrix, dissipative })
}

#[derive(Debug, Clone)]
pub struct SuperoperatorChain {
    tau: f64,
    coupled: Vec<CMatrix>,
    coupled_inverse: Vec<CMatrix>,
    decoupled: Vec<CMatrix>,
    decoupled_inverse: Vec<CMatrix>,
    total_coupled: CMatrix,
    total_decoupled: CMatrix,
    total_decoupled_inverse: CMatrix,
}

pub fn propagate_superoperator(seq: &PulseSequence, model: &SystemModel) -> Result<SuperoperatorChain> {
    propagate_superoperator_with(seq, model, &Sequential)
}

pub fn propagate_superoperator_with<E: Executor>(
    seq: &PulseSequence,
    model: &SystemModel,
    exec: &E,
) -> Result<SuperoperatorChain> {
    let tau = seq.tau();
    let amps = seq.amplitudes();
    let dissipation = model.dissipative.then(|| dissipation_superoperator(&model.params));
    let segs = exec.map(amps.len(), |m| {
        let mut lc = commutator_superoperator(&model.hamiltonian(amps[m], true));
        if let Some(d) = &dissipation {
            lc += d;
        }
        let ld = commutator_superoperator(&model.hamiltonian(amps[m], false));
        [
            expm(&(&lc * c(0.0, -tau))),
            expm(&(&lc * c(0.0, tau))),
            expm(&(&ld * c(0.0, -tau))),
            expm(&(&ld * c(0.0, tau))),
        ]
    });
    let mut coupled = Vec::with_capacity(segs.len());
    let mut coupled_inverse = Vec::with_capacity(segs.len());
    let mut decoupled = Vec::with_capacity(segs.len());
    let mut decoupled_inverse = Vec::with_capacity(segs.len());
    for [a, b, d, e] in segs {
        if ![&a, &b, &d, &e].iter().all(|m| crate::linalg::is_finite(m)) {
            return Err(Error::NonFinite("segment superoperator"));
        }
        coupled.push(a);
        coupled_inverse.push(b);
        decoupled.push(d);
        decoupled_inverse.push(e);
    }
    let total_coupled = ordered_product(&coupled);
    let total_decoupled = ordered_product(&decoupled);
    let mut total_decoupled_inverse = identity(LDIM);
    for inv in &decoupled_inverse {
        total_decoupled_inverse = matmul(&total_decoupled_inverse, inv);
    }
    Ok(SuperoperatorChain {
        tau,
        coupled,
        coupled_inverse,
        decoupled,
        decoupled_inverse,
        total_coupled,
        total_decoupled,
        total_decoupled_inverse,
    })
}

/// `segments[M-1] ... segments[0]`.
pub fn ordered_product(segments: &[CMatrix]) -> CMatrix {
    let mut out = identity(segments[0].nrows());
    for s in segments {
        out = matmul(s, &out);
    }
    out
}

impl SuperoperatorChain {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.coupled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coupled.is_empty()
    }

    pub fn coupled_segment(&self, m: usize) -> &CMatrix {
        &self.coupled[m]
    }

    pub fn coupled_segment_inverse(&self, m: usize) -> &CMatrix {
        &self.coupled_inverse[m]
    }

    pub fn decoupled_segment(&self, m: usize) -> &CMatrix {
        &self.decoupled[m]
    }

    pub fn decoupled_segment_inverse(&self, m: usize) -> &CMatrix {
        &self.decoupled_inverse[m]
    }

    pub fn total_coupled(&self) -> &CMatrix {
        &self.total_coupled
    }

    pub fn total_decoupled(&self) -> &CMatrix {
        &self.total_decoupled
    }

    pub fn total_decoupled_inverse(&self) -> &CMatrix {
        &self.total_decoupled_inverse
    }

    /// Gate superoperator `U_d^{-1} U_c`.
    pub fn gate(&self) -> CMatrix {
        matmul(&self.total_decoupled_inverse, &self.total_coupled)
    }

    /// `rho(T) = U_d^{-1} U_c rho(0)`.
    pub fn evolve(&self, rho0: &CMatrix) -> CMatrix {
        let v = matvec(&self.total_coupled, &vectorize(rho0));
        unvectorize(&matvec(&self.total_decoupled_inverse, &v))
    }

    /// `R_{c;m} = U_{c;m+1}^{-1} ... U_{c;M}^{-1} U_d` for 0-based `m`.
    pub fn partials_coupled(&self) -> Vec<CMatrix> {
        let m = self.len();
        let mut out = alloc::vec![CMatrix::zeros(0, 0); m];
        let mut acc = self.total_decoupled.clone();
        for k in (0..m).rev() {
            out[k] = acc.clone();
            acc = matmul(&self.coupled_inverse[k], &acc);
        }
        out
    }

    /// `R_{d;m} = U_{d;m} ... U_{d;1}` for 0-based `m`.
    pub fn partials_decoupled(&self) -> Vec<CMatrix> {
        let mut out: Vec<CMatrix> = Vec::with_capacity(self.len());
        for u in &self.decoupled {
            let next = match out.last() {
                Some(prev) => matmul(u, prev),
                None => u.clone(),
            };
            out.push(next);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{conjugate, max_abs, trace};
    use crate::system::{basis_index, Coupling};

    fn model() -> SystemModel {
        SystemModel::new(DeviceParams::paper()).unwrap()
    }

    #[test]
    fn segment_propagators_are_unitary() {
        let seq = crate::pulse::flattop(&crate::pulse::Flattop::paper(), 0.5).unwrap();
        let chain = propagate_unitary(&seq, &model()).unwrap();
        for m in 0..chain.len() {
            for u in [chain.coupled_segment(m), chain.decoupled_segment(m)] {
                let err = max_abs(&(matmul(&u.adjoint(), u) - identity(DIM)));
                assert!(err < 1e-10, "{err}");
            }
        }
    }

    #[test]
    fn decoupled_single_segment_gate_is_identity() {
        let m = model().with_coupling(Coupling::Off);
        let seq = PulseSequence::zeros(0.5, 1).unwrap();
        let gate = propagate_unitary(&seq, &m).unwrap().gate();
        assert!(max_abs(&(gate - identity(DIM))) < 1e-14);
    }

    #[test]
    fn decay_of_first_excited_state_feeds_ground() {
        let p = DeviceParams::paper();
        let l = build_liouvillian(&CMatrix::zeros(DIM, DIM), &p, true).unwrap();
        let mut rho = CMatrix::zeros(DIM, DIM);
        let e = basis_index(1, 0);
        rho[(e, e)] = c(1.0, 0.0);
        let rate = matvec(&l.matrix, &vectorize(&rho)) * c(0.0, -1.0);
        let g = basis_index(0, 0);
        assert!((rate[g * DIM + g].re - 1.0 / p.t1_a).abs() < 1e-15);
    }

    #[test]
    fn trace_functional_is_conserved() {
        let p = DeviceParams::paper();
        let h = model().hamiltonian(-1.5, true);
        let l = build_liouvillian(&h, &p, true).unwrap();
        let u = expm(&(&l.matrix * c(0.0, -20.0)));
        let tr = vectorize(&identity(DIM)).transpose();
        let left = &tr * &u;
        assert!(left.iter().zip(tr.iter()).all(|(a, b)| (a - b).norm() < 1e-10));
    }

    #[test]
    fn unitary_and_liouville_paths_agree() {
        let m = model().with_dissipation(false);
        let seq = PulseSequence::new(0.5, alloc::vec![-1.0, -1.8, -1.2, 0.3]).unwrap();
        let uchain = propagate_unitary(&seq, &m).unwrap();
        let schain = propagate_superoperator(&seq, &m).unwrap();
        let mut rho = CMatrix::from_fn(DIM, DIM, |i, j| c(1.0 / (1 + i + j) as f64, 0.1 * (i as f64 - j as f64)));
        rho /= trace(&rho);
        let a = schain.evolve(&rho);
        let b = conjugate(&uchain.gate(), &rho);
        assert!(max_abs(&(a - b)) < 1e-9);
    }

    #[test]
    fn partials_are_consistent() {
        let m = model();
        let seq = PulseSequence::new(0.5, alloc::vec![-1.0, -1.8, -1.2]).unwrap();
        let chain = propagate_superoperator(&seq, &m).unwrap();
        let rc = chain.partials_coupled();
        assert!(max_abs(&(&rc[2] - chain.total_decoupled())) < 1e-14);
        let rd = chain.partials_decoupled();
        assert!(max_abs(&(&rd[2] - chain.total_decoupled())) < 1e-12);
        let id = matmul(chain.total_decoupled(), chain.total_decoupled_inverse());
        assert!(max_abs(&(id - identity(LDIM))) < 1e-12);
    }
}
