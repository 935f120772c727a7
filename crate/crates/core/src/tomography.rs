//! State and process tomography on the computational subspace.
//!
//! Two-qubit operators use the computational ordering of [`crate::system`].
//! The operator basis is `E_m = E_A ⊗ E_B` with `E in {I, X, Y, Z}` and
//! `m = 4 a + b`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::FRAC_1_SQRT_2;

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::linalg::{
    c, conjugate, expm, hermitian_eigen, hermitian_part, identity, inner, matmul, polar_unitary,
    project_density, trace, CMatrix, C64, I, ONE, ZERO,
};
use crate::powell::{powell, PowellOptions};
use crate::system::{embed_computational, ideal_cz4, local_qutrit, two_qubit, ReadoutFidelities, DIM, LEVELS};

pub const PAULI_LABELS: [char; 4] = ['I', 'X', 'Y', 'Z'];

pub fn pauli(k: usize) -> CMatrix {
    let m = |a: [C64; 4]| CMatrix::from_row_slice(2, 2, &a);
    match k {
        0 => m([ONE, ZERO, ZERO, ONE]),
        1 => m([ZERO, ONE, ONE, ZERO]),
        2 => m([ZERO, -I, I, ZERO]),
        3 => m([ONE, ZERO, ZERO, -ONE]),
        _ => panic!("pauli index {k} out of range"),
    }
}

/// The sixteen two-qubit Pauli operators `II, IX, ..., ZZ`.
pub fn pauli_basis() -> Vec<CMatrix> {
    (0..16).map(|m| two_qubit(&pauli(m / 4), &pauli(m % 4))).collect()
}

pub fn pauli_label(m: usize) -> [char; 2] {
    [PAULI_LABELS[m / 4], PAULI_LABELS[m % 4]]
}

/// Single-qubit preparations used for tomography and as optimization inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prep {
    Zero,
    One,
    /// `(|0> + |1>)/√2`
    Plus,
    /// `(|0> - |1>)/√2`
    Minus,
    /// `(|0> + i|1>)/√2`
    PlusI,
    /// `(|0> - i|1>)/√2`
    MinusI,
}

impl Prep {
    pub const ALL: [Prep; 6] = [Prep::Zero, Prep::One, Prep::Plus, Prep::Minus, Prep::PlusI, Prep::MinusI];

    pub fn amplitudes(self) -> [C64; 2] {
        let h = FRAC_1_SQRT_2;
        match self {
            Prep::Zero => [ONE, ZERO],
            Prep::One => [ZERO, ONE],
            Prep::Plus => [c(h, 0.0), c(h, 0.0)],
            Prep::Minus => [c(h, 0.0), c(-h, 0.0)],
            Prep::PlusI => [c(h, 0.0), c(0.0, h)],
            Prep::MinusI => [c(h, 0.0), c(0.0, -h)],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Prep::Zero => "0",
            Prep::One => "1",
            Prep::Plus => "+",
            Prep::Minus => "-",
            Prep::PlusI => "+i",
            Prep::MinusI => "-i",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProductState {
    pub a: Prep,
    pub b: Prep,
}

impl ProductState {
    pub const fn new(a: Prep, b: Prep) -> Self {
        Self { a, b }
    }

    /// State vector on the computational subspace.
    pub fn ket4(self) -> [C64; 4] {
        let (a, b) = (self.a.amplitudes(), self.b.amplitudes());
        [a[0] * b[0], a[1] * b[0], a[0] * b[1], a[1] * b[1]]
    }

    pub fn density4(self) -> CMatrix {
        let k = self.ket4();
        CMatrix::from_fn(4, 4, |i, j| k[i] * k[j].conj())
    }

    pub fn density9(self) -> CMatrix {
        embed_computational(&self.density4())
    }
}

/// The 36 tomography inputs, ordered with qubit B varying fastest.
pub fn state_set_36() -> Vec<ProductState> {
    Prep::ALL
        .iter()
        .flat_map(|&a| Prep::ALL.iter().map(move |&b| ProductState::new(a, b)))
        .collect()
}

/// The four inputs used for state-based optimization.
pub fn optimization_inputs() -> [ProductState; 4] {
    [
        ProductState::new(Prep::Plus, Prep::PlusI),
        ProductState::new(Prep::Minus, Prep::MinusI),
        ProductState::new(Prep::PlusI, Prep::Plus),
        ProductState::new(Prep::MinusI, Prep::Minus),
    ]
}

/// 16x16 process matrix in the Pauli basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMatrix(pub CMatrix);

impl ProcessMatrix {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    /// Applies `rho -> sum_mn chi_mn E_m rho E_n†` to a 4x4 state.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let basis = pauli_basis();
        let mut out = CMatrix::zeros(4, 4);
        for (m, bm) in basis.iter().enumerate() {
            let left = matmul(bm, rho);
            for (n, bn) in basis.iter().enumerate() {
                let chi = self.0[(m, n)];
                if chi != ZERO {
                    out += matmul(&left, bn) * chi;
                }
            }
        }
        out
    }
}

/// Pauli expansion coefficients `c_m = Tr(E_m U) / 4`.
pub fn pauli_coefficients(u: &CMatrix) -> [C64; 16] {
    let basis = pauli_basis();
    core::array::from_fn(|m| inner(&basis[m], u) * 0.25)
}

/// `chi = c c†` for a unitary (or any Kraus operator) `u`.
pub fn chi_of_unitary(u: &CMatrix) -> ProcessMatrix {
    chi_of_kraus(core::slice::from_ref(u))
}

pub fn chi_of_kraus(kraus: &[CMatrix]) -> ProcessMatrix {
    let mut chi = CMatrix::zeros(16, 16);
    for k in kraus {
        let cf = pauli_coefficients(k);
        for m in 0..16 {
            for n in 0..16 {
                chi[(m, n)] += cf[m] * cf[n].conj();
            }
        }
    }
    ProcessMatrix(chi)
}

pub fn ideal_cz_chi() -> ProcessMatrix {
    chi_of_unitary(&ideal_cz4())
}

/// `Re Tr(chi† chi_ideal)`.
pub fn process_fidelity(chi: &ProcessMatrix, chi_ideal: &ProcessMatrix) -> f64 {
    inner(&chi.0, &chi_ideal.0).re
}

/// `|Tr(U† V)| / n`.
pub fn operator_fidelity(u: &CMatrix, v: &CMatrix) -> f64 {
    inner(u, v).norm() / u.nrows() as f64
}

/// `Re Tr(rho rho_ideal)`.
pub fn state_fidelity(rho: &CMatrix, rho_ideal: &CMatrix) -> f64 {
    inner(rho, rho_ideal).re
}

/// Single-qubit readout confusion, `m[read][true]`.
fn qubit_confusion(f0: f64, f1: f64) -> [[f64; 2]; 2] {
    [[f0, 1.0 - f1], [1.0 - f0, f1]]
}

fn invert2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

/// Outcome index `s_A + 2 s_B`.
fn apply_pair(ma: [[f64; 2]; 2], mb: [[f64; 2]; 2], p: [f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for ra in 0..2 {
        for rb in 0..2 {
            let mut acc = 0.0;
            for ta in 0..2 {
                for tb in 0..2 {
                    acc += ma[ra][ta] * mb[rb][tb] * p[ta + 2 * tb];
                }
            }
            out[ra + 2 * rb] = acc;
        }
    }
    out
}

/// Independent readout errors on both qubits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutModel {
    pub fidelities: ReadoutFidelities,
}

impl ReadoutModel {
    pub fn new(fidelities: ReadoutFidelities) -> Self {
        Self { fidelities }
    }

    fn factors(&self) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
        let f = self.fidelities;
        (qubit_confusion(f.f0_a, f.f1_a), qubit_confusion(f.f0_b, f.f1_b))
    }

    /// True outcome probabilities to observed ones.
    pub fn apply(&self, p: [f64; 4]) -> [f64; 4] {
        let (a, b) = self.factors();
        apply_pair(a, b, p)
    }

    /// Observed frequencies back to estimated true probabilities.
    pub fn correct(&self, p: [f64; 4]) -> [f64; 4] {
        let (a, b) = self.factors();
        apply_pair(invert2(a), invert2(b), p)
    }
}

/// Measurement basis of one qubit in a tomography setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    fn pauli_index(self) -> usize {
        match self {
            Axis::X => 1,
            Axis::Y => 2,
            Axis::Z => 3,
        }
    }

    /// Pre-measurement rotation mapping the `+1` eigenstate to `|0>`.
    pub fn rotation(self) -> CMatrix {
        let h = FRAC_1_SQRT_2;
        match self {
            // R_y(-π/2)
            Axis::X => CMatrix::from_row_slice(2, 2, &[c(h, 0.0), c(h, 0.0), c(-h, 0.0), c(h, 0.0)]),
            // R_x(π/2)
            Axis::Y => CMatrix::from_row_slice(2, 2, &[c(h, 0.0), c(0.0, -h), c(0.0, -h), c(h, 0.0)]),
            Axis::Z => identity(2),
        }
    }
}

/// The nine product settings, qubit B axis varying fastest.
pub fn settings() -> [(Axis, Axis); 9] {
    core::array::from_fn(|k| (Axis::ALL[k / 3], Axis::ALL[k % 3]))
}

/// Level populations `[j_A][j_B]` after the pre-measurement rotations of
/// one setting.
pub fn setting_populations(rho9: &CMatrix, setting: (Axis, Axis)) -> [[f64; LEVELS]; LEVELS] {
    let u = local_qutrit(&setting.0.rotation(), &setting.1.rotation());
    let r = conjugate(&u, rho9);
    core::array::from_fn(|ja| core::array::from_fn(|jb| r[(ja * LEVELS + jb, ja * LEVELS + jb)].re))
}

/// Outcome probabilities of one setting on a qutrit-space state. A transmon
/// found in `|2>` reads out as `1`.
pub fn setting_probabilities(rho9: &CMatrix, setting: (Axis, Axis)) -> [f64; 4] {
    let pops = setting_populations(rho9, setting);
    let mut p = [0.0; 4];
    for (ja, row) in pops.iter().enumerate() {
        for (jb, v) in row.iter().enumerate() {
            p[usize::from(ja > 0) + 2 * usize::from(jb > 0)] += v;
        }
    }
    p
}

/// Raw tomography data for one two-qubit state.
#[derive(Debug, Clone, PartialEq)]
pub enum QstData {
    /// `<E_A ⊗ E_B>` at index `4 a + b`; the `II` entry is ignored.
    Expectations(Vec<f64>),
    /// Outcome probabilities (index `s_A + 2 s_B`) for the nine settings
    /// ordered as [`settings`].
    SettingFrequencies(Vec<[f64; 4]>),
}

pub fn expectations_from_frequencies(freqs: &[[f64; 4]]) -> Result<[f64; 16]> {
    if freqs.len() != 9 {
        return Err(Error::InsufficientData(format!("expected 9 settings, got {}", freqs.len())));
    }
    if freqs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("missing outcome frequencies".into()));
    }
    let mut sums = [0.0; 16];
    let mut counts = [0usize; 16];
    for (k, (sa, sb)) in settings().iter().enumerate() {
        let p = freqs[k];
        let za = p[0] + p[2] - p[1] - p[3];
        let zb = p[0] + p[1] - p[2] - p[3];
        let zz = p[0] - p[1] - p[2] + p[3];
        let (ia, ib) = (sa.pauli_index(), sb.pauli_index());
        for (idx, v) in [(4 * ia, za), (ib, zb), (4 * ia + ib, zz)] {
            sums[idx] += v;
            counts[idx] += 1;
        }
    }
    let mut out = [0.0; 16];
    out[0] = 1.0;
    for m in 1..16 {
        out[m] = sums[m] / counts[m] as f64;
    }
    Ok(out)
}

/// Linear-inversion state tomography followed by projection onto density
/// matrices.
pub fn qst(data: &QstData) -> Result<CMatrix> {
    let e = match data {
        QstData::Expectations(v) => {
            if v.len() != 16 {
                return Err(Error::InsufficientData(format!("expected 16 expectations, got {}", v.len())));
            }
            if v[1..].iter().any(|x| !x.is_finite()) {
                return Err(Error::InsufficientData("missing Pauli expectation".into()));
            }
            let mut e = [0.0; 16];
            e.copy_from_slice(v);
            e[0] = 1.0;
            e
        }
        QstData::SettingFrequencies(f) => expectations_from_frequencies(f)?,
    };
    let basis = pauli_basis();
    let mut rho = CMatrix::zeros(4, 4);
    for (m, op) in basis.iter().enumerate() {
        rho += op * c(0.25 * e[m], 0.0);
    }
    Ok(project_density(&rho))
}

/// Exact Pauli expectations of a 4x4 state.
pub fn pauli_expectations(rho: &CMatrix) -> Vec<f64> {
    pauli_basis().iter().map(|op| trace(&matmul(op, rho)).re).collect()
}

/// Least-squares process tomography over the 36 product inputs.
#[derive(Debug, Clone)]
pub struct ProcessTomography {
    inputs: Vec<ProductState>,
    pseudo_inverse: CMatrix,
}

impl ProcessTomography {
    pub fn new() -> Result<Self> {
        let inputs = state_set_36();
        let basis = pauli_basis();
        let rows = inputs.len() * 16;
        let mut a = CMatrix::zeros(rows, 256);
        for (j, s) in inputs.iter().enumerate() {
            let rho = s.density4();
            for m in 0..16 {
                let left = matmul(&basis[m], &rho);
                for n in 0..16 {
                    let term = matmul(&left, &basis[n]);
                    for r in 0..4 {
                        for q in 0..4 {
                            a[(16 * j + 4 * r + q, 16 * m + n)] = term[(r, q)];
                        }
                    }
                }
            }
        }
        let a_dag = a.adjoint();
        let gram = matmul(&a_dag, &a);
        let chol = Cholesky::new(gram)
            .ok_or_else(|| Error::RankDeficient("process tomography normal equations".into()))?;
        let pseudo_inverse = chol.solve(&a_dag);
        Ok(Self { inputs, pseudo_inverse })
    }

    pub fn inputs(&self) -> &[ProductState] {
        &self.inputs
    }

    /// Reconstructs `chi` from the output states of the 36 inputs, in
    /// [`state_set_36`] order.
    pub fn reconstruct(&self, outputs: &[CMatrix]) -> Result<ProcessMatrix> {
        if outputs.len() != self.inputs.len() {
            return Err(Error::InsufficientData(format!(
                "expected {} output states, got {}",
                self.inputs.len(),
                outputs.len()
            )));
        }
        let mut y = crate::linalg::CVector::zeros(outputs.len() * 16);
        for (j, rho) in outputs.iter().enumerate() {
            if rho.nrows() != 4 || rho.ncols() != 4 {
                return Err(Error::DimensionMismatch { expected: 4, found: rho.nrows() });
            }
            for r in 0..4 {
                for q in 0..4 {
                    y[16 * j + 4 * r + q] = rho[(r, q)];
                }
            }
        }
        let x = crate::linalg::matvec(&self.pseudo_inverse, &y);
        let chi = CMatrix::from_fn(16, 16, |m, n| x[16 * m + n]);
        Ok(ProcessMatrix(hermitian_part(&chi)))
    }

    /// Runs every input through `channel` and reconstructs `chi`.
    pub fn qpt<F: FnMut(&CMatrix) -> Result<CMatrix>>(&self, mut channel: F) -> Result<ProcessMatrix> {
        let outputs = self
            .inputs
            .iter()
            .map(|s| channel(&s.density4()))
            .collect::<Result<Vec<_>>>()?;
        self.reconstruct(&outputs)
    }
}

/// Best-fit unitary on the computational subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOperator {
    pub matrix: CMatrix,
    /// Coefficients `x_m` of `H = sum_m x_m E_m` in `U = U_0 exp(-i H)`.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowellFit {
    pub operator: GateOperator,
    /// `||chi(U) - chi_exp||_F^2` at the returned point.
    pub objective: f64,
    pub converged: bool,
    pub sweeps: usize,
}

/// Unitary whose `chi` is closest to the dominant rank-one part of `chi`.
pub fn principal_operator(chi: &ProcessMatrix) -> CMatrix {
    let (_, vecs) = hermitian_eigen(&chi.0);
    let v = vecs.column(15);
    let basis = pauli_basis();
    let mut u = CMatrix::zeros(4, 4);
    for m in 0..16 {
        u += &basis[m] * v[m];
    }
    polar_unitary(&u)
}

pub fn parameterized_unitary(u0: &CMatrix, x: &[f64], basis: &[CMatrix]) -> CMatrix {
    let mut h = CMatrix::zeros(4, 4);
    for (xm, e) in x.iter().zip(basis) {
        h += e * c(*xm, 0.0);
    }
    matmul(u0, &expm(&(h * c(0.0, -1.0))))
}

/// Fits a unitary to `chi_exp` by Powell's method, starting from `initial`.
/// The global phase is chosen to make `Tr(U_CZ† U)` real and positive.
pub fn powell_fit(chi_exp: &ProcessMatrix, initial: &CMatrix, opts: &PowellOptions) -> Result<PowellFit> {
    if chi_exp.0.nrows() != 16 || chi_exp.0.ncols() != 16 {
        return Err(Error::DimensionMismatch { expected: 16, found: chi_exp.0.nrows() });
    }
    if initial.nrows() != 4 || initial.ncols() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, found: initial.nrows() });
    }
    let defect = crate::linalg::hermiticity_defect(&chi_exp.0);
    if defect > 1e-8 {
        return Err(Error::NonHermitianInput(defect));
    }
    let basis = pauli_basis();
    let u0 = polar_unitary(initial);
    let objective = |x: &[f64]| {
        let u = parameterized_unitary(&u0, x, &basis);
        (chi_of_unitary(&u).0 - &chi_exp.0).norm_squared()
    };
    let res = powell(objective, &[0.0; 16], opts);
    let mut x = res.x;
    // chi does not see the global phase; pick the one closest to CZ.
    let overlap = trace(&matmul(&ideal_cz4().adjoint(), &parameterized_unitary(&u0, &x, &basis)));
    if overlap.norm() > 1e-12 {
        x[0] += overlap.arg();
    }
    let matrix = parameterized_unitary(&u0, &x, &basis);
    Ok(PowellFit {
        operator: GateOperator { matrix, params: x },
        objective: res.value,
        converged: res.converged,
        sweeps: res.sweeps,
    })
}

/// Default options for operator extraction.
pub fn default_fit_options() -> PowellOptions {
    PowellOptions { max_sweeps: 200, ftol: 1e-10, abs_tol: 1e-14, line_tol: 1e-6, initial_step: 0.05 }
}

/// Embeds a 4x4 operator into the qutrit space with identity on the
/// remaining levels.
pub fn embed_with_identity(op: &CMatrix) -> CMatrix {
    let mut out = identity(DIM);
    for (r, &i) in crate::system::COMPUTATIONAL.iter().enumerate() {
        for (s, &j) in crate::system::COMPUTATIONAL.iter().enumerate() {
            out[(i, j)] = op[(r, s)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn cz_chi_has_sixteen_corner_entries() {
        let chi = ideal_cz_chi();
        let corners = [0usize, 3, 12, 15];
        for m in 0..16 {
            for n in 0..16 {
                let v = chi.0[(m, n)];
                if corners.contains(&m) && corners.contains(&n) {
                    assert!((v.norm() - 0.25).abs() < 1e-15);
                    assert!(v.im.abs() < 1e-15);
                } else {
                    assert!(v.norm() < 1e-15);
                }
            }
        }
        assert!((chi.0[(15, 0)].re + 0.25).abs() < 1e-15);
    }

    #[test]
    fn operator_fidelity_cz_vs_identity() {
        assert!((operator_fidelity(&ideal_cz4(), &identity(4)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn qpt_of_identity_and_depolarizing() {
        let qpt = ProcessTomography::new().unwrap();
        let chi = qpt.qpt(|rho| Ok(rho.clone())).unwrap();
        assert!((chi.0[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!(max_abs(&chi.0) - 1.0 < 1e-12);
        let dep = qpt.qpt(|_| Ok(identity(4) * c(0.25, 0.0))).unwrap();
        assert!(max_abs(&(dep.0.clone() - identity(16) * c(1.0 / 16.0, 0.0))) < 1e-12);
        assert!((process_fidelity(&dep, &ideal_cz_chi()) - 1.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn qst_exact_ground_state() {
        let rho = ProductState::new(Prep::Zero, Prep::Zero).density4();
        let est = qst(&QstData::Expectations(pauli_expectations(&rho))).unwrap();
        assert!(max_abs(&(est - &rho)) < 1e-12);
    }

    #[test]
    fn qst_from_settings_matches_state() {
        let rho = ProductState::new(Prep::Plus, Prep::MinusI).density4();
        let freqs: Vec<[f64; 4]> =
            settings().iter().map(|&s| setting_probabilities(&embed_computational(&rho), s)).collect();
        let est = qst(&QstData::SettingFrequencies(freqs)).unwrap();
        assert!(max_abs(&(est - &rho)) < 1e-12);
    }

    #[test]
    fn missing_setting_is_reported() {
        let freqs = alloc::vec![[0.25; 4]; 8];
        assert!(matches!(qst(&QstData::SettingFrequencies(freqs)), Err(Error::InsufficientData(_))));
        let mut e = pauli_expectations(&identity(4));
        e[5] = f64::NAN;
        assert!(matches!(qst(&QstData::Expectations(e)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn powell_fit_at_optimum_is_immediate() {
        let fit = powell_fit(&ideal_cz_chi(), &ideal_cz4(), &default_fit_options()).unwrap();
        assert!(fit.objective < 1e-10);
        assert!(operator_fidelity(&fit.operator.matrix, &ideal_cz4()) > 1.0 - 1e-12);
    }
}
