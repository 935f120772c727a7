//! Two coupled three-level transmons.
//!
//! Basis states `|j_A j_B>` with `j in {0, 1, 2}` carry the composite index
//! `3 j_A + j_B`. The computational subspace is ordered `|00>, |10>, |01>,
//! |11>`, i.e. index `j_A + 2 j_B`, and the five-state set appends `|20>`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::linalg::{c, diag_real, kron, CMatrix};
use crate::mhz_to_rad_per_ns;

pub const LEVELS: usize = 3;
pub const DIM: usize = LEVELS * LEVELS;

#[inline]
pub const fn basis_index(j_a: usize, j_b: usize) -> usize {
    LEVELS * j_a + j_b
}

/// Qutrit indices of `|00>, |10>, |01>, |11>`.
pub const COMPUTATIONAL: [usize; 4] =
    [basis_index(0, 0), basis_index(1, 0), basis_index(0, 1), basis_index(1, 1)];

/// Qutrit indices of `|00>, |10>, |01>, |11>, |20>`.
pub const FIVE_STATE: [usize; 5] = [
    basis_index(0, 0),
    basis_index(1, 0),
    basis_index(0, 1),
    basis_index(1, 1),
    basis_index(2, 0),
];

/// Assignment fidelities of the dispersive readout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutFidelities {
    pub f0_a: f64,
    pub f1_a: f64,
    pub f0_b: f64,
    pub f1_b: f64,
}

impl ReadoutFidelities {
    pub const PERFECT: Self = Self { f0_a: 1.0, f1_a: 1.0, f0_b: 1.0, f1_b: 1.0 };
}

/// Device parameters in rad/ns and ns. Infinite lifetimes disable the
/// corresponding channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceParams {
    pub omega_a: f64,
    pub omega_b: f64,
    pub anharm_a: f64,
    pub anharm_b: f64,
    pub coupling: f64,
    pub t1_a: f64,
    pub t1_b: f64,
    pub tphi_a: f64,
    pub tphi_b: f64,
    pub readout: ReadoutFidelities,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamWarning {
    /// `g / |omega_A - omega_B|` exceeds 0.1.
    StrongCoupling { ratio: f64 },
}

impl DeviceParams {
    /// The measured two-transmon device.
    pub fn paper() -> Self {
        Self {
            omega_a: mhz_to_rad_per_ns(5458.0),
            omega_b: mhz_to_rad_per_ns(4919.0),
            anharm_a: mhz_to_rad_per_ns(-242.1),
            anharm_b: mhz_to_rad_per_ns(-258.8),
            coupling: mhz_to_rad_per_ns(9.1),
            t1_a: 15_300.0,
            t1_b: 27_900.0,
            tphi_a: 13_800.0,
            tphi_b: 42_700.0,
            readout: ReadoutFidelities { f0_a: 0.978, f1_a: 0.937, f0_b: 0.952, f1_b: 0.904 },
        }
    }

    /// Same device without relaxation or dephasing.
    pub fn without_dissipation(mut self) -> Self {
        self.t1_a = f64::INFINITY;
        self.t1_b = f64::INFINITY;
        self.tphi_a = f64::INFINITY;
        self.tphi_b = f64::INFINITY;
        self
    }

    pub fn validate(&self) -> Result<Vec<ParamWarning>> {
        let finite = [
            ("omega_a", self.omega_a),
            ("omega_b", self.omega_b),
            ("anharm_a", self.anharm_a),
            ("anharm_b", self.anharm_b),
            ("coupling", self.coupling),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::OutOfRange(format!("{name} must be finite, got {v}")));
            }
        }
        if self.omega_a <= 0.0 || self.omega_b <= 0.0 {
            return Err(Error::OutOfRange("qubit frequencies must be positive".into()));
        }
        if self.coupling <= 0.0 {
            return Err(Error::OutOfRange(format!("coupling must be positive, got {}", self.coupling)));
        }
        for (name, v) in [
            ("t1_a", self.t1_a),
            ("t1_b", self.t1_b),
            ("tphi_a", self.tphi_a),
            ("tphi_b", self.tphi_b),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::OutOfRange(format!("{name} must be positive, got {v}")));
            }
        }
        let r = self.readout;
        for (name, v) in [("f0_a", r.f0_a), ("f1_a", r.f1_a), ("f0_b", r.f0_b), ("f1_b", r.f1_b)] {
            if !(v > 0.5 && v <= 1.0) {
                return Err(Error::OutOfRange(format!("{name} must lie in (0.5, 1], got {v}")));
            }
        }
        let mut warnings = Vec::new();
        let ratio = self.coupling / (self.omega_a - self.omega_b).abs();
        if !(ratio <= 0.1) {
            warnings.push(ParamWarning::StrongCoupling { ratio });
        }
        Ok(warnings)
    }

    /// Detuning `omega_A - omega_B`.
    pub fn qubit_detuning(&self) -> f64 {
        self.omega_a - self.omega_b
    }

    /// Drive amplitude that brings `|11>` into resonance with `|20>`.
    pub fn resonance_amplitude(&self) -> f64 {
        -(self.qubit_detuning() + self.anharm_a)
    }

    /// Duration of a full `|11> -> |20> -> |11>` cycle on resonance.
    pub fn swap_time(&self) -> f64 {
        PI / (SQRT_2 * self.coupling)
    }

    fn level_energy(omega: f64, anharm: f64, j: usize) -> f64 {
        match j {
            0 => 0.0,
            1 => omega,
            _ => 2.0 * omega + anharm,
        }
    }
}

/// Which exchange matrix elements are retained in the static Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Full `g (a_A† a_B + a_A a_B†)` on the qutrit space.
    Full,
    /// Only the `sqrt(2) g` element between `|11>` and `|20>`.
    AvoidedCrossing,
    /// No exchange at all.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemModel {
    pub params: DeviceParams,
    pub coupling: Coupling,
    /// Include relaxation and dephasing in Liouville-space propagation.
    pub dissipative: bool,
}

impl SystemModel {
    pub fn new(params: DeviceParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, coupling: Coupling::Full, dissipative: true })
    }

    pub fn with_coupling(mut self, coupling: Coupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_dissipation(mut self, dissipative: bool) -> Self {
        self.dissipative = dissipative;
        self
    }

    /// Static Hamiltonian; `coupled = false` drops the exchange term.
    pub fn static_hamiltonian(&self, coupled: bool) -> CMatrix {
        let p = &self.params;
        let mut diag = [0.0; DIM];
        for j_a in 0..LEVELS {
            for j_b in 0..LEVELS {
                diag[basis_index(j_a, j_b)] = DeviceParams::level_energy(p.omega_a, p.anharm_a, j_a)
                    + DeviceParams::level_energy(p.omega_b, p.anharm_b, j_b);
            }
        }
        let mut h = diag_real(&diag);
        if !coupled {
            return h;
        }
        match self.coupling {
            Coupling::Off => {}
            Coupling::AvoidedCrossing => {
                let (i, j) = (basis_index(1, 1), basis_index(2, 0));
                h[(i, j)] = c(SQRT_2 * p.coupling, 0.0);
                h[(j, i)] = c(SQRT_2 * p.coupling, 0.0);
            }
            Coupling::Full => {
                // a_A† a_B |j_A, j_B> = sqrt((j_A + 1) j_B) |j_A + 1, j_B - 1>
                for j_a in 0..LEVELS - 1 {
                    for j_b in 1..LEVELS {
                        let amp = p.coupling * (((j_a + 1) * j_b) as f64).sqrt();
                        let from = basis_index(j_a, j_b);
                        let to = basis_index(j_a + 1, j_b - 1);
                        h[(to, from)] = c(amp, 0.0);
                        h[(from, to)] = c(amp, 0.0);
                    }
                }
            }
        }
        h
    }

    /// `H_0 + mu n_A`.
    pub fn hamiltonian(&self, mu: f64, coupled: bool) -> CMatrix {
        self.static_hamiltonian(coupled) + build_drive_term(mu)
    }
}

/// Full-model static Hamiltonian.
pub fn build_static_hamiltonian(params: &DeviceParams, coupled: bool) -> Result<CMatrix> {
    Ok(SystemModel::new(*params)?.static_hamiltonian(coupled))
}

/// `n_A ⊗ I_B` on the qutrit space.
pub fn number_a() -> CMatrix {
    let d: [f64; DIM] = core::array::from_fn(|k| (k / LEVELS) as f64);
    diag_real(&d)
}

pub fn number_b() -> CMatrix {
    let d: [f64; DIM] = core::array::from_fn(|k| (k % LEVELS) as f64);
    diag_real(&d)
}

/// Flux-drive term `mu n_A ⊗ I_B`.
pub fn build_drive_term(mu: f64) -> CMatrix {
    number_a() * c(mu, 0.0)
}

/// `diag(1, 1, 1, -1, -1)` on the five-state set.
pub fn ideal_cz5() -> CMatrix {
    diag_real(&[1.0, 1.0, 1.0, -1.0, -1.0])
}

/// `diag(1, 1, 1, -1)` on the computational subspace.
pub fn ideal_cz4() -> CMatrix {
    diag_real(&[1.0, 1.0, 1.0, -1.0])
}

/// Two-qubit operator `op_A ⊗ op_B` in the computational ordering.
pub fn two_qubit(op_a: &CMatrix, op_b: &CMatrix) -> CMatrix {
    kron(op_b, op_a)
}

/// Extends a qubit operator to a qutrit with `|2>` left invariant.
pub fn qubit_to_qutrit(op: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(LEVELS, LEVELS);
    for i in 0..2 {
        for j in 0..2 {
            out[(i, j)] = op[(i, j)];
        }
    }
    out[(2, 2)] = c(1.0, 0.0);
    out
}

/// Local qubit operations acting on the qutrit space.
pub fn local_qutrit(op_a: &CMatrix, op_b: &CMatrix) -> CMatrix {
    kron(&qubit_to_qutrit(op_a), &qubit_to_qutrit(op_b))
}

/// Embeds a computational-subspace operator into the qutrit space, zero
/// elsewhere.
pub fn embed_computational(op: &CMatrix) -> CMatrix {
    crate::linalg::embed(op, &COMPUTATIONAL, DIM)
}

/// Restricts a qutrit-space operator to the computational subspace.
pub fn restrict_computational(op: &CMatrix) -> CMatrix {
    crate::linalg::restrict(op, &COMPUTATIONAL)
}

/// Whether qutrit basis index `k` lies in the computational subspace.
pub fn is_computational(k: usize) -> bool {
    COMPUTATIONAL.contains(&k)
}
