//! Two-qubit Clifford group and interleaved randomized benchmarking on
//! qutrit-space density matrices.

use alloc::collections::{btree_map, BTreeMap};
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::lab::task_rng;
use crate::linalg::{c, conjugate, identity, matmul, matvec, unvectorize, vectorize, CMatrix, C64, I, ONE, ZERO};
use crate::powell::minimize_bounded;
use crate::system::{basis_index, ideal_cz4, local_qutrit, two_qubit, DIM};

/// Order of the two-qubit Clifford group modulo global phase.
pub const CLIFFORD_2Q_ORDER: usize = 11520;
/// Order of the single-qubit Clifford group modulo global phase.
pub const CLIFFORD_1Q_ORDER: usize = 24;

/// Default sequence lengths.
pub const DEFAULT_LENGTHS: [usize; 6] = [1, 3, 7, 15, 31, 63];

const KEY_SCALE: f64 = 1e9;

type Key = Vec<i64>;

/// Phase-invariant key: the first entry with non-negligible modulus is
/// rotated onto the positive real axis, then all entries are rounded.
fn canonical_key(u: &CMatrix) -> Key {
    let pivot = u.iter().copied().find(|z| z.norm() > 1e-6).unwrap_or(ONE);
    let phase = pivot.conj() / pivot.norm();
    // nalgebra iterates column-major; any fixed order works for a key.
    u.iter()
        .flat_map(|z| {
            let w = z * phase;
            [libm::round(w.re * KEY_SCALE) as i64, libm::round(w.im * KEY_SCALE) as i64]
        })
        .collect()
}

fn hadamard() -> CMatrix {
    let h = c(FRAC_1_SQRT_2, 0.0);
    CMatrix::from_row_slice(2, 2, &[h, h, h, -h])
}

fn phase_gate() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, I])
}

/// One layer of a decomposition, in order of application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Single-qubit Cliffords on A and B, as indices into
    /// [`CliffordGroup2Q::single_qubit`].
    Local(u8, u8),
    Cz,
}

#[derive(Debug, Clone)]
pub struct Clifford2Q {
    pub unitary: CMatrix,
    pub layers: Vec<Layer>,
}

impl Clifford2Q {
    pub fn cz_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Cz)).count()
    }
}

/// The 11520 two-qubit Cliffords with minimal-CZ decompositions.
#[derive(Debug, Clone)]
pub struct CliffordGroup2Q {
    single: Vec<CMatrix>,
    elements: Vec<Clifford2Q>,
    index: BTreeMap<Key, usize>,
}

fn single_qubit_group() -> Vec<CMatrix> {
    let gens = [hadamard(), phase_gate()];
    let mut elems = alloc::vec![identity(2)];
    let mut seen = BTreeMap::new();
    seen.insert(canonical_key(&elems[0]), 0usize);
    let mut k = 0;
    while k < elems.len() {
        for g in &gens {
            let next = g * &elems[k];
            let key = canonical_key(&next);
            if let btree_map::Entry::Vacant(e) = seen.entry(key) {
                e.insert(elems.len());
                elems.push(next);
            }
        }
        k += 1;
    }
    elems
}

/// Builds the group layer by layer: every element is `L_k CZ ... L_1 CZ L_0`
/// with the smallest number of CZ layers.
pub fn build_clifford_group() -> Result<CliffordGroup2Q> {
    let single = single_qubit_group();
    if single.len() != CLIFFORD_1Q_ORDER {
        return Err(Error::ClosureFailure(single.len()));
    }
    let locals: Vec<CMatrix> = (0..single.len() * single.len())
        .map(|k| two_qubit(&single[k / single.len()], &single[k % single.len()]))
        .collect();
    let n1 = single.len();
    let cz = ideal_cz4();
    let mut group = CliffordGroup2Q { single, elements: Vec::new(), index: BTreeMap::new() };

    // Level 0 is the local subgroup; later levels add one CZ per coset.
    let mut frontier = Vec::new();
    for (k, l) in locals.iter().enumerate() {
        let layers = if k == 0 { Vec::new() } else { alloc::vec![Layer::Local((k / n1) as u8, (k % n1) as u8)] };
        if let Some(id) = group.insert(l.clone(), layers) {
            frontier.push(id);
        }
    }
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &id in &frontier {
            let base = matmul(&cz, &group.elements[id].unitary);
            if group.lookup(&base).is_some() {
                continue;
            }
            let mut prefix = group.elements[id].layers.clone();
            prefix.push(Layer::Cz);
            for (k, l) in locals.iter().enumerate() {
                let mut layers = prefix.clone();
                if k != 0 {
                    layers.push(Layer::Local((k / n1) as u8, (k % n1) as u8));
                }
                if let Some(new_id) = group.insert(matmul(l, &base), layers) {
                    next.push(new_id);
                }
            }
        }
        frontier = next;
    }
    if group.len() != CLIFFORD_2Q_ORDER {
        return Err(Error::ClosureFailure(group.len()));
    }
    let generators = [
        two_qubit(&hadamard(), &identity(2)),
        two_qubit(&phase_gate(), &identity(2)),
        two_qubit(&identity(2), &hadamard()),
        two_qubit(&identity(2), &phase_gate()),
        cz,
    ];
    for e in &group.elements {
        for g in &generators {
            if group.lookup(&matmul(g, &e.unitary)).is_none() {
                return Err(Error::ClosureFailure(group.len()));
            }
        }
    }
    Ok(group)
}

impl CliffordGroup2Q {
    fn insert(&mut self, unitary: CMatrix, layers: Vec<Layer>) -> Option<usize> {
        let key = canonical_key(&unitary);
        if self.index.contains_key(&key) {
            return None;
        }
        let id = self.elements.len();
        self.index.insert(key, id);
        self.elements.push(Clifford2Q { unitary, layers });
        Some(id)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, id: usize) -> &Clifford2Q {
        &self.elements[id]
    }

    pub fn elements(&self) -> &[Clifford2Q] {
        &self.elements
    }

    /// The 24 single-qubit Cliffords referenced by [`Layer::Local`].
    pub fn single_qubit(&self) -> &[CMatrix] {
        &self.single
    }

    /// Index of the element equal to `u` up to global phase.
    pub fn lookup(&self, u: &CMatrix) -> Option<usize> {
        self.index.get(&canonical_key(u)).copied()
    }

    pub fn identity(&self) -> usize {
        0
    }

    pub fn compose(&self, later: usize, earlier: usize) -> Option<usize> {
        self.lookup(&matmul(&self.elements[later].unitary, &self.elements[earlier].unitary))
    }

    pub fn inverse(&self, id: usize) -> Option<usize> {
        self.lookup(&self.elements[id].unitary.adjoint())
    }

    /// Product of the decomposition layers with an ideal CZ.
    pub fn layers_unitary(&self, layers: &[Layer]) -> CMatrix {
        layers.iter().fold(identity(4), |acc, l| {
            let op = match *l {
                Layer::Local(a, b) => two_qubit(&self.single[a as usize], &self.single[b as usize]),
                Layer::Cz => ideal_cz4(),
            };
            matmul(&op, &acc)
        })
    }
}

/// How each CZ in a sequence is realized.
#[derive(Debug, Clone, PartialEq)]
pub enum CzImpl {
    Ideal,
    /// `rho -> (1 - λ) CZ rho CZ + λ Tr(rho) P/4` on the qubit subspace `P`,
    /// with `λ = 4 (1 - F) / 3` for average gate fidelity `F`.
    Depolarizing { fidelity: f64 },
    /// Row-major 81x81 superoperator, e.g. an emulated pulse.
    Superoperator(CMatrix),
}

impl CzImpl {
    pub fn validate(&self) -> Result<()> {
        match self {
            CzImpl::Ideal => Ok(()),
            CzImpl::Depolarizing { fidelity } => {
                if (0.25..=1.0).contains(fidelity) {
                    Ok(())
                } else {
                    Err(Error::OutOfRange(format!("depolarizing CZ fidelity {fidelity} outside [0.25, 1]")))
                }
            }
            CzImpl::Superoperator(m) => {
                if m.nrows() == DIM * DIM && m.ncols() == DIM * DIM {
                    Ok(())
                } else {
                    Err(Error::DimensionMismatch { expected: DIM * DIM, found: m.nrows() })
                }
            }
        }
    }
}

fn cz9() -> CMatrix {
    let mut u = identity(DIM);
    u[(basis_index(1, 1), basis_index(1, 1))] = c(-1.0, 0.0);
    u
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub sequences: usize,
    pub interleaved: bool,
    pub seed: u64,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self { lengths: DEFAULT_LENGTHS.to_vec(), sequences: 30, interleaved: true, seed: 0 }
    }
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(Error::InvalidConfig("sequence lengths must be non-empty and >= 1".into()));
        }
        if self.sequences == 0 {
            return Err(Error::InvalidConfig("at least one sequence per length is required".into()));
        }
        Ok(())
    }
}

/// `a p^n + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub a: f64,
    pub p: f64,
    pub b: f64,
    pub residual: f64,
    /// The data show no decay; `p = 1` by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbCurve {
    pub lengths: Vec<usize>,
    pub mean_p00: Vec<f64>,
    pub std_p00: Vec<f64>,
    pub fit: Option<DecayFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbRunResult {
    pub reference: RbCurve,
    pub interleaved: Option<RbCurve>,
}

/// Fits `a p^n + b` by least squares. For fixed `p` the model is linear in
/// `(a, b)`, so only `p` is searched.
pub fn fit_decay(lengths: &[usize], values: &[f64]) -> Result<DecayFit> {
    if lengths.len() != values.len() {
        return Err(Error::LengthMismatch { expected: lengths.len(), found: values.len() });
    }
    crate::error::ensure_finite(values, "RB populations")?;
    if values.iter().all(|v| (1.0 - v).abs() < 1e-9) {
        return Ok(DecayFit { a: 0.0, p: 1.0, b: 1.0, residual: 0.0, degenerate: true });
    }
    let mut distinct: Vec<usize> = lengths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::FitFailure(format!("need at least 3 distinct lengths, got {}", distinct.len())));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return Err(Error::FitFailure("flat data, decay not identifiable".into()));
    }
    let solve = |p: f64| -> (f64, f64, f64) {
        let n = values.len() as f64;
        let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (&m, &y) in lengths.iter().zip(values) {
            let x = libm::pow(p, m as f64);
            sx += x;
            sxx += x * x;
            sy += y;
            sxy += x * y;
        }
        let det = n * sxx - sx * sx;
        let (a, b) = if det.abs() < 1e-300 { (0.0, sy / n) } else { ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det) };
        let r: f64 = lengths.iter().zip(values).map(|(&m, &y)| (a * libm::pow(p, m as f64) + b - y).powi(2)).sum();
        (a, b, r)
    };
    let (p, residual) = minimize_bounded(|p| solve(p).2, 1e-6, 1.0, 1e-12);
    let (a, b, _) = solve(p);
    if !(a.is_finite() && b.is_finite()) || a.abs() < 1e-12 {
        return Err(Error::FitFailure("decay amplitude vanished".into()));
    }
    Ok(DecayFit { a, p, b, residual, degenerate: false })
}

/// `1 - (3/4)(1 - p_CZ / p_ref)`.
pub fn rb_fidelity(result: &RbRunResult) -> Result<f64> {
    let reference = result.reference.fit.ok_or(Error::MissingFit("reference"))?;
    let interleaved = result.interleaved.as_ref().and_then(|c| c.fit).ok_or(Error::MissingFit("interleaved"))?;
    if !(reference.p > 0.0) {
        return Err(Error::FitFailure(format!("reference decay p = {}", reference.p)));
    }
    Ok(1.0 - 0.75 * (1.0 - interleaved.p / reference.p))
}

struct Simulator<'a> {
    group: &'a CliffordGroup2Q,
    locals: Vec<CMatrix>,
    cz: CzImpl,
    cz9: CMatrix,
}

impl Simulator<'_> {
    fn apply_cz(&self, rho: &CMatrix) -> CMatrix {
        match &self.cz {
            CzImpl::Ideal => conjugate(&self.cz9, rho),
            CzImpl::Depolarizing { fidelity } => {
                let lambda = 4.0 * (1.0 - fidelity) / 3.0;
                let mut out = conjugate(&self.cz9, rho) * c(1.0 - lambda, 0.0);
                let tr: C64 = crate::system::COMPUTATIONAL.iter().map(|&k| rho[(k, k)]).sum();
                for &k in &crate::system::COMPUTATIONAL {
                    out[(k, k)] += tr * (lambda / 4.0);
                }
                out
            }
            CzImpl::Superoperator(s) => unvectorize(&matvec(s, &vectorize(rho))),
        }
    }

    fn apply_clifford(&self, id: usize, rho: CMatrix) -> CMatrix {
        let n1 = self.group.single.len();
        self.group.elements[id].layers.iter().fold(rho, |r, l| match *l {
            Layer::Local(a, b) => conjugate(&self.locals[a as usize * n1 + b as usize], &r),
            Layer::Cz => self.apply_cz(&r),
        })
    }

    /// Ground-state population after `cliffords` (optionally each followed
    /// by a CZ) and the recovery element.
    fn survival(&self, cliffords: &[usize], interleave: bool) -> f64 {
        let g = self.group;
        let mut rho = CMatrix::zeros(DIM, DIM);
        rho[(0, 0)] = ONE;
        let cz_id = g.lookup(&ideal_cz4()).expect("CZ is a group element");
        let mut total = g.identity();
        for &id in cliffords {
            rho = self.apply_clifford(id, rho);
            total = g.compose(id, total).expect("group is closed");
            if interleave {
                rho = self.apply_cz(&rho);
                total = g.compose(cz_id, total).expect("group is closed");
            }
        }
        let recovery = g.inverse(total).expect("group is closed");
        rho = self.apply_clifford(recovery, rho);
        rho[(0, 0)].re
    }
}

/// Reference and (optionally) interleaved RB. Both kinds use the same
/// random Clifford sequences.
pub fn run_rb(group: &CliffordGroup2Q, cz: &CzImpl, config: &RbConfig) -> Result<RbRunResult> {
    run_rb_with(group, cz, config, &Sequential)
}

pub fn run_rb_with<E: Executor>(group: &CliffordGroup2Q, cz: &CzImpl, config: &RbConfig, exec: &E) -> Result<RbRunResult> {
    config.validate()?;
    cz.validate()?;
    let n1 = group.single.len();
    let locals = (0..n1 * n1).map(|k| local_qutrit(&group.single[k / n1], &group.single[k % n1])).collect();
    let sim = Simulator { group, locals, cz: cz.clone(), cz9: cz9() };
    let kinds = if config.interleaved { 2 } else { 1 };
    let mut curves: Vec<RbCurve> = (0..kinds)
        .map(|_| RbCurve { lengths: config.lengths.clone(), mean_p00: Vec::new(), std_p00: Vec::new(), fit: None })
        .collect();
    for (li, &len) in config.lengths.iter().enumerate() {
        let runs = exec.map(config.sequences, |s| {
            let mut rng = task_rng(config.seed, li, s);
            let seq: Vec<usize> = (0..len).map(|_| rng.random_range(0..group.len())).collect();
            let reference = sim.survival(&seq, false);
            let interleaved = config.interleaved.then(|| sim.survival(&seq, true));
            (reference, interleaved)
        });
        for (kind, curve) in curves.iter_mut().enumerate() {
            let vals: Vec<f64> = runs.iter().map(|r| if kind == 0 { r.0 } else { r.1.unwrap_or(f64::NAN) }).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            curve.mean_p00.push(mean);
            curve.std_p00.push(libm::sqrt(var));
        }
    }
    for curve in &mut curves {
        curve.fit = Some(fit_decay(&curve.lengths, &curve.mean_p00)?);
    }
    let interleaved = if config.interleaved { curves.pop() } else { None };
    let reference = curves.pop().expect("reference curve");
    Ok(RbRunResult { reference, interleaved })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn group_structure() {
        let g = build_clifford_group().unwrap();
        assert_eq!(g.len(), CLIFFORD_2Q_ORDER);
        assert!(g.element(g.identity()).layers.is_empty());
        assert!(max_abs(&(&g.element(0).unitary - identity(4))) < 1e-15);
        let cz = g.lookup(&ideal_cz4()).unwrap();
        assert_eq!(g.element(cz).cz_count(), 1);
        let mut counts = [0usize; 4];
        for e in g.elements() {
            counts[e.cz_count()] += 1;
            let rebuilt = g.layers_unitary(&e.layers);
            assert_eq!(g.lookup(&rebuilt), g.lookup(&e.unitary));
        }
        assert_eq!(counts, [576, 5184, 5184, 576]);
    }

    #[test]
    fn decay_fit_formula() {
        let lengths = [1usize, 3, 7, 15, 31, 63];
        let y: Vec<f64> = lengths.iter().map(|&n| 0.7 * libm::pow(0.97, n as f64) + 0.25).collect();
        let f = fit_decay(&lengths, &y).unwrap();
        assert!((f.p - 0.97).abs() < 1e-7 && (f.a - 0.7).abs() < 1e-5 && (f.b - 0.25).abs() < 1e-5);
        assert!(fit_decay(&lengths, &[1.0; 6]).unwrap().degenerate);
        assert!(matches!(fit_decay(&lengths, &[0.6; 6]), Err(Error::FitFailure(_))));
        assert!(matches!(fit_decay(&[1, 3], &[0.9, 0.8]), Err(Error::FitFailure(_))));
    }

    #[test]
    fn fidelity_formula() {
        let fit = |p| Some(DecayFit { a: 0.75, p, b: 0.25, residual: 0.0, degenerate: false });
        let curve = |p| RbCurve { lengths: Vec::new(), mean_p00: Vec::new(), std_p00: Vec::new(), fit: fit(p) };
        let r = RbRunResult { reference: curve(0.9), interleaved: Some(curve(0.9 * 0.96)) };
        assert!((rb_fidelity(&r).unwrap() - 0.97).abs() < 1e-12);
        let missing = RbRunResult { reference: curve(0.9), interleaved: None };
        assert_eq!(rb_fidelity(&missing), Err(Error::MissingFit("interleaved")));
    }
}
