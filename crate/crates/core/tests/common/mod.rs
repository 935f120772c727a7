#![allow(dead_code)]

use czgrape_core::linalg::{c, expm, CMatrix};
use czgrape_core::lab::{DistortionKind, DistortionModel};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_hermitian<R: Rng>(n: usize, scale: f64, rng: &mut R) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    (&a + a.adjoint()) * c(0.5 * scale, 0.0)
}

pub fn random_unitary<R: Rng>(n: usize, rng: &mut R) -> CMatrix {
    expm(&(random_hermitian(n, 2.0, rng) * c(0.0, -1.0)))
}

pub fn random_density<R: Rng>(n: usize, rng: &mut R) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

/// The bundled default line response.
pub fn default_distortion() -> DistortionModel {
    DistortionModel { kind: DistortionKind::ExponentialFilter { time_constant: 3.5 }, fine_step: 0.05, settle_time: 35.0 }
}
