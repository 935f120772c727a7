//! Pulse-level model and closed-loop optimization of a CZ gate between two
//! capacitively coupled transmons.
//!
//! The crate is `no_std` and needs only `alloc`. Everything that touches files, the
//! command line or threads lives in the companion `czgrape` crate.
//!
//! Internal units are angular frequencies in rad/ns and times in ns.

#![no_std]
// Negated comparisons are used to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dynamics;
pub mod error;
pub mod exec;
pub mod grape;
pub mod lab;
pub mod linalg;
pub mod powell;
pub mod pulse;
pub mod rb;
pub mod system;
pub mod tomography;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};

/// Converts a frequency in MHz (cycles per microsecond) to rad/ns.
#[inline]
pub fn mhz_to_rad_per_ns(mhz: f64) -> f64 {
    mhz * RAD_PER_NS_PER_MHZ
}

/// Converts an angular frequency in rad/ns to MHz.
#[inline]
pub fn rad_per_ns_to_mhz(w: f64) -> f64 {
    w / RAD_PER_NS_PER_MHZ
}

/// 2π/1000: one MHz expressed in rad/ns.
pub const RAD_PER_NS_PER_MHZ: f64 = core::f64::consts::TAU / 1000.0;
