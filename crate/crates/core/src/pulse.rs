//! Piecewise-constant flux pulses.
//!
//! Amplitudes are held in rad/ns but always sit on values that are exactly
//! reachable from a decimal MHz number, so the MHz text format round-trips
//! bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::{mhz_to_rad_per_ns, rad_per_ns_to_mhz};

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    tau: f64,
    amplitudes: Vec<f64>,
}

/// `mu(t)` with smooth error-function edges of width `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flattop {
    /// Plateau amplitude in rad/ns.
    pub amplitude: f64,
    /// Total duration in ns.
    pub duration: f64,
    /// Edge width in ns.
    pub sigma: f64,
}

impl Flattop {
    pub fn paper() -> Self {
        Self { amplitude: mhz_to_rad_per_ns(-290.6), duration: 50.0, sigma: 4.0 }
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = 4.0 * core::f64::consts::LN_2.sqrt();
        let s = self.sigma;
        0.5 * self.amplitude
            * (libm::erf(k * (t / s - 1.0)) - libm::erf(k * (t / s + 1.0 - self.duration / s)))
    }
}

/// Number of whole segments of length `tau` in `duration`.
pub fn segment_count(duration: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::OutOfRange(format!("segment length must be positive, got {tau}")));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::OutOfRange(format!("duration must be positive, got {duration}")));
    }
    let ratio = duration / tau;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::NonDivisibleDuration { duration, tau });
    }
    Ok(m as usize)
}

/// Samples a flattop at the left edge of every segment.
pub fn flattop(shape: &Flattop, tau: f64) -> Result<PulseSequence> {
    if !shape.amplitude.is_finite() || !(shape.sigma > 0.0) {
        return Err(Error::OutOfRange("flattop needs a finite amplitude and sigma > 0".into()));
    }
    let m = segment_count(shape.duration, tau)?;
    PulseSequence::new(tau, (0..m).map(|k| shape.value(k as f64 * tau)).collect())
}

/// Constant amplitude for `duration`, rounded to the nearest whole number of
/// segments.
pub fn square(amplitude: f64, duration: f64, tau: f64) -> Result<PulseSequence> {
    let m = (duration / tau).round().max(1.0) as usize;
    PulseSequence::new(tau, alloc::vec![amplitude; m])
}

/// Nudges `x` by at most one ulp so that it equals `mhz * 2π/1000` for some
/// double `mhz`.
fn snap_to_mhz_lattice(x: f64) -> f64 {
    if mhz_preimage(x).is_some() {
        x
    } else {
        mhz_to_rad_per_ns(rad_per_ns_to_mhz(x))
    }
}

fn mhz_preimage(x: f64) -> Option<f64> {
    let y0 = rad_per_ns_to_mhz(x);
    let mut up = y0;
    let mut down = y0;
    for _ in 0..4 {
        if mhz_to_rad_per_ns(up) == x {
            return Some(up);
        }
        if mhz_to_rad_per_ns(down) == x {
            return Some(down);
        }
        up = up.next_up();
        down = down.next_down();
    }
    None
}

impl PulseSequence {
    pub fn new(tau: f64, amplitudes: Vec<f64>) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::OutOfRange(format!("segment length must be positive, got {tau}")));
        }
        if amplitudes.is_empty() {
            return Err(Error::OutOfRange("pulse needs at least one segment".into()));
        }
        crate::error::ensure_finite(&amplitudes, "pulse amplitudes")?;
        let amplitudes = amplitudes.into_iter().map(snap_to_mhz_lattice).collect();
        Ok(Self { tau, amplitudes })
    }

    pub fn zeros(tau: f64, segments: usize) -> Result<Self> {
        Self::new(tau, alloc::vec![0.0; segments])
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.tau * self.amplitudes.len() as f64
    }

    /// Linear interpolation through the segment midpoints, held constant
    /// before the first and after the last midpoint.
    pub fn interpolate(&self, t: f64) -> f64 {
        let a = &self.amplitudes;
        let u = t / self.tau - 0.5;
        if u <= 0.0 {
            return a[0];
        }
        let last = a.len() - 1;
        if u >= last as f64 {
            return a[last];
        }
        let i = u.floor() as usize;
        let w = u - i as f64;
        (1.0 - w) * a[i] + w * a[i + 1]
    }

    /// Re-discretizes the interpolant onto segments of length `tau`.
    pub fn resample(&self, tau: f64) -> Result<Self> {
        let m = segment_count(self.duration(), tau)?;
        Self::new(tau, (0..m).map(|k| self.interpolate((k as f64 + 0.5) * tau)).collect())
    }

    /// Appends `segments` zero-amplitude segments.
    pub fn padded(&self, segments: usize) -> Self {
        let mut amplitudes = self.amplitudes.clone();
        amplitudes.resize(amplitudes.len() + segments, 0.0);
        Self { tau: self.tau, amplitudes }
    }

    /// Amplitudes converted to MHz, exact inverses of the stored values.
    pub fn amplitudes_mhz(&self) -> Vec<f64> {
        self.amplitudes
            .iter()
            .map(|&x| mhz_preimage(x).unwrap_or_else(|| rad_per_ns_to_mhz(x)))
            .collect()
    }

    pub fn from_mhz(tau: f64, mhz: &[f64]) -> Result<Self> {
        Self::new(tau, mhz.iter().map(|&m| mhz_to_rad_per_ns(m)).collect())
    }

    /// `tau_ns=<tau>` followed by one amplitude in MHz per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tau_ns={}", self.tau);
        for m in self.amplitudes_mhz() {
            let _ = writeln!(out, "{m}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty pulse file".into()))?;
        let tau = header
            .strip_prefix("tau_ns=")
            .ok_or_else(|| Error::InvalidConfig(format!("expected `tau_ns=` header, found `{header}`")))?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::InvalidConfig(format!("bad tau_ns: {e}")))?;
        let mhz = lines
            .enumerate()
            .map(|(i, l)| {
                l.parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad amplitude on data line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_mhz(tau, &mhz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_flattop_shape() {
        let seq = flattop(&Flattop::paper(), 0.5).unwrap();
        assert_eq!(seq.len(), 100);
        let plateau = rad_per_ns_to_mhz(seq.amplitudes()[50]);
        assert!((plateau + 290.6).abs() < 1e-6, "{plateau}");
        assert!(seq.amplitudes()[0].abs() < 1e-3 * Flattop::paper().amplitude.abs());
    }

    #[test]
    fn rejects_non_divisible_duration() {
        let shape = Flattop { duration: 50.3, ..Flattop::paper() };
        assert!(matches!(flattop(&shape, 0.5), Err(Error::NonDivisibleDuration { .. })));
    }

    #[test]
    fn rejects_non_finite_amplitudes() {
        assert!(matches!(
            PulseSequence::new(0.5, alloc::vec![0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let seq = flattop(&Flattop::paper(), 0.5).unwrap();
        let back = PulseSequence::from_text(&seq.to_text()).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.to_text(), seq.to_text());
    }

    #[test]
    fn interpolation_hits_midpoints() {
        let seq = PulseSequence::new(1.0, alloc::vec![1.0, 3.0, -1.0]).unwrap();
        assert_eq!(seq.interpolate(0.0), 1.0);
        assert_eq!(seq.interpolate(1.0), 2.0);
        assert_eq!(seq.interpolate(2.5), -1.0);
        assert_eq!(seq.interpolate(3.0), -1.0);
    }
}
