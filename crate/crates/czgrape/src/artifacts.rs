//! JSON and CSV artifacts. Complex matrices are nested row arrays of
//! `[re, im]` pairs.

use std::fs;
use std::io::Write;
use std::path::Path;

use czgrape_core::grape::{GradientSequence, IterationRecord};
use czgrape_core::linalg::{c, CMatrix};
use czgrape_core::pulse::PulseSequence;
use czgrape_core::rb::{RbCurve, RbRunResult};
use czgrape_core::tomography::ProcessMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const TRAJECTORY_FORMAT: &str = "czgrape-trajectory/1";

pub type MatrixJson = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_json(m: &CMatrix) -> MatrixJson {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub fn matrix_from_json(rows: &MatrixJson) -> Result<CMatrix, CliError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(CliError::Config("ragged matrix in artifact".into()));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

/// Identifies the run an artifact came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn comment_lines(&self) -> String {
        format!("# config_hash={}\n# seed={}\n", self.config_hash, self.seed)
    }
}

pub fn read_pulse(path: &Path) -> Result<PulseSequence, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read pulse file {}: {e}", path.display())))?;
    PulseSequence::from_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_pulse(path: &Path, seq: &PulseSequence, prov: &Provenance) -> Result<(), CliError> {
    fs::write(path, format!("{}{}", prov.comment_lines(), seq.to_text()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    pub step: usize,
    pub tau_ns: f64,
    /// Exact stored amplitudes in rad/ns.
    pub amplitudes_rad_per_ns: Vec<f64>,
    pub f_chi: Option<f64>,
    pub f_uexp: Option<f64>,
    pub f_rho: Vec<f64>,
    pub grad_norm: Option<f64>,
    pub gradient: Option<Vec<f64>>,
    pub chi: Option<MatrixJson>,
    pub u_exp: Option<MatrixJson>,
    pub rho_exp: Vec<MatrixJson>,
    pub elapsed_s: f64,
}

impl RecordJson {
    pub fn from_record(r: &IterationRecord) -> Self {
        Self {
            step: r.step,
            tau_ns: r.pulse.tau(),
            amplitudes_rad_per_ns: r.pulse.amplitudes().to_vec(),
            f_chi: r.f_chi,
            f_uexp: r.f_uexp,
            f_rho: r.f_rho.clone(),
            grad_norm: r.grad_norm,
            gradient: r.gradient.as_ref().map(|g: &GradientSequence| g.0.clone()),
            chi: r.chi.as_ref().map(|c| matrix_to_json(&c.0)),
            u_exp: r.u_exp.as_ref().map(|u| matrix_to_json(&u.matrix)),
            rho_exp: r.rho_exp.iter().map(matrix_to_json).collect(),
            elapsed_s: r.elapsed_s,
        }
    }

    pub fn pulse(&self) -> Result<PulseSequence, CliError> {
        let seq = PulseSequence::new(self.tau_ns, self.amplitudes_rad_per_ns.clone())?;
        if seq.amplitudes() != self.amplitudes_rad_per_ns.as_slice() {
            return Err(CliError::Config(format!("step {} pulse is not on the amplitude lattice", self.step)));
        }
        Ok(seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub format: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    /// The full configuration, with referenced files inlined.
    pub config_toml: String,
    pub records: Vec<RecordJson>,
    /// Set when the run stopped on an error.
    pub error: Option<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let t: TrajectoryFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if t.format != TRAJECTORY_FORMAT {
        return Err(CliError::Config(format!("{}: unsupported format {:?}", path.display(), t.format)));
    }
    Ok(t)
}

fn csv_writer(path: &Path, prov: &Provenance) -> Result<csv::Writer<fs::File>, CliError> {
    let mut f = fs::File::create(path)?;
    f.write_all(prov.comment_lines().as_bytes())?;
    Ok(csv::Writer::from_writer(f))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12}")).unwrap_or_default()
}

/// `step, F_chi, F_uexp, F_rho_mean, F_rho_1.., grad_norm, elapsed_s`.
pub fn write_fidelity_csv(path: &Path, prov: &Provenance, records: &[IterationRecord]) -> Result<(), CliError> {
    let n_rho = records.iter().map(|r| r.f_rho.len()).max().unwrap_or(0);
    let mut w = csv_writer(path, prov)?;
    let mut header: Vec<String> = ["step", "F_chi", "F_uexp", "F_rho_mean"].map(String::from).to_vec();
    header.extend((1..=n_rho).map(|k| format!("F_rho_{k}")));
    header.extend(["grad_norm", "elapsed_s"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mean = (!r.f_rho.is_empty()).then(|| r.f_rho.iter().sum::<f64>() / r.f_rho.len() as f64);
        let mut row = vec![r.step.to_string(), opt(r.f_chi), opt(r.f_uexp), opt(mean)];
        row.extend((0..n_rho).map(|k| opt(r.f_rho.get(k).copied())));
        row.push(opt(r.grad_norm));
        row.push(format!("{:.3}", r.elapsed_s));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `detuning_MHz, time_ns, P11`, detuning relative to zero drive.
pub fn write_chevron_csv(
    path: &Path,
    prov: &Provenance,
    detunings_mhz: &[f64],
    times: &[f64],
    p11: &[Vec<f64>],
) -> Result<(), CliError> {
    let mut w = csv_writer(path, prov)?;
    w.write_record(["detuning_MHz", "time_ns", "P11"])?;
    for (row, d) in p11.iter().zip(detunings_mhz) {
        for (p, t) in row.iter().zip(times) {
            w.write_record([format!("{d:.6}"), format!("{t:.6}"), format!("{p:.12}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `n, mean_P00, std_P00, kind`.
pub fn write_rb_csv(path: &Path, prov: &Provenance, result: &RbRunResult) -> Result<(), CliError> {
    let mut w = csv_writer(path, prov)?;
    w.write_record(["n", "mean_P00", "std_P00", "kind"])?;
    let mut emit = |curve: &RbCurve, kind: &str| -> Result<(), CliError> {
        for ((n, m), s) in curve.lengths.iter().zip(&curve.mean_p00).zip(&curve.std_p00) {
            w.write_record([n.to_string(), format!("{m:.12}"), format!("{s:.12}"), kind.to_string()])?;
        }
        Ok(())
    };
    emit(&result.reference, "ref")?;
    if let Some(c) = &result.interleaved {
        emit(c, "interleaved")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayJson {
    pub a: f64,
    pub p: f64,
    pub b: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbSummary {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub gate: String,
    pub reference: Option<DecayJson>,
    pub interleaved: Option<DecayJson>,
    pub f_rb: Option<f64>,
}

pub fn decay_json(curve: &RbCurve) -> Option<DecayJson> {
    curve.fit.map(|f| DecayJson { a: f.a, p: f.p, b: f.b, degenerate: f.degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiFile {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub f_chi: f64,
    pub f_uexp: Option<f64>,
    pub chi: MatrixJson,
    pub u_exp: Option<MatrixJson>,
}

pub fn chi_from_json(rows: &MatrixJson) -> Result<ProcessMatrix, CliError> {
    Ok(ProcessMatrix(matrix_from_json(rows)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChevronSummary {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub g_est_mhz: Option<f64>,
    pub resonance_est_mhz: Option<f64>,
    pub residual_rms: Option<f64>,
}
