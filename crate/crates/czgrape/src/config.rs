//! Run configuration in user units (MHz, ns, GHz²) and its conversion to the
//! core types.

use std::fs;
use std::path::{Path, PathBuf};

use czgrape_core::grape::{Averaging, OptimizerConfig, Protocol, StopCriteria};
use czgrape_core::lab::{DistortionKind, DistortionModel, LeakageReadout, MeasurementConfig, MeasurementMode};
use czgrape_core::pulse::{flattop, Flattop, PulseSequence};
use czgrape_core::rb::{RbConfig, DEFAULT_LENGTHS};
use czgrape_core::system::{Coupling, DeviceParams, ReadoutFidelities, SystemModel};
use czgrape_core::tomography::{optimization_inputs, Prep, ProductState};
use czgrape_core::{mhz_to_rad_per_ns, rad_per_ns_to_mhz};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingModel {
    #[default]
    Full,
    AvoidedCrossing,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    pub f0_a: f64,
    pub f1_a: f64,
    pub f0_b: f64,
    pub f1_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub omega_a_mhz: f64,
    pub omega_b_mhz: f64,
    pub anharm_a_mhz: f64,
    pub anharm_b_mhz: f64,
    pub coupling_mhz: f64,
    pub t1_a_ns: f64,
    pub t1_b_ns: f64,
    pub tphi_a_ns: f64,
    pub tphi_b_ns: f64,
    pub readout: ReadoutSection,
    #[serde(default)]
    pub coupling_model: CouplingModel,
    #[serde(default = "yes")]
    pub dissipation: bool,
}

fn yes() -> bool {
    true
}

impl DeviceSpec {
    pub fn params(&self) -> DeviceParams {
        let r = self.readout;
        DeviceParams {
            omega_a: mhz_to_rad_per_ns(self.omega_a_mhz),
            omega_b: mhz_to_rad_per_ns(self.omega_b_mhz),
            anharm_a: mhz_to_rad_per_ns(self.anharm_a_mhz),
            anharm_b: mhz_to_rad_per_ns(self.anharm_b_mhz),
            coupling: mhz_to_rad_per_ns(self.coupling_mhz),
            t1_a: self.t1_a_ns,
            t1_b: self.t1_b_ns,
            tphi_a: self.tphi_a_ns,
            tphi_b: self.tphi_b_ns,
            readout: ReadoutFidelities { f0_a: r.f0_a, f1_a: r.f1_a, f0_b: r.f0_b, f1_b: r.f1_b },
        }
    }

    pub fn model(&self) -> Result<SystemModel, CliError> {
        let coupling = match self.coupling_model {
            CouplingModel::Full => Coupling::Full,
            CouplingModel::AvoidedCrossing => Coupling::AvoidedCrossing,
            CouplingModel::Off => Coupling::Off,
        };
        Ok(SystemModel::new(self.params())?.with_coupling(coupling).with_dissipation(self.dissipation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageSpec {
    ExponentialFilter { time_constant_ns: f64 },
    AmplitudeScale { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSpec {
    #[serde(default = "default_fine_step")]
    pub fine_step_ns: f64,
    #[serde(default)]
    pub settle_ns: f64,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
}

fn default_fine_step() -> f64 {
    0.05
}

impl DistortionSpec {
    pub fn model(&self) -> DistortionModel {
        let mut kinds: Vec<DistortionKind> = self
            .stages
            .iter()
            .map(|s| match *s {
                StageSpec::ExponentialFilter { time_constant_ns } => {
                    DistortionKind::ExponentialFilter { time_constant: time_constant_ns }
                }
                StageSpec::AmplitudeScale { factor } => DistortionKind::AmplitudeScale { factor },
            })
            .collect();
        let kind = match kinds.len() {
            0 => DistortionKind::None,
            1 => kinds.remove(0),
            _ => DistortionKind::Composite(kinds),
        };
        DistortionModel { kind, fine_step: self.fine_step_ns, settle_time: self.settle_ns }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseSpec {
    Flattop { amplitude_mhz: f64, duration_ns: f64, sigma_ns: f64, tau_ns: f64 },
    /// Pulse text file, relative to the configuration file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolSpec {
    I,
    II,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AveragingSpec {
    #[default]
    Pulses,
    Gradients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub protocol: ProtocolSpec,
    pub learning_rate_ghz2: f64,
    pub max_steps: usize,
    #[serde(default = "default_grad_norm")]
    pub grad_norm_threshold: f64,
    #[serde(default)]
    pub pulse_change_threshold_mhz: f64,
    #[serde(default)]
    pub fidelity_target: Option<f64>,
    /// Protocol II inputs as `"a,b"` preparation labels.
    #[serde(default)]
    pub inputs: Option<Vec<String>>,
    #[serde(default)]
    pub averaging: AveragingSpec,
    #[serde(default = "yes")]
    pub track_process: bool,
}

fn default_grad_norm() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    #[default]
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LeakageSpec {
    #[default]
    Discarded,
    Excited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    #[serde(default)]
    pub mode: ModeSpec,
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub readout_error: bool,
    #[serde(default)]
    pub readout_correction: bool,
    #[serde(default)]
    pub leakage: LeakageSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChevronSpec {
    pub detuning_span_mhz: f64,
    pub detuning_step_mhz: f64,
    pub time_max_ns: f64,
    pub time_step_ns: f64,
    #[serde(default = "yes")]
    pub fit: bool,
    #[serde(default)]
    pub dissipation: bool,
}

impl Default for ChevronSpec {
    fn default() -> Self {
        Self {
            detuning_span_mhz: 40.0,
            detuning_step_mhz: 2.0,
            time_max_ns: 60.0,
            time_step_ns: 0.5,
            fit: true,
            dissipation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbSpec {
    pub lengths: Vec<usize>,
    pub sequences: usize,
}

impl Default for RbSpec {
    fn default() -> Self {
        Self { lengths: DEFAULT_LENGTHS.to_vec(), sequences: 30 }
    }
}

/// A run configuration with every referenced file already loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub device: DeviceSpec,
    pub distortion: DistortionSpec,
    pub pulse: PulseSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub measurement: MeasurementSpec,
    #[serde(default)]
    pub chevron: ChevronSpec,
    #[serde(default)]
    pub rb: RbSpec,
    /// Directory that relative paths inside the configuration refer to.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))
}

/// A section that is either `file = "..."` or written inline.
fn section<T: serde::de::DeserializeOwned>(
    table: &mut toml::Table,
    name: &str,
    base: &Path,
    origin: &Path,
) -> Result<T, CliError> {
    let value = table
        .remove(name)
        .ok_or_else(|| CliError::Config(format!("{}: missing [{name}] section", origin.display())))?;
    let toml::Value::Table(mut inner) = value else {
        return Err(CliError::Config(format!("{}: [{name}] must be a table", origin.display())));
    };
    match inner.remove("file") {
        Some(toml::Value::String(f)) => {
            if !inner.is_empty() {
                return Err(CliError::Config(format!(
                    "{}: [{name}] takes either `file` or inline keys, not both",
                    origin.display()
                )));
            }
            let path = base.join(f);
            parse(&read(&path)?, &path)
        }
        Some(_) => Err(CliError::Config(format!("{}: [{name}].file must be a string", origin.display()))),
        None => toml::Value::Table(inner)
            .try_into()
            .map_err(|e| CliError::Config(format!("{}: [{name}]: {e}", origin.display()))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let mut table: toml::Table = parse(&text, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let device: DeviceSpec = section(&mut table, "device", &base, path)?;
        let distortion: DistortionSpec = section(&mut table, "distortion", &base, path)?;
        table.insert("device".into(), toml::Value::try_from(&device).map_err(|e| CliError::Config(e.to_string()))?);
        table.insert(
            "distortion".into(),
            toml::Value::try_from(&distortion).map_err(|e| CliError::Config(e.to_string()))?,
        );
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = base;
        cfg.validate()?;
        cfg.initial_pulse()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model()?;
        self.distortion.model().validate()?;
        self.optimizer()?.validate()?;
        self.measurement()?.validate()?;
        Ok(())
    }

    pub fn model(&self) -> Result<SystemModel, CliError> {
        self.device.model()
    }

    pub fn initial_pulse(&self) -> Result<PulseSequence, CliError> {
        match &self.pulse {
            PulseSpec::Flattop { amplitude_mhz, duration_ns, sigma_ns, tau_ns } => {
                let shape = Flattop { amplitude: mhz_to_rad_per_ns(*amplitude_mhz), duration: *duration_ns, sigma: *sigma_ns };
                Ok(flattop(&shape, *tau_ns)?)
            }
            PulseSpec::File { path } => crate::artifacts::read_pulse(&self.base_dir.join(path)),
        }
    }

    pub fn inputs(&self) -> Result<Vec<ProductState>, CliError> {
        let Some(labels) = &self.optimizer.inputs else {
            return Ok(optimization_inputs().to_vec());
        };
        labels
            .iter()
            .map(|l| {
                let (a, b) = l
                    .split_once(',')
                    .ok_or_else(|| CliError::Config(format!("input state {l:?} is not of the form \"a,b\"")))?;
                match (Prep::parse(a.trim()), Prep::parse(b.trim())) {
                    (Some(a), Some(b)) => Ok(ProductState::new(a, b)),
                    _ => Err(CliError::Config(format!("unknown preparation in input state {l:?}"))),
                }
            })
            .collect()
    }

    pub fn optimizer(&self) -> Result<OptimizerConfig, CliError> {
        let o = &self.optimizer;
        let base = match o.protocol {
            ProtocolSpec::I => OptimizerConfig::protocol_one(),
            ProtocolSpec::II => OptimizerConfig::protocol_two(),
        };
        Ok(OptimizerConfig {
            protocol: match o.protocol {
                ProtocolSpec::I => Protocol::Unitary,
                ProtocolSpec::II => Protocol::State,
            },
            learning_rate: o.learning_rate_ghz2,
            max_steps: o.max_steps,
            stop: StopCriteria {
                grad_norm: o.grad_norm_threshold,
                pulse_change: mhz_to_rad_per_ns(o.pulse_change_threshold_mhz),
                fidelity_target: o.fidelity_target,
            },
            averaging: match o.averaging {
                AveragingSpec::Pulses => Averaging::Pulses,
                AveragingSpec::Gradients => Averaging::Gradients,
            },
            inputs: self.inputs()?,
            track_process: o.track_process,
            ..base
        })
    }

    pub fn measurement(&self) -> Result<MeasurementConfig, CliError> {
        let m = &self.measurement;
        let mode = match (m.mode, m.shots) {
            (ModeSpec::Exact, _) => MeasurementMode::Exact,
            (ModeSpec::Sampled, Some(shots)) => MeasurementMode::Sampled { shots },
            (ModeSpec::Sampled, None) => {
                return Err(CliError::Config("sampled measurement needs `shots`".into()));
            }
        };
        Ok(MeasurementConfig {
            mode,
            readout_error: m.readout_error,
            readout_correction: m.readout_correction,
            leakage: match m.leakage {
                LeakageSpec::Discarded => LeakageReadout::Discarded,
                LeakageSpec::Excited => LeakageReadout::Excited,
            },
            seed: self.seed,
        })
    }

    pub fn rb(&self) -> RbConfig {
        RbConfig { lengths: self.rb.lengths.clone(), sequences: self.rb.sequences, interleaved: true, seed: self.seed }
    }

    /// Detuning (rad/ns) and time (ns) grids centred on the nominal resonance.
    pub fn chevron_grids(&self) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let c = &self.chevron;
        if !(c.detuning_step_mhz > 0.0 && c.time_step_ns > 0.0) || c.detuning_span_mhz < 0.0 || c.time_max_ns < 0.0 {
            return Err(CliError::Config("chevron steps must be positive and spans non-negative".into()));
        }
        let res = rad_per_ns_to_mhz(self.device.params().resonance_amplitude());
        let half = (c.detuning_span_mhz / c.detuning_step_mhz + 1e-9).floor() as i64;
        let det = (-half..=half).map(|k| mhz_to_rad_per_ns(res + k as f64 * c.detuning_step_mhz)).collect();
        let n_t = (c.time_max_ns / c.time_step_ns + 1e-9).floor() as usize;
        let times = (0..=n_t).map(|k| k as f64 * c.time_step_ns).collect();
        Ok((det, times))
    }

    /// Self-contained TOML form with every referenced file inlined.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Parses the output of [`RunConfig::to_toml`].
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("embedded configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of [`RunConfig::to_toml`].
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }
}
