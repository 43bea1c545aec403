//! Scenario definitions in internal (angular) units.

use serde::{Deserialize, Serialize};

use crate::detection::{McpModel, NoiseChain, ProbeConfig};
use crate::error::{Error, Result};
use crate::estimation::DepolarizationMap;
use crate::model::{CavitySpec, EnsembleState, TransitionSet};

/// Named sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// Time discretisation and window placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Grid step (s).
    pub dt: f64,
    /// Gap between cloud exit and the start of the reference window (s).
    pub reference_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlythroughSettings {
    /// Probe detunings in units of kappa.
    pub probe_detunings: Vec<f64>,
    pub extended_cloud: bool,
    /// Fit the atom number back from the averaged traces.
    pub fit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySettings {
    /// Relative error of the cavity atom-number scale, injected into the
    /// simulated phase data (N_cavity = N (1 + systematic)).
    pub cavity_systematic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSweepSettings {
    pub atom_numbers: Vec<f64>,
    /// Proportionality between residual p excitation and P_e.
    pub excitation_scale: f64,
    /// Atoms per shot of the residual-excitation measurement.
    pub excitation_atoms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSettings {
    pub poisson_preparation: bool,
    pub single_transition: bool,
    /// Probe photon numbers of the precision-versus-power curves.
    pub photon_numbers: Vec<f64>,
    /// Atom number of the precision-versus-power curves.
    pub precision_atoms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    /// Pulse areas Omega t of the Rabi calibration (rad).
    pub pulse_areas: Vec<f64>,
    pub n_atoms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectroscopySettings {
    pub prep_ratios: Vec<f64>,
    /// Spectroscopy frequencies relative to the cavity (rad/s).
    pub frequencies: Vec<f64>,
    pub dt_i: f64,
    pub decay_interval: f64,
    pub omega_i_plus: f64,
    pub omega_i_minus: f64,
    pub n_atoms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RabiSettings {
    pub depolarization: DepolarizationMap,
    /// Interval between the preparation pulse and the cavity center (s).
    pub prep_to_center: f64,
    pub calibration: Option<CalibrationSettings>,
    pub spectroscopy: Option<SpectroscopySettings>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Flythrough(FlythroughSettings),
    Sensitivity(SensitivitySettings),
    PowerSweep(PowerSweepSettings),
    Campaign(CampaignSettings),
    Rabi(RabiSettings),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Flythrough(_) => "flythrough",
            Experiment::Sensitivity(_) => "sensitivity",
            Experiment::PowerSweep(_) => "power_sweep",
            Experiment::Campaign(_) => "campaign",
            Experiment::Rabi(_) => "rabi",
        }
    }

    /// Sweep parameter required by the experiment, if any.
    fn sweep_parameter(&self) -> Option<&'static str> {
        match self {
            Experiment::Flythrough(_) => None,
            Experiment::Sensitivity(_) | Experiment::Campaign(_) => Some("n_atoms"),
            Experiment::PowerSweep(_) => Some("n_c"),
            Experiment::Rabi(_) => Some("prep_ratio"),
        }
    }
}

/// Complete parameter bundle of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub cavity: CavitySpec,
    pub ensemble: EnsembleState,
    pub transitions: TransitionSet,
    pub probe: ProbeConfig,
    pub noise: NoiseChain,
    pub mcp: McpModel,
    pub timing: Timing,
    /// Critical photon number of the power dressing; derived from the
    /// time-averaged coupling and the nearest transition when `None`.
    pub n_crit: Option<f64>,
    /// Shots per sweep point (averaged shots for fly-through traces).
    pub shots: u64,
    pub sweep: Option<Sweep>,
    pub master_seed: u64,
    pub experiment: Experiment,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.cavity.validate()?;
        self.ensemble.validate()?;
        self.probe.validate()?;
        self.noise.validate()?;
        self.mcp.validate()?;
        if self.shots < 1 {
            return Err(Error::invalid("shots", "must be >= 1"));
        }
        if !(self.timing.dt > 0.0) {
            return Err(Error::invalid("timing.dt", "must be > 0"));
        }
        if !(self.timing.reference_gap >= 0.0) {
            return Err(Error::invalid("timing.reference_gap", "must be >= 0"));
        }
        if let Some(n) = self.n_crit {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::invalid("n_crit", "must be finite and > 0"));
            }
        }
        match (self.experiment.sweep_parameter(), &self.sweep) {
            (Some(p), Some(s)) => {
                if s.parameter != p {
                    return Err(Error::invalid(
                        "sweep.parameter",
                        format!("{} scenarios sweep '{p}', got '{}'", self.experiment.kind(), s.parameter),
                    ));
                }
                if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("sweep.values", "must be a non-empty list of finite numbers"));
                }
            }
            (Some(p), None) => {
                return Err(Error::invalid("sweep", format!("required: sweep over '{p}'")));
            }
            (None, _) => {}
        }
        match &self.experiment {
            Experiment::Flythrough(f) => {
                if f.probe_detunings.is_empty() {
                    return Err(Error::invalid("experiment.probe_detunings_kappa", "must not be empty"));
                }
            }
            Experiment::Sensitivity(s) => {
                if !(s.cavity_systematic > -1.0) {
                    return Err(Error::invalid("experiment.cavity_systematic", "must be > -1"));
                }
            }
            Experiment::PowerSweep(p) => {
                if p.atom_numbers.is_empty() {
                    return Err(Error::invalid("experiment.atom_numbers", "must not be empty"));
                }
                if !(p.excitation_scale >= 0.0) {
                    return Err(Error::invalid("experiment.excitation_scale", "must be >= 0"));
                }
            }
            Experiment::Campaign(c) => {
                if self.probe.n_c <= 0.0 {
                    return Err(Error::invalid("probe.n_c", "campaigns need a probe field (n_c > 0)"));
                }
                if c.photon_numbers.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::invalid("experiment.photon_numbers", "must be > 0"));
                }
            }
            Experiment::Rabi(r) => {
                r.depolarization.validate()?;
                if let Some(s) = &r.spectroscopy {
                    if !(s.dt_i > 0.0) {
                        return Err(Error::invalid("experiment.spectroscopy.dt_i_s", "must be > 0"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sweep_values(&self) -> &[f64] {
        self.sweep.as_ref().map_or(&[], |s| s.values.as_slice())
    }
}
