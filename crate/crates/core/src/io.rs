//! Configuration files, CSV/JSON output and run manifests.
//!
//! Configuration files carry cyclic frequencies (`*_hz`) and SI units named
//! in the field; everything is converted to angular units when a
//! [`ScenarioConfig`] is turned into a [`Scenario`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detection::{McpModel, NoiseChain, ProbeConfig};
use crate::error::{Error, Result};
use crate::estimation::{DepolarizationMap, MeasuredTrace, PowerDataset, RabiData, Spectrum};
use crate::experiments::{
    CalibrationSettings, CampaignSettings, Cell, Dataset, Experiment, FlythroughSettings, PowerSweepSettings,
    RabiSettings, Scenario, SensitivitySettings, SpectroscopySettings, Sweep, Table, Timing,
};
use crate::model::{CavitySpec, DetuningProfile, EnsembleState, Populations, TransitionSet};
use crate::transmission::MAX_STEP_TAU_C;
use crate::units::{dipole_from_atomic_units, hz_to_rad};

pub const TOOL_NAME: &str = "rydcav";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    pub frequency_hz: f64,
    pub kappa_hz: f64,
    pub kappa_out_hz: f64,
    pub kappa_in_hz: f64,
    pub length_z_m: f64,
    pub mode_antinodes: u32,
    pub g_max_hz: f64,
    #[serde(default = "one")]
    pub mode_correction: f64,
    #[serde(default)]
    pub transverse_width_m: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationsConfig {
    pub s: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_zero: f64,
}

impl Default for PopulationsConfig {
    fn default() -> Self {
        PopulationsConfig {
            s: 1.0,
            p_plus: 0.0,
            p_minus: 0.0,
            p_zero: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_atoms: f64,
    #[serde(default)]
    pub populations: PopulationsConfig,
    pub sigma_z_m: f64,
    pub sigma_x_m: f64,
    pub velocity_m_s: f64,
    pub tau_s_s: f64,
    pub tau_p_s: f64,
    pub entry_time_s: f64,
}

/// Constant detuning or a profile sampled along the beam axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetuningConfig {
    Constant(f64),
    Profile { positions_m: Vec<f64>, values_hz: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionConfig {
    pub delta_plus_hz: DetuningConfig,
    pub delta_minus_hz: DetuningConfig,
    #[serde(default)]
    pub dipole_moment_ea0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub delta_m_hz: f64,
    pub n_c: f64,
    pub tau_i_s: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub n_noise: f64,
    #[serde(default)]
    pub digitizer_phase_floor_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McpConfig {
    pub eta: f64,
    pub sigma_a_rel: f64,
    pub s1_atom_v_ns: f64,
    pub alpha_p: f64,
    pub beta_s: f64,
    pub beta_p: f64,
    pub dt_md_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub dt_s: f64,
    pub reference_gap_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepolarizationConfig {
    pub p_plus: f64,
    pub p_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub pulse_area_max_rad: f64,
    pub points: usize,
    pub n_atoms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroscopyConfig {
    pub prep_ratios: Vec<f64>,
    pub frequency_start_hz: f64,
    pub frequency_stop_hz: f64,
    pub frequency_points: usize,
    pub dt_i_s: f64,
    pub decay_interval_s: f64,
    pub omega_i_plus_hz: f64,
    pub omega_i_minus_hz: f64,
    pub n_atoms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentConfig {
    Flythrough {
        probe_detunings_kappa: Vec<f64>,
        #[serde(default)]
        extended_cloud: bool,
        #[serde(default = "yes")]
        fit: bool,
    },
    Sensitivity {
        #[serde(default)]
        cavity_systematic: f64,
    },
    PowerSweep {
        atom_numbers: Vec<f64>,
        excitation_scale: f64,
        excitation_atoms: f64,
    },
    Campaign {
        #[serde(default)]
        poisson_preparation: bool,
        #[serde(default)]
        single_transition: bool,
        #[serde(default)]
        photon_numbers: Vec<f64>,
        #[serde(default = "default_precision_atoms")]
        precision_atoms: f64,
    },
    Rabi {
        depolarization: DepolarizationConfig,
        prep_to_center_s: f64,
        #[serde(default)]
        calibration: Option<CalibrationConfig>,
        #[serde(default)]
        spectroscopy: Option<SpectroscopyConfig>,
    },
}

fn yes() -> bool {
    true
}

fn default_precision_atoms() -> f64 {
    500.0
}

/// Scenario as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub master_seed: u64,
    pub shots: u64,
    pub cavity: CavityConfig,
    pub ensemble: EnsembleConfig,
    pub transitions: TransitionConfig,
    pub probe: ProbeSection,
    pub noise: NoiseConfig,
    pub mcp: McpConfig,
    pub timing: TimingConfig,
    #[serde(default)]
    pub n_crit: Option<f64>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    pub experiment: ExperimentConfig,
}

fn check(field: &str, ok: bool, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(field, reason))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    check(field, v > 0.0 && v.is_finite(), "must be finite and > 0")
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    check(field, v >= 0.0 && v.is_finite(), "must be finite and >= 0")
}

fn finite(field: &str, v: f64) -> Result<()> {
    check(field, v.is_finite(), "must be finite")
}

fn detuning(field: &str, d: &DetuningConfig) -> Result<DetuningProfile> {
    match d {
        DetuningConfig::Constant(v) => {
            check(field, v.is_finite() && *v != 0.0, "must be finite and non-zero")?;
            Ok(DetuningProfile::constant(hz_to_rad(*v)))
        }
        DetuningConfig::Profile {
            positions_m,
            values_hz,
        } => {
            check(
                field,
                values_hz.iter().all(|v| *v != 0.0),
                "profile values must be non-zero",
            )?;
            DetuningProfile::new(positions_m.clone(), values_hz.iter().map(|v| hz_to_rad(*v)).collect()).map_err(
                |e| match e {
                    Error::InvalidParameter { reason, .. } => Error::invalid(field, reason),
                    other => other,
                },
            )
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Field-level validation and conversion to internal units.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let c = &self.cavity;
        positive("cavity.frequency_hz", c.frequency_hz)?;
        positive("cavity.kappa_hz", c.kappa_hz)?;
        non_negative("cavity.kappa_out_hz", c.kappa_out_hz)?;
        non_negative("cavity.kappa_in_hz", c.kappa_in_hz)?;
        check(
            "cavity.kappa_hz",
            c.kappa_hz >= c.kappa_out_hz + c.kappa_in_hz,
            "total decay rate must be >= kappa_out_hz + kappa_in_hz",
        )?;
        check(
            "cavity.kappa_hz",
            c.kappa_hz < c.frequency_hz,
            "must be smaller than the cavity frequency",
        )?;
        positive("cavity.length_z_m", c.length_z_m)?;
        check("cavity.mode_antinodes", c.mode_antinodes >= 1, "must be >= 1")?;
        positive("cavity.g_max_hz", c.g_max_hz)?;
        check(
            "cavity.mode_correction",
            c.mode_correction > 0.5 && c.mode_correction <= 1.5,
            "must lie in (0.5, 1.5]",
        )?;
        if let Some(w) = c.transverse_width_m {
            positive("cavity.transverse_width_m", w)?;
        }
        let cavity = CavitySpec {
            omega_c: hz_to_rad(c.frequency_hz),
            kappa: hz_to_rad(c.kappa_hz),
            kappa_out: hz_to_rad(c.kappa_out_hz),
            kappa_in: hz_to_rad(c.kappa_in_hz),
            length_z: c.length_z_m,
            mode_antinodes: c.mode_antinodes,
            g_max: hz_to_rad(c.g_max_hz),
            mode_correction: c.mode_correction,
            transverse_width: c.transverse_width_m,
        };

        let e = &self.ensemble;
        non_negative("ensemble.n_atoms", e.n_atoms)?;
        let p = e.populations;
        for (name, v) in [("s", p.s), ("p_plus", p.p_plus), ("p_minus", p.p_minus), ("p_zero", p.p_zero)] {
            non_negative(&format!("ensemble.populations.{name}"), v)?;
        }
        check(
            "ensemble.populations",
            (p.s + p.p_plus + p.p_minus + p.p_zero - 1.0).abs() < 1e-9,
            "fractions must sum to 1",
        )?;
        non_negative("ensemble.sigma_z_m", e.sigma_z_m)?;
        non_negative("ensemble.sigma_x_m", e.sigma_x_m)?;
        positive("ensemble.velocity_m_s", e.velocity_m_s)?;
        positive("ensemble.tau_s_s", e.tau_s_s)?;
        positive("ensemble.tau_p_s", e.tau_p_s)?;
        finite("ensemble.entry_time_s", e.entry_time_s)?;
        let ensemble = EnsembleState {
            n_atoms: e.n_atoms,
            populations: Populations {
                s: p.s,
                p_plus: p.p_plus,
                p_minus: p.p_minus,
                p_zero: p.p_zero,
            },
            sigma_z: e.sigma_z_m,
            sigma_x: e.sigma_x_m,
            velocity: e.velocity_m_s,
            tau_s: e.tau_s_s,
            tau_p: e.tau_p_s,
            entry_time: e.entry_time_s,
        };

        let t = &self.transitions;
        non_negative("transitions.dipole_moment_ea0", t.dipole_moment_ea0)?;
        let transitions = TransitionSet {
            delta_plus: detuning("transitions.delta_plus_hz", &t.delta_plus_hz)?,
            delta_minus: detuning("transitions.delta_minus_hz", &t.delta_minus_hz)?,
            dipole_moment: dipole_from_atomic_units(t.dipole_moment_ea0),
        };

        let pr = &self.probe;
        finite("probe.delta_m_hz", pr.delta_m_hz)?;
        non_negative("probe.n_c", pr.n_c)?;
        positive("probe.tau_i_s", pr.tau_i_s)?;
        positive("probe.alpha", pr.alpha)?;
        let probe = ProbeConfig {
            delta_m: hz_to_rad(pr.delta_m_hz),
            n_c: pr.n_c,
            tau_i: pr.tau_i_s,
            alpha: pr.alpha,
        };

        positive("noise.n_noise", self.noise.n_noise)?;
        non_negative("noise.digitizer_phase_floor_rad", self.noise.digitizer_phase_floor_rad)?;
        let noise = NoiseChain {
            n_noise: self.noise.n_noise,
            digitizer_phase_floor: self.noise.digitizer_phase_floor_rad,
            rng_seed: self.master_seed,
        };

        let m = &self.mcp;
        check("mcp.eta", m.eta > 0.0 && m.eta <= 1.0, "must lie in (0, 1]")?;
        non_negative("mcp.sigma_a_rel", m.sigma_a_rel)?;
        positive("mcp.s1_atom_v_ns", m.s1_atom_v_ns)?;
        check("mcp.alpha_p", m.alpha_p > 0.0 && m.alpha_p <= 1.0, "must lie in (0, 1]")?;
        check(
            "mcp.beta_s",
            m.beta_s > m.beta_p && m.beta_s < 1.0,
            "must satisfy beta_p < beta_s < 1",
        )?;
        check("mcp.beta_p", m.beta_p > 0.0, "must be > 0")?;
        non_negative("mcp.dt_md_s", m.dt_md_s)?;
        let mcp = McpModel {
            eta: m.eta,
            sigma_a_rel: m.sigma_a_rel,
            s1_atom: m.s1_atom_v_ns,
            alpha_p: m.alpha_p,
            beta_s: m.beta_s,
            beta_p: m.beta_p,
            dt_md: m.dt_md_s,
            tau_s: e.tau_s_s,
            tau_p: e.tau_p_s,
        };

        let tm = &self.timing;
        positive("timing.dt_s", tm.dt_s)?;
        let tau_c = 1.0 / (PI * c.kappa_hz);
        check(
            "timing.dt_s",
            tm.dt_s <= MAX_STEP_TAU_C * tau_c,
            &format!("must be <= tau_c/20 = {:.4e} s", MAX_STEP_TAU_C * tau_c),
        )?;
        non_negative("timing.reference_gap_s", tm.reference_gap_s)?;
        check("shots", self.shots >= 1, "must be >= 1")?;
        if let Some(n) = self.n_crit {
            positive("n_crit", n)?;
        }

        let experiment = match &self.experiment {
            ExperimentConfig::Flythrough {
                probe_detunings_kappa,
                extended_cloud,
                fit,
            } => {
                check(
                    "experiment.probe_detunings_kappa",
                    !probe_detunings_kappa.is_empty() && probe_detunings_kappa.iter().all(|v| v.is_finite()),
                    "must be a non-empty list of finite numbers",
                )?;
                Experiment::Flythrough(FlythroughSettings {
                    probe_detunings: probe_detunings_kappa.clone(),
                    extended_cloud: *extended_cloud,
                    fit: *fit,
                })
            }
            ExperimentConfig::Sensitivity { cavity_systematic } => {
                check(
                    "experiment.cavity_systematic",
                    *cavity_systematic > -1.0 && cavity_systematic.is_finite(),
                    "must be finite and > -1",
                )?;
                Experiment::Sensitivity(SensitivitySettings {
                    cavity_systematic: *cavity_systematic,
                })
            }
            ExperimentConfig::PowerSweep {
                atom_numbers,
                excitation_scale,
                excitation_atoms,
            } => {
                check(
                    "experiment.atom_numbers",
                    !atom_numbers.is_empty() && atom_numbers.iter().all(|v| *v > 0.0 && v.is_finite()),
                    "must be a non-empty list of positive numbers",
                )?;
                non_negative("experiment.excitation_scale", *excitation_scale)?;
                positive("experiment.excitation_atoms", *excitation_atoms)?;
                Experiment::PowerSweep(PowerSweepSettings {
                    atom_numbers: atom_numbers.clone(),
                    excitation_scale: *excitation_scale,
                    excitation_atoms: *excitation_atoms,
                })
            }
            ExperimentConfig::Campaign {
                poisson_preparation,
                single_transition,
                photon_numbers,
                precision_atoms,
            } => {
                check(
                    "experiment.photon_numbers",
                    photon_numbers.iter().all(|v| *v > 0.0 && v.is_finite()),
                    "must be positive numbers",
                )?;
                positive("experiment.precision_atoms", *precision_atoms)?;
                Experiment::Campaign(CampaignSettings {
                    poisson_preparation: *poisson_preparation,
                    single_transition: *single_transition,
                    photon_numbers: photon_numbers.clone(),
                    precision_atoms: *precision_atoms,
                })
            }
            ExperimentConfig::Rabi {
                depolarization,
                prep_to_center_s,
                calibration,
                spectroscopy,
            } => {
                non_negative("experiment.depolarization.p_plus", depolarization.p_plus)?;
                non_negative("experiment.depolarization.p_minus", depolarization.p_minus)?;
                check(
                    "experiment.depolarization",
                    depolarization.p_plus + depolarization.p_minus <= 1.0 + 1e-12,
                    "p_plus + p_minus must be <= 1",
                )?;
                non_negative("experiment.prep_to_center_s", *prep_to_center_s)?;
                let calibration = match calibration {
                    Some(cal) => {
                        positive("experiment.calibration.pulse_area_max_rad", cal.pulse_area_max_rad)?;
                        check("experiment.calibration.points", cal.points >= 2, "must be >= 2")?;
                        positive("experiment.calibration.n_atoms", cal.n_atoms)?;
                        Some(CalibrationSettings {
                            pulse_areas: linspace(0.0, cal.pulse_area_max_rad, cal.points),
                            n_atoms: cal.n_atoms,
                        })
                    }
                    None => None,
                };
                let spectroscopy = match spectroscopy {
                    Some(sp) => {
                        check(
                            "experiment.spectroscopy.prep_ratios",
                            !sp.prep_ratios.is_empty() && sp.prep_ratios.iter().all(|v| *v >= 0.0 && v.is_finite()),
                            "must be a non-empty list of numbers >= 0",
                        )?;
                        finite("experiment.spectroscopy.frequency_start_hz", sp.frequency_start_hz)?;
                        check(
                            "experiment.spectroscopy.frequency_stop_hz",
                            sp.frequency_stop_hz > sp.frequency_start_hz && sp.frequency_stop_hz.is_finite(),
                            "must be finite and > frequency_start_hz",
                        )?;
                        check("experiment.spectroscopy.frequency_points", sp.frequency_points >= 5, "must be >= 5")?;
                        positive("experiment.spectroscopy.dt_i_s", sp.dt_i_s)?;
                        non_negative("experiment.spectroscopy.decay_interval_s", sp.decay_interval_s)?;
                        positive("experiment.spectroscopy.omega_i_plus_hz", sp.omega_i_plus_hz)?;
                        positive("experiment.spectroscopy.omega_i_minus_hz", sp.omega_i_minus_hz)?;
                        positive("experiment.spectroscopy.n_atoms", sp.n_atoms)?;
                        Some(SpectroscopySettings {
                            prep_ratios: sp.prep_ratios.clone(),
                            frequencies: linspace(sp.frequency_start_hz, sp.frequency_stop_hz, sp.frequency_points)
                                .into_iter()
                                .map(hz_to_rad)
                                .collect(),
                            dt_i: sp.dt_i_s,
                            decay_interval: sp.decay_interval_s,
                            omega_i_plus: hz_to_rad(sp.omega_i_plus_hz),
                            omega_i_minus: hz_to_rad(sp.omega_i_minus_hz),
                            n_atoms: sp.n_atoms,
                        })
                    }
                    None => None,
                };
                Experiment::Rabi(RabiSettings {
                    depolarization: DepolarizationMap {
                        p_plus: depolarization.p_plus,
                        p_minus: depolarization.p_minus,
                    },
                    prep_to_center: *prep_to_center_s,
                    calibration,
                    spectroscopy,
                })
            }
        };

        let scenario = Scenario {
            name: self.name.clone(),
            cavity,
            ensemble,
            transitions,
            probe,
            noise,
            mcp,
            timing: Timing {
                dt: tm.dt_s,
                reference_gap: tm.reference_gap_s,
            },
            n_crit: self.n_crit,
            shots: self.shots,
            sweep: self.sweep.clone(),
            master_seed: self.master_seed,
            experiment,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// One emitted file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Provenance record of a run. Re-running with the embedded config
/// reproduces every listed output byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub outputs: Vec<OutputFile>,
    pub config: ScenarioConfig,
}

/// Reads a scenario config, or the config embedded in a manifest.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("tool").is_some() && value.get("config").is_some() {
        let manifest: Manifest = serde_json::from_value(value)?;
        return Ok(manifest.config);
    }
    Ok(serde_json::from_value(value)?)
}

/// Formats a float with 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// CSV bytes of a table.
pub fn table_to_csv(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| match c {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Writes every table as `<name>.csv`, the summary as `summary.json`, and a
/// `manifest.json` listing them.
pub fn write_dataset(dataset: &Dataset, config: &ScenarioConfig, out_dir: &Path, started: f64) -> Result<Manifest> {
    fs::create_dir_all(out_dir)?;
    let mut outputs = Vec::new();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for t in &dataset.tables {
        files.push((format!("{}.csv", t.name), table_to_csv(t)?));
    }
    let mut summary = serde_json::to_vec_pretty(&dataset.summary)?;
    summary.push(b'\n');
    files.push(("summary.json".into(), summary));
    for (name, bytes) in files {
        fs::write(out_dir.join(&name), &bytes)?;
        outputs.push(OutputFile {
            sha256: sha256_hex(&bytes),
            file: name,
        });
    }
    let manifest = Manifest {
        tool: TOOL_NAME.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        master_seed: config.master_seed,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        outputs,
        config: config.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(out_dir.join("manifest.json"), bytes)?;
    Ok(manifest)
}

/// Validates, runs and writes a scenario.
pub fn run_config(config: &ScenarioConfig, out_dir: &Path) -> Result<Manifest> {
    let started = unix_now();
    let scenario = config.to_scenario()?;
    let dataset = crate::experiments::run(&scenario)?;
    write_dataset(&dataset, config, out_dir, started)
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Numeric CSV file: column name to values. Text columns are kept
/// separately.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvColumns {
    pub path: PathBuf,
    pub numeric: BTreeMap<String, Vec<f64>>,
    pub text: BTreeMap<String, Vec<String>>,
    pub rows: usize,
}

impl CsvColumns {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            for (j, v) in rec.iter().enumerate().take(headers.len()) {
                raw[j].push(v.trim().to_string());
            }
            rows += 1;
        }
        let mut numeric = BTreeMap::new();
        let mut text = BTreeMap::new();
        for (h, col) in headers.into_iter().zip(raw) {
            let parsed: Option<Vec<f64>> = col.iter().map(|v| v.parse::<f64>().ok()).collect();
            match parsed {
                Some(v) => {
                    numeric.insert(h, v);
                }
                None => {
                    text.insert(h, col);
                }
            }
        }
        Ok(CsvColumns {
            path: path.to_path_buf(),
            numeric,
            text,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.numeric.get(name).map(Vec::as_slice).ok_or_else(|| {
            if self.text.contains_key(name) {
                Error::Schema(format!("column '{name}' in {} is not numeric", self.path.display()))
            } else {
                Error::Schema(format!("missing column '{name}' in {}", self.path.display()))
            }
        })
    }

    /// Column as strings (numeric columns are formatted back).
    pub fn labels(&self, name: &str) -> Result<Vec<String>> {
        if let Some(t) = self.text.get(name) {
            return Ok(t.clone());
        }
        Ok(self.column(name)?.iter().map(|v| v.to_string()).collect())
    }
}

/// Groups row indices by the value of a key column, in order of first
/// appearance.
fn group_by(keys: &[f64]) -> Vec<(f64, Vec<usize>)> {
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (i, &k) in keys.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == k) {
            Some(g) => g.1.push(i),
            None => groups.push((k, vec![i])),
        }
    }
    groups
}

/// Traces from a fly-through CSV (one trace per probe detuning).
pub fn traces_from_csv(c: &CsvColumns) -> Result<Vec<MeasuredTrace>> {
    let det = c.column("probe_detuning_hz")?;
    let time = c.column("time_s")?;
    let amp = c.column("amplitude_rel")?;
    let phase = c.column("phase_rad")?;
    let s_amp = c.column("sigma_amplitude_rel")?;
    let s_phase = c.column("sigma_phase_rad")?;
    group_by(det)
        .into_iter()
        .map(|(d, idx)| {
            if idx.len() < 2 {
                return Err(Error::Schema(format!("trace at {d} Hz has fewer than two samples")));
            }
            let t0 = time[idx[0]];
            let dt = time[idx[1]] - t0;
            for (k, &i) in idx.iter().enumerate() {
                let expect = t0 + dt * k as f64;
                if !(dt > 0.0) || (time[i] - expect).abs() > 1e-6 * dt {
                    return Err(Error::Schema(format!("trace at {d} Hz is not uniformly sampled")));
                }
            }
            Ok(MeasuredTrace {
                delta_m: hz_to_rad(d),
                t0,
                dt,
                amp: idx.iter().map(|&i| amp[i]).collect(),
                phase: idx.iter().map(|&i| phase[i]).collect(),
                sigma_amp: idx.iter().map(|&i| s_amp[i]).collect(),
                sigma_phase: idx.iter().map(|&i| s_phase[i]).collect(),
            })
        })
        .collect()
}

/// Power-sweep data sets grouped by the `dataset` column.
pub fn power_datasets_from_csv(c: &CsvColumns) -> Result<Vec<PowerDataset>> {
    let labels = c.labels("dataset")?;
    let n_c = c.column("n_c")?;
    let phi = c.column("delta_phi_deg")?;
    let sigma = c.column("sigma_delta_phi_deg")?;
    let mut out: Vec<PowerDataset> = Vec::new();
    for i in 0..c.rows {
        let pos = match out.iter().position(|d| d.label == labels[i]) {
            Some(p) => p,
            None => {
                out.push(PowerDataset {
                    label: labels[i].clone(),
                    n_c: Vec::new(),
                    delta_phi_deg: Vec::new(),
                    sigma_deg: Vec::new(),
                });
                out.len() - 1
            }
        };
        out[pos].n_c.push(n_c[i]);
        out[pos].delta_phi_deg.push(phi[i]);
        out[pos].sigma_deg.push(sigma[i]);
    }
    Ok(out)
}

pub fn rabi_data_from_csv(c: &CsvColumns) -> Result<RabiData> {
    Ok(RabiData {
        pulse_area: c.column("pulse_area_rad")?.to_vec(),
        s1: c.column("s1_v_ns")?.to_vec(),
        s2: c.column("s2_v_ns")?.to_vec(),
        s_r: c.column("s_r")?.to_vec(),
        sigma_s1: c.column("sigma_s1_v_ns")?.to_vec(),
        sigma_s2: c.column("sigma_s2_v_ns")?.to_vec(),
        sigma_s_r: c.column("sigma_s_r")?.to_vec(),
    })
}

/// Spectra grouped by preparation ratio; frequencies converted to rad/s.
pub fn spectra_from_csv(c: &CsvColumns) -> Result<Vec<Spectrum>> {
    let ratio = c.column("prep_ratio")?;
    let f = c.column("frequency_hz")?;
    let p = c.column("p_p")?;
    let s = c.column("sigma_p_p")?;
    Ok(group_by(ratio)
        .into_iter()
        .map(|(r, idx)| Spectrum {
            prep_ratio: r,
            frequency: idx.iter().map(|&i| hz_to_rad(f[i])).collect(),
            p_p: idx.iter().map(|&i| p[i]).collect(),
            sigma: idx.iter().map(|&i| s[i]).collect(),
        })
        .collect())
}
