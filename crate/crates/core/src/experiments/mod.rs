//! Scenario runners producing the tabular data sets of each experiment.

mod campaign;
mod flythrough;
mod power;
mod rabi;
mod scenario;
mod sensitivity;
pub mod trueness;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::Serialize;

pub use campaign::{calibrate_floor, run_campaign};
pub use flythrough::run_flythrough;
pub use power::run_power_sweep;
pub use rabi::run_rabi;
pub use scenario::{
    CalibrationSettings, CampaignSettings, Experiment, FlythroughSettings, PowerSweepSettings, RabiSettings,
    Scenario, SensitivitySettings, SpectroscopySettings, Sweep, Timing,
};
pub use sensitivity::run_sensitivity;

use crate::detection::{mcp_signal, ratio_to_fraction, McpModel, ShotWindows};
use crate::error::{Error, Result};
use crate::estimation::TraceModel;
use crate::model::{cloud_averaged_coupling_sq, critical_photon_number, power_factor};
use crate::transmission::{
    extremum, phase_change, ComplexTrace, FlyThroughOptions, TimeGrid, Warmup, Window,
};
use crate::units::wrap_phase;

/// One cell of an output table.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Named table with unit-suffixed column names.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Numeric column by name; integer cells are converted.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        self.rows
            .iter()
            .map(|r| match &r[j] {
                Cell::Float(v) => Some(*v),
                Cell::Int(v) => Some(*v as f64),
                Cell::Text(_) => None,
            })
            .collect()
    }
}

/// Output of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub kind: String,
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
}

impl Dataset {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Runs the experiment described by the scenario.
pub fn run(scenario: &Scenario) -> Result<Dataset> {
    scenario.validate()?;
    match &scenario.experiment {
        Experiment::Flythrough(_) => run_flythrough(scenario),
        Experiment::Sensitivity(_) => run_sensitivity(scenario),
        Experiment::PowerSweep(_) => run_power_sweep(scenario),
        Experiment::Campaign(_) => run_campaign(scenario),
        Experiment::Rabi(_) => run_rabi(scenario),
    }
}

/// Trace model, grid and window placement shared by the runners.
#[derive(Debug, Clone)]
pub struct SignalSetup {
    pub model: TraceModel,
    pub grid: TimeGrid,
    /// Time of the phase extremum of the probe detuning in use (s).
    pub t_max: f64,
    pub windows: ShotWindows,
    /// RMS coupling over the signal window (rad/s).
    pub g_eff: f64,
    pub n_crit: f64,
    pub delta_m: f64,
}

impl SignalSetup {
    pub fn new(s: &Scenario, extended_cloud: bool) -> Result<Self> {
        let cavity = &s.cavity;
        let ens = &s.ensemble;
        let tau_c = cavity.tau_c();
        let exit = ens.exit_time(cavity);
        let t_ref = exit + s.timing.reference_gap;
        let end = t_ref + s.probe.alpha * s.probe.tau_i + 2.0 * s.timing.dt;
        let start = (ens.entry_time - s.probe.tau_i).min(0.0);
        let grid = TimeGrid::spanning(start, end, s.timing.dt)?;
        let mut model = TraceModel {
            cavity: cavity.clone(),
            transitions: s.transitions.clone(),
            ensemble: ens.clone(),
            fly_through: FlyThroughOptions { extended_cloud },
            warmup: Warmup::SteadyState,
            power_factor: 1.0,
        };

        // the extremum time does not depend on the shift scale
        let unit = model.predict(1.0, s.probe.delta_m, grid)?;
        let reference = Window {
            start: t_ref,
            end: t_ref + s.probe.alpha * s.probe.tau_i,
        };
        let dphi = phase_change(&unit, unit.window_mean(reference)?.arg());
        let search = Window {
            start: ens.entry_time,
            end: exit + 5.0 * tau_c,
        };
        let (t_max, _) = extremum(&grid, &dphi, search)
            .ok_or_else(|| Error::Config("no phase extremum inside the transit".into()))?;
        let windows = ShotWindows::new(t_max, t_ref, &s.probe);
        windows.check()?;

        let sig = unit.window_indices(windows.signal)?;
        let n = sig.len() as f64;
        let g_sq = sig
            .map(|i| {
                let z = ens.velocity * (grid.time(i) - ens.entry_time);
                let (sz, sx) = if extended_cloud { (ens.sigma_z, ens.sigma_x) } else { (0.0, 0.0) };
                cloud_averaged_coupling_sq(z, sz, sx, cavity)
            })
            .sum::<f64>()
            / n;
        let g_eff = g_sq.sqrt();
        let n_crit = match s.n_crit {
            Some(v) => v,
            None => {
                let dp = s.transitions.delta_plus.mean();
                let dm = s.transitions.delta_minus.mean();
                let nearest = if dp.abs() <= dm.abs() { dp } else { dm };
                critical_photon_number(g_eff, nearest)?
            }
        };
        model.power_factor = power_factor(s.probe.n_c, n_crit);
        Ok(SignalSetup {
            model,
            grid,
            t_max,
            windows,
            g_eff,
            n_crit,
            delta_m: s.probe.delta_m,
        })
    }

    /// Same setup at another intracavity photon number.
    pub fn with_photons(&self, n_c: f64) -> Self {
        let mut out = self.clone();
        out.model.power_factor = power_factor(n_c, self.n_crit);
        out
    }

    pub fn trace(&self, n_atoms: f64) -> Result<ComplexTrace> {
        self.model.predict(n_atoms, self.delta_m, self.grid)
    }

    /// Noiseless window means (signal, reference).
    pub fn window_means(&self, n_atoms: f64) -> Result<(Complex64, Complex64)> {
        let tr = self.trace(n_atoms)?;
        Ok((tr.window_mean(self.windows.signal)?, tr.window_mean(self.windows.reference)?))
    }

    /// Noiseless phase change (degrees) between the signal and reference
    /// window means.
    pub fn signal_phase(&self, n_atoms: f64) -> Result<f64> {
        let (s, r) = self.window_means(n_atoms)?;
        Ok(wrap_phase(s.arg() - r.arg()).to_degrees())
    }

    /// Mean dispersive shift over the signal window (rad/s).
    pub fn signal_shift(&self, n_atoms: f64) -> Result<f64> {
        let shift = self.model.unit_shift(self.grid, self.model.ensemble.entry_time)?;
        let range = ComplexTrace {
            grid: self.grid,
            values: vec![Complex64::new(0.0, 0.0); self.grid.len],
        }
        .window_indices(self.windows.signal)?;
        let n = range.len() as f64;
        Ok(n_atoms * range.map(|i| shift.chi[i]).sum::<f64>() / n)
    }
}

/// Monotone table of the noiseless phase change versus atom number, used to
/// convert measured phases to atom numbers.
#[derive(Debug, Clone)]
pub struct PhaseTable {
    pub n_atoms: Vec<f64>,
    pub phase_deg: Vec<f64>,
}

impl PhaseTable {
    pub fn build(setup: &SignalSetup, n_max: f64, points: usize) -> Result<Self> {
        let points = points.max(3);
        let n_atoms: Vec<f64> = (0..points).map(|i| n_max * i as f64 / (points - 1) as f64).collect();
        let phase_deg = n_atoms
            .iter()
            .map(|&n| setup.signal_phase(n))
            .collect::<Result<Vec<_>>>()?;
        let increasing = phase_deg.windows(2).all(|w| w[1] > w[0]);
        let decreasing = phase_deg.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::Config("phase response is not monotonic in the atom number".into()));
        }
        Ok(PhaseTable { n_atoms, phase_deg })
    }

    /// Atom number for a measured phase change; linear extrapolation beyond
    /// the table ends.
    pub fn invert(&self, phase_deg: f64) -> f64 {
        let p = &self.phase_deg;
        let n = &self.n_atoms;
        let sign = if p[p.len() - 1] < p[0] { -1.0 } else { 1.0 };
        let x = sign * phase_deg;
        let k = p
            .partition_point(|&v| sign * v < x)
            .clamp(1, p.len() - 1);
        let (x0, x1) = (sign * p[k - 1], sign * p[k]);
        n[k - 1] + (x - x0) * (n[k] - n[k - 1]) / (x1 - x0)
    }
}

/// Sample mean and standard error.
pub(crate) fn mean_sem(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample standard deviation.
pub(crate) fn std_dev(v: &[f64]) -> f64 {
    let (_, sem) = mean_sem(v);
    sem * (v.len() as f64).sqrt()
}

/// Number of atoms prepared in one shot.
pub(crate) fn prepared_atoms<R: Rng + ?Sized>(mean: f64, poisson: bool, rng: &mut R) -> u64 {
    if poisson && mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    } else {
        mean.round().max(0.0) as u64
    }
}

/// MCP estimate of a p fraction averaged over shots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct McpEstimate {
    pub s1: f64,
    pub s1_sem: f64,
    pub s2: f64,
    pub s2_sem: f64,
    pub s_r: f64,
    pub s_r_sem: f64,
    pub p_p: f64,
    pub p_p_sigma: f64,
}

/// Simulates `shots` MCP shots of `n_atoms` atoms with p fraction `p_p` at
/// the population change; each level decays with its own lifetime until
/// detection. Signals are scaled so that a pure s shot gives `s1_atom` per
/// atom.
pub(crate) fn measure_p_fraction<R: Rng + ?Sized>(
    n_atoms: f64,
    p_p: f64,
    mcp: &McpModel,
    shots: u64,
    rng: &mut R,
) -> McpEstimate {
    let surv_s = (-mcp.dt_md / mcp.tau_s).exp();
    let surv_p = (-mcp.dt_md / mcp.tau_p).exp();
    let scaled = McpModel {
        s1_atom: mcp.s1_atom / surv_s,
        ..*mcp
    };
    let n = n_atoms.round().max(0.0) as u64;
    let p = p_p.clamp(0.0, 1.0);
    let mut s1 = Vec::with_capacity(shots as usize);
    let mut s2 = Vec::with_capacity(shots as usize);
    let mut ratio = Vec::with_capacity(shots as usize);
    for _ in 0..shots {
        let n_p0 = if p > 0.0 && p < 1.0 && n > 0 {
            Binomial::new(n, p).expect("probability").sample(rng)
        } else if p >= 1.0 {
            n
        } else {
            0
        };
        let n_s0 = n - n_p0;
        let n_s = binomial(n_s0, surv_s, rng);
        let n_p = binomial(n_p0, surv_p, rng);
        let (a, b) = mcp_signal(n_s, n_p, &scaled, rng);
        s1.push(a);
        s2.push(b);
        if a > 0.0 {
            ratio.push(b / a);
        }
    }
    let (m1, e1) = mean_sem(&s1);
    let (m2, e2) = mean_sem(&s2);
    let (_, er) = mean_sem(&ratio);
    let s_r = if m1 > 0.0 { m2 / m1 } else { f64::NAN };
    let p_hat = ratio_to_fraction(s_r, mcp);
    let h = 1e-6 * s_r.abs().max(1e-6);
    let slope = (ratio_to_fraction(s_r + h, mcp) - ratio_to_fraction(s_r - h, mcp)) / (2.0 * h);
    McpEstimate {
        s1: m1,
        s1_sem: e1,
        s2: m2,
        s2_sem: e2,
        s_r,
        s_r_sem: er,
        p_p: p_hat,
        p_p_sigma: (slope * er).abs(),
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("probability").sample(rng)
}

/// Stream index of shot `shot` at sweep point `point`.
pub(crate) fn shot_index(point: usize, shot: u64) -> u64 {
    ((point as u64) << 32) | (shot & 0xFFFF_FFFF)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::detection::{NoiseChain, ProbeConfig};
    use crate::model::{DetuningProfile, EnsembleState, Populations, TransitionSet};
    use crate::rng::{stream, Purpose};
    use crate::units::hz_to_rad;

    pub(crate) fn scenario(experiment: Experiment, sweep: Option<Sweep>) -> Scenario {
        Scenario {
            name: "test".into(),
            cavity: crate::model::tests::cavity(),
            ensemble: EnsembleState {
                n_atoms: 261.0,
                populations: Populations::PURE_S,
                sigma_z: 0.6e-3,
                sigma_x: 0.3e-3,
                velocity: 950.0,
                tau_s: 57.2e-6,
                tau_p: 102.6e-6,
                entry_time: 4e-6,
            },
            transitions: TransitionSet {
                delta_plus: DetuningProfile::constant(hz_to_rad(-8e6)),
                delta_minus: DetuningProfile::constant(hz_to_rad(-26e6)),
                dipole_moment: 0.0,
            },
            probe: ProbeConfig {
                delta_m: 0.0,
                n_c: 2e3,
                tau_i: 6.2e-6,
                alpha: 4.0,
            },
            noise: NoiseChain {
                n_noise: 23.0,
                digitizer_phase_floor: 0.0,
                rng_seed: 0,
            },
            mcp: crate::detection::tests::mcp(),
            timing: Timing {
                dt: 20e-9,
                reference_gap: 5e-6,
            },
            n_crit: None,
            shots: 100,
            sweep,
            master_seed: 11,
            experiment,
        }
    }

    fn setup() -> SignalSetup {
        let s = scenario(
            Experiment::Flythrough(FlythroughSettings {
                probe_detunings: vec![0.0],
                extended_cloud: false,
                fit: false,
            }),
            None,
        );
        SignalSetup::new(&s, false).unwrap()
    }

    #[test]
    fn signal_window_follows_center_with_delay() {
        let st = setup();
        let t_cen = st.model.ensemble.center_time(&st.model.cavity);
        let d = st.t_max - t_cen;
        assert!(d > 0.5e-6 && d < 1.5e-6, "{d}");
        assert!(st.g_eff < st.model.cavity.g_max && st.g_eff > 0.8 * st.model.cavity.g_max);
    }

    #[test]
    fn phase_table_inverts() {
        let st = setup();
        let t = PhaseTable::build(&st, 1000.0, 101).unwrap();
        for n in [0.0, 37.5, 261.0, 999.0] {
            let p = st.signal_phase(n).unwrap();
            assert!((t.invert(p) - n).abs() < 0.05, "{n}");
        }
        let p = st.signal_phase(1100.0).unwrap();
        assert!((t.invert(p) - 1100.0).abs() < 1.0);
    }

    #[test]
    fn mcp_estimate_recovers_p_fraction() {
        let mcp = crate::detection::tests::mcp();
        let mut rng = stream(3, Purpose::Mcp, 0);
        for p in [0.0, 0.3, 0.9] {
            let e = measure_p_fraction(500.0, p, &mcp, 4000, &mut rng);
            assert!((e.p_p - p).abs() < 4.0 * e.p_p_sigma.max(1e-3), "{p} {e:?}");
        }
        let e = measure_p_fraction(500.0, 0.0, &mcp, 4000, &mut rng);
        assert!((e.s1 / (500.0 * mcp.s1_atom) - 1.0).abs() < 0.01);
    }

    #[test]
    fn shot_indices_are_distinct() {
        assert_ne!(shot_index(1, 0), shot_index(0, 1));
        assert_eq!(shot_index(2, 5) >> 32, 2);
    }
}
