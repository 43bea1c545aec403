//! Atom-number and entry-time fits of time-resolved transmission traces.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lm::{least_squares_fit, FitOptions, FitResult, Param};
use crate::error::{Error, Result};
use crate::model::{CavitySpec, EnsembleState, TransitionSet};
use crate::transmission::{
    fly_through_shift_trace, steady_transmission, transmission_response, ComplexTrace, FlyThroughOptions,
    ShiftTrace, TimeGrid, Warmup,
};
use crate::units::wrap_phase;

/// Everything needed to predict a transmission trace except the atom number.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceModel {
    pub cavity: CavitySpec,
    pub transitions: TransitionSet,
    /// Cloud template; `n_atoms` is ignored.
    pub ensemble: EnsembleState,
    pub fly_through: FlyThroughOptions,
    pub warmup: Warmup,
    /// Power dressing chi(n_c)/chi_0 of the probe, 1 for a weak probe.
    pub power_factor: f64,
}

impl TraceModel {
    fn template(&self, entry_time: f64) -> EnsembleState {
        EnsembleState {
            n_atoms: 1.0,
            entry_time,
            ..self.ensemble
        }
    }

    /// Shift trace of a single atom (scaled by the power factor).
    pub fn unit_shift(&self, grid: TimeGrid, entry_time: f64) -> Result<ShiftTrace> {
        Ok(fly_through_shift_trace(&self.template(entry_time), &self.cavity, &self.transitions, grid, self.fly_through)?
            .scaled(self.power_factor))
    }

    pub fn predict(&self, n_atoms: f64, delta_m: f64, grid: TimeGrid) -> Result<ComplexTrace> {
        self.predict_at(n_atoms, self.ensemble.entry_time, delta_m, grid)
    }

    pub fn predict_at(&self, n_atoms: f64, entry_time: f64, delta_m: f64, grid: TimeGrid) -> Result<ComplexTrace> {
        let shift = self.unit_shift(grid, entry_time)?.scaled(n_atoms);
        transmission_response(&shift, delta_m, self.cavity.kappa, self.warmup)
    }

    /// Largest atom number (at the cavity center) for which the dispersive
    /// validity condition holds at cavity entry.
    pub fn max_atoms(&self) -> f64 {
        let d = self
            .transitions
            .delta_plus
            .min_abs()
            .min(self.transitions.delta_minus.min_abs());
        let transit = self.cavity.length_z / self.ensemble.velocity;
        let tau = self.ensemble.tau_s.min(self.ensemble.tau_p);
        (d / (10.0 * self.cavity.g_max)).powi(2) * (-0.5 * transit / tau).exp()
    }
}

/// Measured transmission trace: amplitude and absolute phase (rad) with
/// per-sample standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredTrace {
    pub delta_m: f64,
    pub t0: f64,
    pub dt: f64,
    pub amp: Vec<f64>,
    pub phase: Vec<f64>,
    pub sigma_amp: Vec<f64>,
    pub sigma_phase: Vec<f64>,
}

impl MeasuredTrace {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.dt, self.amp.len())
    }

    fn validate(&self) -> Result<()> {
        let n = self.amp.len();
        if self.phase.len() != n || self.sigma_amp.len() != n || self.sigma_phase.len() != n {
            return Err(Error::Schema("trace columns have different lengths".into()));
        }
        if self
            .sigma_amp
            .iter()
            .chain(&self.sigma_phase)
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::Schema("trace standard deviations must be finite and > 0".into()));
        }
        if self.amp.iter().chain(&self.phase).any(|v| !v.is_finite()) {
            return Err(Error::Schema("trace contains non-finite samples".into()));
        }
        Ok(())
    }

    /// Noiseless trace with nominal standard deviations derived from a
    /// per-quadrature noise level `sigma`.
    pub fn from_complex(trace: &ComplexTrace, delta_m: f64, sigma: f64) -> Self {
        let amp = trace.amplitude();
        MeasuredTrace {
            delta_m,
            t0: trace.grid.start,
            dt: trace.grid.dt,
            sigma_amp: vec![sigma; amp.len()],
            sigma_phase: amp.iter().map(|a| sigma / a).collect(),
            phase: trace.phase(),
            amp,
        }
    }

    /// Adds independent complex Gaussian noise of per-quadrature standard
    /// deviation `sigma` to every sample.
    pub fn noisy<R: Rng + ?Sized>(trace: &ComplexTrace, delta_m: f64, sigma: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let values: Vec<Complex64> = trace
            .values
            .iter()
            .map(|a| a + Complex64::new(normal.sample(rng), normal.sample(rng)))
            .collect();
        let noisy = ComplexTrace {
            grid: trace.grid,
            values,
        };
        let mut out = MeasuredTrace::from_complex(&noisy, delta_m, sigma);
        // standard deviations follow the noiseless amplitude
        out.sigma_phase = trace.values.iter().map(|a| sigma / a.norm()).collect();
        out
    }

    pub fn shifted(&self, dt: f64) -> Self {
        MeasuredTrace {
            t0: self.t0 + dt,
            ..self.clone()
        }
    }
}

fn residuals(model: &ComplexTrace, data: &MeasuredTrace, out: &mut Vec<f64>) {
    for (i, a) in model.values.iter().enumerate() {
        out.push((a.norm() - data.amp[i]) / data.sigma_amp[i]);
        out.push(wrap_phase(a.arg() - data.phase[i]) / data.sigma_phase[i]);
    }
}

/// Linear projection of the data phase change onto the single-atom model.
fn projected_atom_number(model: &TraceModel, data: &[MeasuredTrace], entry_time: f64) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for d in data {
        let grid = d.grid()?;
        let one = model.predict_at(1.0, entry_time, d.delta_m, grid)?;
        let bare = steady_transmission(0.0, d.delta_m, model.cavity.kappa).arg();
        for i in 0..grid.len {
            let w = 1.0 / (d.sigma_phase[i] * d.sigma_phase[i]);
            let x = wrap_phase(one.values[i].arg() - bare);
            let y = wrap_phase(d.phase[i] - bare);
            num += w * x * y;
            den += w * x * x;
        }
    }
    if den == 0.0 {
        return Err(Error::Unidentifiable("model has no atom signal over the traces".into()));
    }
    Ok(num / den)
}

/// Joint amplitude and phase fit of the atom number at the cavity center.
pub fn fit_atom_number(data: &[MeasuredTrace], model: &TraceModel, options: &FitOptions) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::invalid("traces", "at least one trace required"));
    }
    for d in data {
        d.validate()?;
    }
    let n_max = model.max_atoms();
    let entry = model.ensemble.entry_time;
    let init = projected_atom_number(model, data, entry)?.clamp(0.0, 0.9 * n_max);
    let grids: Vec<TimeGrid> = data.iter().map(|d| d.grid()).collect::<Result<_>>()?;
    // chi is linear in N: cache the single-atom shift and rescale it
    let units: Vec<ShiftTrace> = grids
        .iter()
        .map(|g| model.unit_shift(*g, entry))
        .collect::<Result<_>>()?;
    let scale = init.abs().max(1.0);
    let fit = least_squares_fit(
        |p| {
            let mut r = Vec::with_capacity(data.iter().map(|d| 2 * d.amp.len()).sum());
            for (d, u) in data.iter().zip(&units) {
                let shift = u.clone().scaled(p[0]);
                let pred = transmission_response(&shift, d.delta_m, model.cavity.kappa, model.warmup)?;
                residuals(&pred, d, &mut r);
            }
            Ok(r)
        },
        &[Param::new("n_atoms", init).bounded(0.0, n_max).with_scale(scale)],
        options,
    )?;
    if fit.values[0] >= n_max {
        let d = model
            .transitions
            .delta_plus
            .min_abs()
            .min(model.transitions.delta_minus.min_abs());
        return Err(Error::DispersiveValidity {
            detuning: d,
            limit: 10.0 * model.cavity.g_max * n_max.sqrt(),
        });
    }
    Ok(fit)
}

/// Time-origin fit of a single trace. The atom number is a nuisance
/// parameter; the entry time is reported in seconds as parameter
/// `entry_time`.
pub fn fit_entry_time(data: &MeasuredTrace, model: &TraceModel, options: &FitOptions) -> Result<FitResult> {
    data.validate()?;
    let grid = data.grid()?;
    let kappa = model.cavity.kappa;
    let bare = steady_transmission(0.0, data.delta_m, kappa).arg();
    let nominal = model.ensemble.entry_time;

    // locate the data extremum relative to the nominal model to seed the fit
    let observed: Vec<f64> = data.phase.iter().map(|p| wrap_phase(p - bare)).collect();
    let nominal_phase: Vec<f64> = model
        .predict_at(1.0, nominal, data.delta_m, grid)?
        .values
        .iter()
        .map(|a| wrap_phase(a.arg() - bare))
        .collect();
    let argmax = |v: &[f64]| {
        (0..v.len())
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap_or(0)
    };
    let offset = (argmax(&observed) as f64 - argmax(&nominal_phase) as f64) * grid.dt;
    let entry0 = nominal + offset;

    let n0 = projected_atom_number(model, std::slice::from_ref(data), entry0)?;
    let signal_sigma = {
        let one = model.predict_at(1.0, entry0, data.delta_m, grid)?;
        let info: f64 = (0..grid.len)
            .map(|i| (wrap_phase(one.values[i].arg() - bare) / data.sigma_phase[i]).powi(2))
            .sum();
        1.0 / info.sqrt()
    };
    if !(n0 > 3.0 * signal_sigma) {
        return Err(Error::Unidentifiable(format!(
            "no significant atom signal (projected N = {n0:.3}, noise {signal_sigma:.3})"
        )));
    }
    let n_max = model.max_atoms();
    let us = 1e-6;
    let fit = least_squares_fit(
        |p| {
            let pred = model.predict_at(p[1], p[0] * us, data.delta_m, grid)?;
            let mut r = Vec::with_capacity(2 * grid.len);
            residuals(&pred, data, &mut r);
            Ok(r)
        },
        &[
            Param::new("entry_time_us", entry0 / us).with_scale(1.0),
            Param::new("n_atoms", n0.min(0.9 * n_max))
                .bounded(0.0, n_max)
                .with_scale(n0.max(1.0)),
        ],
        options,
    )
    .map_err(|e| match e {
        Error::RankDeficient(m) => Error::Unidentifiable(m),
        other => other,
    })?;
    Ok(to_seconds(fit, us))
}

fn to_seconds(mut fit: FitResult, us: f64) -> FitResult {
    fit.names[0] = "entry_time".into();
    fit.values[0] *= us;
    fit.uncertainties[0] *= us;
    for (i, row) in fit.covariance.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            if i == 0 {
                *c *= us;
            }
            if j == 0 {
                *c *= us;
            }
        }
    }
    fit
}
