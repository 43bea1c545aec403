//! Cavity transmission under a time-dependent dispersive shift.
//!
//! The transmitted field obeys
//!
//! ```text
//! dA/dt = kappa/2 + (i Delta_m - kappa/2 - i chi(t)) A
//! ```
//!
//! whose causal solution is the exponentially weighted integral of the past
//! shift history. Each grid step is integrated in closed form with the shift
//! replaced by its step average plus a correction for its slope, giving an
//! O(T) one-pole update.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{
    cloud_averaged_coupling_sq, mode_amplitude_unchecked, shift_from_counts, CavitySpec,
    EnsembleState, TransitionSet,
};
use crate::units::wrap_phase;

/// Uniform time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(start: f64, dt: f64, len: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", "time step must be finite and > 0"));
        }
        if len < 2 {
            return Err(Error::invalid("len", "time grid needs at least two samples"));
        }
        if !start.is_finite() {
            return Err(Error::invalid("start", "must be finite"));
        }
        Ok(TimeGrid { start, dt, len })
    }

    /// Grid covering `[start, end]` with step `dt` (end rounded up).
    pub fn spanning(start: f64, end: f64, dt: f64) -> Result<Self> {
        let len = ((end - start) / dt).ceil() as usize + 1;
        TimeGrid::new(start, dt, len)
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.start + self.dt * i as f64
    }

    pub fn end(&self) -> f64 {
        self.time(self.len - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.time(i)).collect()
    }

    /// Fractional index of time `t` (may lie outside the grid).
    #[inline]
    pub fn position(&self, t: f64) -> f64 {
        (t - self.start) / self.dt
    }
}

/// Dispersive shift sampled on a uniform grid, rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTrace {
    pub grid: TimeGrid,
    pub chi: Vec<f64>,
}

impl ShiftTrace {
    pub fn new(grid: TimeGrid, chi: Vec<f64>) -> Result<Self> {
        if chi.len() != grid.len {
            return Err(Error::invalid("chi", "length must match the time grid"));
        }
        Ok(ShiftTrace { grid, chi })
    }

    pub fn constant(grid: TimeGrid, chi: f64) -> Self {
        ShiftTrace {
            grid,
            chi: vec![chi; grid.len],
        }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.chi.iter_mut().for_each(|c| *c *= factor);
        self
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }
}

/// Complex transmission on a uniform grid, normalised to 1 at the bare
/// cavity resonance.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTrace {
    pub grid: TimeGrid,
    pub values: Vec<Complex64>,
}

impl ComplexTrace {
    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn amplitude(&self) -> Vec<f64> {
        self.values.iter().map(|a| a.norm()).collect()
    }

    /// Phase in (-pi, pi].
    pub fn phase(&self) -> Vec<f64> {
        self.values.iter().map(|a| a.arg()).collect()
    }

    /// Linear interpolation of the complex value at time `t`; clamps to the
    /// end samples outside the grid.
    pub fn sample(&self, t: f64) -> Complex64 {
        let x = self.grid.position(t);
        if x <= 0.0 {
            return self.values[0];
        }
        let last = self.values.len() - 1;
        if x >= last as f64 {
            return self.values[last];
        }
        let i = x.floor() as usize;
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Complex mean over the samples falling inside `[start, end)`.
    pub fn window_mean(&self, window: Window) -> Result<Complex64> {
        let idx = self.window_indices(window)?;
        let n = idx.len() as f64;
        Ok(idx.map(|i| self.values[i]).sum::<Complex64>() / n)
    }

    pub(crate) fn window_indices(&self, window: Window) -> Result<std::ops::Range<usize>> {
        let lo = self.grid.position(window.start).ceil().max(0.0) as usize;
        let hi = (self.grid.position(window.end).ceil().max(0.0) as usize).min(self.grid.len);
        if window.start < self.grid.start - 1e-12 || window.end > self.grid.end() + self.grid.dt {
            return Err(Error::Config(format!(
                "window [{:.4e}, {:.4e}] s extends beyond the trace [{:.4e}, {:.4e}] s",
                window.start,
                window.end,
                self.grid.start,
                self.grid.end()
            )));
        }
        if hi <= lo {
            return Err(Error::Config("window contains no samples".into()));
        }
        Ok(lo..hi)
    }
}

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn centered(center: f64, width: f64) -> Self {
        Window {
            start: center - 0.5 * width,
            end: center + 0.5 * width,
        }
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlaps(&self, start: f64, end: f64) -> bool {
        self.start < end && start < self.end
    }
}

/// Closed-form response to a constant shift: 1 / (1 - 2i(Delta_m - chi)/kappa).
pub fn steady_transmission(chi: f64, delta_m: f64, kappa: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) / Complex64::new(1.0, -2.0 * (delta_m - chi) / kappa)
}

/// How the field is initialised before the first reported sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warmup {
    /// Shift held at its first value for an unbounded past: the field starts
    /// at the corresponding steady state.
    SteadyState,
    /// Shift held at its first value for the given duration (seconds),
    /// starting from an empty cavity. Must be at least 10 tau_c.
    Integrate(f64),
}

/// Minimum warm-up expressed in cavity field decay times.
pub const MIN_WARMUP_TAU_C: f64 = 10.0;
/// Maximum grid step expressed as a fraction of tau_c.
pub const MAX_STEP_TAU_C: f64 = 1.0 / 20.0;

/// Time-domain cavity transmission for a shift history.
pub fn transmission_response(
    shift: &ShiftTrace,
    delta_m: f64,
    kappa: f64,
    warmup: Warmup,
) -> Result<ComplexTrace> {
    if !(kappa > 0.0) {
        return Err(Error::invalid("kappa", "must be > 0"));
    }
    let tau_c = 2.0 / kappa;
    let dt = shift.grid.dt;
    if dt > MAX_STEP_TAU_C * tau_c * (1.0 + 1e-9) {
        return Err(Error::Accuracy(format!(
            "time step {dt:.3e} s exceeds tau_c/20 = {:.3e} s",
            MAX_STEP_TAU_C * tau_c
        )));
    }
    let half_k = 0.5 * kappa;
    let chi0 = shift.chi[0];
    let mut a = match warmup {
        Warmup::SteadyState => steady_transmission(chi0, delta_m, kappa),
        Warmup::Integrate(duration) => {
            if duration < MIN_WARMUP_TAU_C * tau_c * (1.0 - 1e-9) {
                return Err(Error::Precondition(format!(
                    "warm-up {duration:.3e} s shorter than 10 tau_c = {:.3e} s",
                    MIN_WARMUP_TAU_C * tau_c
                )));
            }
            let lambda = Complex64::new(-half_k, delta_m - chi0);
            steady_transmission(chi0, delta_m, kappa) * (1.0 - (lambda * duration).exp())
        }
    };
    let chi = &shift.chi;
    let n = chi.len();
    let mut values = Vec::with_capacity(n);
    values.push(a);
    for i in 0..n - 1 {
        // step mean of chi from a cubic through the current and three
        // earlier samples (Adams-Moulton weights), trapezoid at the start
        let mean = if i >= 2 {
            (9.0 * chi[i + 1] + 19.0 * chi[i] - 5.0 * chi[i - 1] + chi[i - 2]) / 24.0
        } else {
            0.5 * (chi[i] + chi[i + 1])
        };
        let lambda = Complex64::new(-half_k, delta_m - mean);
        let e = (lambda * dt).exp();
        // first-order correction of the drive term for a linearly varying chi
        let slope_term = Complex64::new(0.0, -half_k * (chi[i + 1] - chi[i]) * dt * dt / 12.0);
        a = a * e + (e - 1.0) * half_k / lambda + slope_term;
        values.push(a);
    }
    Ok(ComplexTrace {
        grid: shift.grid,
        values,
    })
}

/// Quasi-static (instantaneous) response: the closed form evaluated at each
/// sample of the shift trace.
pub fn instantaneous_response(shift: &ShiftTrace, delta_m: f64, kappa: f64) -> ComplexTrace {
    ComplexTrace {
        grid: shift.grid,
        values: shift
            .chi
            .iter()
            .map(|&c| steady_transmission(c, delta_m, kappa))
            .collect(),
    }
}

/// Options for building a fly-through shift trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlyThroughOptions {
    /// Replace g^2 by its average over the Gaussian cloud (sigma_z, sigma_x).
    pub extended_cloud: bool,
}

/// Dispersive shift seen while the cloud crosses the cavity.
///
/// Position is z = v (t - t_entry); the coupling vanishes outside the
/// cavity. Each level decays with its own lifetime, normalised so that the
/// ensemble's atom number applies at the cavity-center time.
pub fn fly_through_shift_trace(
    ensemble: &EnsembleState,
    cavity: &CavitySpec,
    transitions: &TransitionSet,
    grid: TimeGrid,
    options: FlyThroughOptions,
) -> Result<ShiftTrace> {
    ensemble.validate()?;
    cavity.validate()?;
    let transit = cavity.length_z / ensemble.velocity;
    let t_cen = ensemble.center_time(cavity);
    let tau_min = ensemble.tau_s.min(ensemble.tau_p);
    let n_entry = ensemble.n_atoms * (0.5 * transit / tau_min).exp();
    transitions.check_dispersive(cavity.g_max, n_entry)?;

    let pops = ensemble.populations;
    let n = ensemble.n_atoms;
    let chi = (0..grid.len)
        .map(|i| {
            let t = grid.time(i);
            let z = ensemble.velocity * (t - ensemble.entry_time);
            let g_sq = if options.extended_cloud && (ensemble.sigma_z > 0.0 || ensemble.sigma_x > 0.0) {
                cloud_averaged_coupling_sq(z, ensemble.sigma_z, ensemble.sigma_x, cavity)
            } else if (0.0..=cavity.length_z).contains(&z) {
                let m = mode_amplitude_unchecked(z, cavity);
                cavity.g_max * cavity.g_max * cavity.mode_correction * m * m
            } else {
                0.0
            };
            if g_sq == 0.0 || n == 0.0 {
                return 0.0;
            }
            let ds = (-(t - t_cen) / ensemble.tau_s).exp();
            let dp = (-(t - t_cen) / ensemble.tau_p).exp();
            shift_from_counts(
                g_sq,
                n * pops.s * ds,
                n * pops.p_plus * dp,
                n * pops.p_minus * dp,
                transitions.delta_plus.at(z),
                transitions.delta_minus.at(z),
            )
        })
        .collect();
    ShiftTrace::new(grid, chi)
}

/// Phase of the complex mean over a reference window placed after the cloud
/// has left the cavity.
pub fn reference_phase(trace: &ComplexTrace, window: Window, transit: (f64, f64)) -> Result<f64> {
    if window.overlaps(transit.0, transit.1) {
        return Err(Error::Config(format!(
            "reference window [{:.4e}, {:.4e}] s overlaps the transit [{:.4e}, {:.4e}] s",
            window.start, window.end, transit.0, transit.1
        )));
    }
    Ok(trace.window_mean(window)?.arg())
}

/// Unwrapped phase change relative to `reference_phase`, in degrees.
pub fn phase_change(trace: &ComplexTrace, reference_phase: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(trace.values.len());
    let mut prev: Option<f64> = None;
    for a in &trace.values {
        let raw = wrap_phase(a.arg() - reference_phase);
        // nearest-branch continuation from the previous sample
        let v = match prev {
            Some(p) => p + wrap_phase(raw - p),
            None => raw,
        };
        prev = Some(v);
        out.push(v.to_degrees());
    }
    out
}

/// Amplitude change relative to a reference amplitude.
pub fn amplitude_change(trace: &ComplexTrace, reference_amplitude: f64) -> Vec<f64> {
    trace.values.iter().map(|a| a.norm() - reference_amplitude).collect()
}

/// Location of the largest |y| within `window`, refined by a parabola
/// through the neighbouring samples. Returns (time, value).
pub fn extremum(grid: &TimeGrid, y: &[f64], window: Window) -> Option<(f64, f64)> {
    let lo = grid.position(window.start).ceil().max(1.0) as usize;
    let hi = (grid.position(window.end).floor() as usize).min(y.len().saturating_sub(2));
    if hi < lo {
        return None;
    }
    let i = (lo..=hi).max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs()))?;
    let (ym, y0, yp) = (y[i - 1], y[i], y[i + 1]);
    let denom = ym - 2.0 * y0 + yp;
    let shift = if denom != 0.0 { 0.5 * (ym - yp) / denom } else { 0.0 };
    let shift = shift.clamp(-1.0, 1.0);
    let value = y0 - 0.25 * (ym - yp) * shift;
    Some((grid.time(i) + shift * grid.dt, value))
}

/// Phase (rad) of the bare cavity for a probe detuning.
pub fn bare_phase(delta_m: f64, kappa: f64) -> f64 {
    steady_transmission(0.0, delta_m, kappa).arg()
}

/// Small-angle phase sensitivity on resonance: d(delta phi)/d chi = -2/kappa,
/// in degrees per rad/s.
pub fn resonant_phase_slope_deg(kappa: f64) -> f64 {
    -2.0 / kappa * 180.0 / PI
}
