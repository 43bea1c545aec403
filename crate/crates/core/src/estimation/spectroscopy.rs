//! Intracavity microwave spectroscopy of s-p superpositions and the joint
//! fit of p sublevel fractions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::lm::{least_squares_fit, FitOptions, FitResult, Param};
use crate::error::{Error, Result};

/// Probability of a two-level transfer driven for `dt` with Rabi frequency
/// `omega` at detuning `delta` (both rad/s).
pub fn spectroscopy_transfer(omega: f64, delta: f64, dt: f64) -> f64 {
    let w2 = omega * omega + delta * delta;
    if w2 == 0.0 {
        return 0.0;
    }
    omega * omega / w2 * (0.5 * dt * w2.sqrt()).sin().powi(2)
}

/// Fixed timing of the preparation and spectroscopy pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopySetup {
    /// Spectroscopy pulse duration (s).
    pub dt_i: f64,
    /// Interval between preparation pulse and spectroscopy pulse (s).
    pub decay_interval: f64,
    pub tau_s: f64,
    pub tau_p: f64,
}

impl SpectroscopySetup {
    /// p fraction at the spectroscopy pulse for a preparation pulse of
    /// Rabi frequency `prep_ratio` times the pi-pulse value.
    pub fn prepared_fraction(&self, prep_ratio: f64) -> f64 {
        decayed_p_fraction(prep_fraction(prep_ratio), self.decay_interval, self.tau_s, self.tau_p)
    }
}

/// p fraction after a resonant pulse of Rabi frequency `ratio` times the
/// pi-pulse value: sin^2(pi ratio / 2).
pub fn prep_fraction(ratio: f64) -> f64 {
    (0.5 * PI * ratio).sin().powi(2)
}

/// p fraction among surviving atoms after `interval` of radiative decay.
pub fn decayed_p_fraction(p: f64, interval: f64, tau_s: f64, tau_p: f64) -> f64 {
    let wp = p * (-interval / tau_p).exp();
    let ws = (1.0 - p) * (-interval / tau_s).exp();
    if wp + ws == 0.0 {
        return 0.0;
    }
    wp / (wp + ws)
}

/// One spectrum: measured p fraction versus spectroscopy frequency (rad/s,
/// any fixed origin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub prep_ratio: f64,
    pub frequency: Vec<f64>,
    pub p_p: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyParams {
    pub omega_i_plus: f64,
    pub omega_i_minus: f64,
    pub line_plus: f64,
    pub line_minus: f64,
    pub p_plus: f64,
    pub p_minus: f64,
}

impl SpectroscopyParams {
    fn from_slice(p: &[f64]) -> Self {
        SpectroscopyParams {
            omega_i_plus: p[0],
            omega_i_minus: p[1],
            line_plus: p[2],
            line_minus: p[3],
            p_plus: p[4],
            p_minus: p[5],
        }
    }
}

pub const SPECTROSCOPY_PARAMS: [&str; 6] = [
    "omega_i_plus",
    "omega_i_minus",
    "line_plus",
    "line_minus",
    "p_plus",
    "p_minus",
];

/// Measured p fraction after the spectroscopy pulse at `frequency` for an
/// ensemble with p fraction `p_prep` (m = +1 and m = -1 shares `p_plus`,
/// `p_minus` of it).
pub fn spectrum_model(frequency: f64, p_prep: f64, params: &SpectroscopyParams, dt_i: f64) -> f64 {
    let tp = spectroscopy_transfer(params.omega_i_plus, frequency - params.line_plus, dt_i);
    let tm = spectroscopy_transfer(params.omega_i_minus, frequency - params.line_minus, dt_i);
    p_prep * (1.0 - params.p_plus * tp - params.p_minus * tm) + (1.0 - p_prep) * (tp + tm)
}

/// Two largest separated maxima of the baseline spectrum with parabolic
/// refinement, ordered (higher, lower) in frequency.
fn detect_lines(s: &Spectrum, exclusion: f64) -> Option<[(f64, f64); 2]> {
    let mut idx: Vec<usize> = (0..s.frequency.len()).collect();
    idx.sort_by(|&a, &b| s.frequency[a].total_cmp(&s.frequency[b]));
    let f: Vec<f64> = idx.iter().map(|&i| s.frequency[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| s.p_p[i]).collect();
    let refine = |i: usize| -> (f64, f64) {
        if i == 0 || i + 1 >= f.len() {
            return (f[i], y[i]);
        }
        let (ym, y0, yp) = (y[i - 1], y[i], y[i + 1]);
        let den = ym - 2.0 * y0 + yp;
        if den >= 0.0 {
            return (f[i], y0);
        }
        let x = (0.5 * (ym - yp) / den).clamp(-1.0, 1.0);
        let h = if x >= 0.0 { f[i + 1] - f[i] } else { f[i] - f[i - 1] };
        (f[i] + x * h, y0 - 0.25 * (ym - yp) * x)
    };
    let first = (0..f.len()).max_by(|&a, &b| y[a].total_cmp(&y[b]))?;
    let second = (0..f.len())
        .filter(|&i| (f[i] - f[first]).abs() > exclusion)
        .max_by(|&a, &b| y[a].total_cmp(&y[b]))?;
    let (a, b) = (refine(first), refine(second));
    Some(if a.0 > b.0 { [a, b] } else { [b, a] })
}

/// Joint fit of all spectra. Requires a spectrum without preparation
/// (`prep_ratio == 0`), which fixes the lines and intracavity Rabi
/// frequencies. Up to eight starting points are tried; the lowest-cost
/// converged fit is returned.
pub fn fit_spectroscopy(spectra: &[Spectrum], setup: &SpectroscopySetup, options: &FitOptions) -> Result<FitResult> {
    for s in spectra {
        let n = s.frequency.len();
        if n == 0 || s.p_p.len() != n || s.sigma.len() != n {
            return Err(Error::Schema("spectrum columns have different lengths".into()));
        }
        if s.sigma.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Schema("spectrum standard deviations must be finite and > 0".into()));
        }
    }
    let baseline = spectra
        .iter()
        .find(|s| s.prep_ratio == 0.0)
        .ok_or_else(|| Error::Unidentifiable("no spectrum without preparation pulse".into()))?;
    if spectra.iter().all(|s| s.prep_ratio == 0.0) {
        return Err(Error::Unidentifiable("no prepared spectrum: p sublevel fractions undetermined".into()));
    }
    let dt = setup.dt_i;
    let [(f_plus, h_plus), (f_minus, h_minus)] = detect_lines(baseline, 4.0 * PI / dt)
        .ok_or_else(|| Error::Unidentifiable("fewer than two lines in the baseline spectrum".into()))?;
    let branches = |h: f64| {
        let a = h.clamp(1e-6, 1.0).sqrt().asin();
        [2.0 * a / dt, 2.0 * (PI - a) / dt]
    };
    let p_inits = [(0.5, 0.25), (0.8, 0.1)];
    let prepared: Vec<f64> = spectra.iter().map(|s| setup.prepared_fraction(s.prep_ratio)).collect();
    let residual = |p: &[f64]| -> Result<Vec<f64>> {
        let q = SpectroscopyParams::from_slice(p);
        let mut r = Vec::new();
        for (s, &pp) in spectra.iter().zip(&prepared) {
            for i in 0..s.frequency.len() {
                r.push((spectrum_model(s.frequency[i], pp, &q, dt) - s.p_p[i]) / s.sigma[i]);
            }
        }
        Ok(r)
    };

    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for op in branches(h_plus) {
        for om in branches(h_minus) {
            for (pp, pm) in p_inits {
                let omega_scale = PI / dt;
                let params = [
                    Param::new("omega_i_plus", op).bounded(0.0, 8.0 * omega_scale).with_scale(omega_scale),
                    Param::new("omega_i_minus", om).bounded(0.0, 8.0 * omega_scale).with_scale(omega_scale),
                    Param::new("line_plus", f_plus).with_scale(omega_scale),
                    Param::new("line_minus", f_minus).with_scale(omega_scale),
                    Param::new("p_plus", pp).bounded(0.0, 1.0).with_scale(1.0),
                    Param::new("p_minus", pm).bounded(0.0, 1.0).with_scale(1.0),
                ];
                match least_squares_fit(residual, &params, options) {
                    Ok(fit) => {
                        let better = best.as_ref().is_none_or(|b| {
                            (fit.converged && !b.converged) || (fit.converged == b.converged && fit.cost < b.cost)
                        });
                        if better {
                            best = Some(fit);
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Unidentifiable("no start converged".into())))
}
