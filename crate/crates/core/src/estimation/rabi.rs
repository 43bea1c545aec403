//! Joint calibration of the MCP window coefficients from a Rabi oscillation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::lm::{least_squares_fit, FitOptions, FitResult, Param};
use crate::error::{Error, Result};

/// S1, S2 and S_r measured versus the pulse area Omega t (rad) of a
/// resonant s-p drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiData {
    pub pulse_area: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s_r: Vec<f64>,
    pub sigma_s1: Vec<f64>,
    pub sigma_s2: Vec<f64>,
    pub sigma_s_r: Vec<f64>,
}

/// Which data sets enter the joint fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RabiChannels {
    pub s1: bool,
    pub s2: bool,
    pub s_r: bool,
}

impl Default for RabiChannels {
    fn default() -> Self {
        RabiChannels {
            s1: true,
            s2: true,
            s_r: true,
        }
    }
}

/// Expected (S1, S2) for pulse area `theta`, with `decay_ratio` the p/s
/// survival ratio up to detection.
pub fn rabi_signals(theta: f64, amplitude: f64, alpha_p: f64, beta_s: f64, beta_p: f64, decay_ratio: f64) -> (f64, f64) {
    let p = (0.5 * theta).sin().powi(2);
    let w = alpha_p * p * decay_ratio;
    (
        amplitude * ((1.0 - p) + w),
        amplitude * (beta_s * (1.0 - p) + beta_p * w),
    )
}

impl RabiData {
    fn validate(&self) -> Result<()> {
        let n = self.pulse_area.len();
        let cols = [&self.s1, &self.s2, &self.s_r, &self.sigma_s1, &self.sigma_s2, &self.sigma_s_r];
        if n == 0 || cols.iter().any(|c| c.len() != n) {
            return Err(Error::Schema("Rabi data columns have different lengths".into()));
        }
        if [&self.sigma_s1, &self.sigma_s2, &self.sigma_s_r]
            .iter()
            .any(|c| c.iter().any(|v| !(*v > 0.0 && v.is_finite())))
        {
            return Err(Error::Schema("Rabi standard deviations must be finite and > 0".into()));
        }
        Ok(())
    }
}

fn nearest(theta: &[f64], target_mod: f64) -> usize {
    (0..theta.len())
        .min_by(|&a, &b| {
            let d = |t: f64| {
                let x = (t - target_mod).rem_euclid(2.0 * PI);
                x.min(2.0 * PI - x)
            };
            d(theta[a]).total_cmp(&d(theta[b]))
        })
        .expect("non-empty")
}

/// Fits alpha_p, beta_s, beta_p and (when S1 or S2 is used) the s-state
/// amplitude of S1.
pub fn fit_rabi_calibration(
    data: &RabiData,
    decay_ratio: f64,
    channels: RabiChannels,
    options: &FitOptions,
) -> Result<FitResult> {
    data.validate()?;
    if !(channels.s1 || channels.s2 || channels.s_r) {
        return Err(Error::invalid("channels", "no data set selected"));
    }
    let (lo, hi) = data
        .pulse_area
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    if hi - lo < 2.0 * PI {
        return Err(Error::Unidentifiable(format!(
            "pulse areas span {:.3} rad, less than one Rabi period",
            hi - lo
        )));
    }
    let i0 = nearest(&data.pulse_area, 0.0);
    let i1 = nearest(&data.pulse_area, PI);
    let amp0 = data.s1[i0];
    let beta_s0 = data.s_r[i0].clamp(0.05, 0.95);
    let beta_p0 = data.s_r[i1].clamp(0.01, beta_s0 * 0.99);
    let alpha0 = (data.s1[i1] / (amp0 * decay_ratio)).clamp(0.05, 1.9);
    let with_amp = channels.s1 || channels.s2;
    let mut params = vec![
        Param::new("alpha_p", alpha0).bounded(0.0, 2.0).with_scale(1.0),
        Param::new("beta_s", beta_s0).bounded(0.0, 1.0).with_scale(1.0),
        Param::new("beta_p", beta_p0).bounded(0.0, 1.0).with_scale(1.0),
    ];
    if with_amp {
        params.push(Param::new("amplitude", amp0).bounded(0.0, f64::INFINITY));
    }
    least_squares_fit(
        |p| {
            let a = if with_amp { p[3] } else { 1.0 };
            let mut r = Vec::new();
            for i in 0..data.pulse_area.len() {
                let (s1, s2) = rabi_signals(data.pulse_area[i], a, p[0], p[1], p[2], decay_ratio);
                if channels.s1 {
                    r.push((s1 - data.s1[i]) / data.sigma_s1[i]);
                }
                if channels.s2 {
                    r.push((s2 - data.s2[i]) / data.sigma_s2[i]);
                }
                if channels.s_r {
                    r.push((s2 / s1 - data.s_r[i]) / data.sigma_s_r[i]);
                }
            }
            Ok(r)
        },
        &params,
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: f64 = 1.431_457_7;

    fn synthetic(decay: f64) -> RabiData {
        let theta: Vec<f64> = (0..41).map(|i| i as f64 * 4.0 * PI / 40.0).collect();
        let sig: Vec<(f64, f64)> = theta.iter().map(|&t| rabi_signals(t, 10.35, 0.888, 0.439, 0.222, decay)).collect();
        RabiData {
            s1: sig.iter().map(|s| s.0).collect(),
            s2: sig.iter().map(|s| s.1).collect(),
            s_r: sig.iter().map(|s| s.1 / s.0).collect(),
            sigma_s1: vec![0.1; theta.len()],
            sigma_s2: vec![0.05; theta.len()],
            sigma_s_r: vec![0.003; theta.len()],
            pulse_area: theta,
        }
    }

    #[test]
    fn noiseless_round_trip() {
        let fit = fit_rabi_calibration(&synthetic(D), D, RabiChannels::default(), &FitOptions::default()).unwrap();
        for (name, v) in [("alpha_p", 0.888), ("beta_s", 0.439), ("beta_p", 0.222), ("amplitude", 10.35)] {
            assert!((fit.value(name).unwrap() / v - 1.0).abs() < 1e-6, "{name}");
        }
    }

    #[test]
    fn equal_lifetimes_leave_s1_flat_for_unit_alpha() {
        for i in 0..20 {
            let t = i as f64 * 0.3;
            let (s1, _) = rabi_signals(t, 1.0, 1.0, 0.439, 0.222, 1.0);
            assert!((s1 - 1.0).abs() < 1e-15);
            let (s1, _) = rabi_signals(t, 1.0, 0.888, 0.439, 0.222, 1.0);
            assert!(s1 <= 1.0);
        }
    }

    #[test]
    fn ratio_only_fit_couples_alpha_and_beta_p() {
        let channels = RabiChannels {
            s1: false,
            s2: false,
            s_r: true,
        };
        let fit = fit_rabi_calibration(&synthetic(D), D, channels, &FitOptions::default()).unwrap();
        assert_eq!(fit.values.len(), 3);
        assert!((fit.value("beta_s").unwrap() - 0.439).abs() < 1e-8);
        let full = fit_rabi_calibration(&synthetic(D), D, RabiChannels::default(), &FitOptions {
            covariance: crate::estimation::lm::CovarianceScaling::Absolute,
            ..FitOptions::default()
        })
        .unwrap();
        let only = fit_rabi_calibration(&synthetic(D), D, channels, &FitOptions {
            covariance: crate::estimation::lm::CovarianceScaling::Absolute,
            ..FitOptions::default()
        })
        .unwrap();
        let c = &only.covariance;
        let rho = c[0][2] / (c[0][0] * c[2][2]).sqrt();
        assert!(rho.abs() > 0.5, "{rho}");
        assert!(only.uncertainty("alpha_p").unwrap() > full.uncertainty("alpha_p").unwrap());
    }

    #[test]
    fn short_span_is_unidentifiable() {
        let mut d = synthetic(D);
        let keep = 8;
        for c in [
            &mut d.pulse_area,
            &mut d.s1,
            &mut d.s2,
            &mut d.s_r,
            &mut d.sigma_s1,
            &mut d.sigma_s2,
            &mut d.sigma_s_r,
        ] {
            c.truncate(keep);
        }
        assert!(matches!(
            fit_rabi_calibration(&d, D, RabiChannels::default(), &FitOptions::default()),
            Err(Error::Unidentifiable(_))
        ));
    }
}
