//! Global fit of the phase change versus probe photon number.

use serde::{Deserialize, Serialize};

use super::lm::{least_squares_fit, FitOptions, FitResult, Param};
use crate::error::{Error, Result};

/// Phase change at the signal window versus intracavity photon number for one
/// atom number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDataset {
    pub label: String,
    pub n_c: Vec<f64>,
    pub delta_phi_deg: Vec<f64>,
    pub sigma_deg: Vec<f64>,
}

impl PowerDataset {
    fn validate(&self) -> Result<()> {
        let n = self.n_c.len();
        if n == 0 || self.delta_phi_deg.len() != n || self.sigma_deg.len() != n {
            return Err(Error::Schema(format!("dataset '{}' has inconsistent columns", self.label)));
        }
        if self.n_c.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Schema(format!("dataset '{}': n_c must be finite and >= 0", self.label)));
        }
        if self.sigma_deg.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Schema(format!("dataset '{}': sigma must be finite and > 0", self.label)));
        }
        Ok(())
    }
}

/// Phase change (degrees) of a cavity shifted by chi0 / sqrt(1 + n_c/n_crit).
pub fn power_model(n_c: f64, chi0: f64, n_crit: f64, kappa: f64) -> f64 {
    -(2.0 * chi0 / (kappa * (1.0 + n_c / n_crit).sqrt())).atan().to_degrees()
}

/// Photon number at which |delta phi| drops to half its lowest-power value,
/// by linear interpolation. `None` if never reached.
fn half_signal_photons(d: &PowerDataset) -> Option<f64> {
    let mut idx: Vec<usize> = (0..d.n_c.len()).collect();
    idx.sort_by(|&a, &b| d.n_c[a].total_cmp(&d.n_c[b]));
    let first = d.delta_phi_deg[idx[0]].abs();
    let half = 0.5 * first;
    idx.windows(2).find_map(|w| {
        let (a, b) = (d.delta_phi_deg[w[0]].abs(), d.delta_phi_deg[w[1]].abs());
        if a >= half && b < half {
            let f = (a - half) / (a - b);
            Some(d.n_c[w[0]] + f * (d.n_c[w[1]] - d.n_c[w[0]]))
        } else {
            None
        }
    })
}

/// Shared critical photon number and one zero-power shift per dataset.
///
/// Parameters are named `n_crit` and `chi0_<label>` (rad/s).
pub fn fit_power_dependence(datasets: &[PowerDataset], kappa: f64, options: &FitOptions) -> Result<FitResult> {
    if datasets.is_empty() {
        return Err(Error::invalid("datasets", "at least one dataset required"));
    }
    for d in datasets {
        d.validate()?;
    }
    let mut powers: Vec<f64> = datasets.iter().flat_map(|d| d.n_c.iter().copied()).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    if powers.len() < 2 {
        return Err(Error::Unidentifiable(
            "all data at a single probe power: n_crit cannot be separated from chi0".into(),
        ));
    }

    // small-angle model: half signal at n_c = 3 n_crit
    let halves: Vec<f64> = datasets.iter().filter_map(half_signal_photons).collect();
    let n_crit0 = if halves.is_empty() {
        powers[powers.len() - 1] / 3.0
    } else {
        (halves.iter().map(|v| v.ln()).sum::<f64>() / halves.len() as f64).exp() / 3.0
    }
    .max(powers[1] * 1e-3);

    let mut params = vec![Param::new("n_crit", n_crit0).bounded(1e-6 * n_crit0, f64::INFINITY)];
    for d in datasets {
        let i = (0..d.n_c.len())
            .min_by(|&a, &b| d.n_c[a].total_cmp(&d.n_c[b]))
            .expect("non-empty");
        let chi = -d.delta_phi_deg[i].to_radians().tan() * kappa / 2.0 * (1.0 + d.n_c[i] / n_crit0).sqrt();
        let scale = if chi != 0.0 { chi.abs() } else { 1e-3 * kappa };
        params.push(Param::new(format!("chi0_{}", d.label), chi).with_scale(scale));
    }
    least_squares_fit(
        |p| {
            let n_crit = p[0];
            let mut r = Vec::new();
            for (k, d) in datasets.iter().enumerate() {
                for i in 0..d.n_c.len() {
                    r.push((power_model(d.n_c[i], p[k + 1], n_crit, kappa) - d.delta_phi_deg[i]) / d.sigma_deg[i]);
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
    use crate::units::hz_to_rad;

    fn synthetic(n_crit: f64, chis: &[f64], kappa: f64, factor: f64) -> Vec<PowerDataset> {
        let n_c: Vec<f64> = (0..12).map(|i| 2e3 * 1.5f64.powi(i)).collect();
        chis.iter()
            .enumerate()
            .map(|(k, &chi)| PowerDataset {
                label: format!("set{k}"),
                delta_phi_deg: n_c.iter().map(|&n| factor * power_model(n, chi, n_crit, kappa)).collect(),
                sigma_deg: vec![0.1; n_c.len()],
                n_c: n_c.clone(),
            })
            .collect()
    }

    #[test]
    fn model_limits() {
        let k = hz_to_rad(236e3);
        let chi = hz_to_rad(10e3);
        assert!((power_model(0.0, chi, 4.4e4, k) + 4.844_000_375).abs() < 1e-6);
        let t = (2.0 * chi / k / 2.0).atan().to_degrees();
        assert!((power_model(3.0 * 4.4e4, chi, 4.4e4, k) + t).abs() < 1e-12);
    }

    #[test]
    fn noiseless_round_trip() {
        let k = hz_to_rad(236e3);
        let chis = [hz_to_rad(2e3), hz_to_rad(4e3), hz_to_rad(6e3)];
        let fit = fit_power_dependence(&synthetic(4.4e4, &chis, k, 1.0), k, &FitOptions::default()).unwrap();
        assert!((fit.value("n_crit").unwrap() / 4.4e4 - 1.0).abs() < 1e-6);
        for (i, c) in chis.iter().enumerate() {
            assert!((fit.values[i + 1] / c - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn doubling_phase_doubles_chi_in_small_angle_limit() {
        let k = hz_to_rad(236e3);
        let chis = [hz_to_rad(50.0), hz_to_rad(100.0)];
        let a = fit_power_dependence(&synthetic(4.4e4, &chis, k, 1.0), k, &FitOptions::default()).unwrap();
        let b = fit_power_dependence(&synthetic(4.4e4, &chis, k, 2.0), k, &FitOptions::default()).unwrap();
        assert!((b.values[0] / a.values[0] - 1.0).abs() < 1e-4);
        assert!((b.values[1] / a.values[1] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn single_power_is_unidentifiable() {
        let d = PowerDataset {
            label: "a".into(),
            n_c: vec![1e4; 5],
            delta_phi_deg: vec![-2.0; 5],
            sigma_deg: vec![0.1; 5],
        };
        assert!(matches!(
            fit_power_dependence(&[d], 1e6, &FitOptions::default()),
            Err(Error::Unidentifiable(_))
        ));
    }
}
