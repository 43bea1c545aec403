//! Systematic-error budget of the cavity atom-number estimate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cloud_averaged_coupling_sq, CavitySpec};
use crate::units::{dipole_from_atomic_units, PLANCK, VACUUM_PERMITTIVITY};

/// Relative error of the second-order dispersive shift g^2 N / Delta against
/// the exact collective shift (Delta/2)(sqrt(1 + 4 g^2 N / Delta^2) - 1).
pub fn fourth_order_error(g: f64, n_atoms: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(Error::Singular("zero detuning in fourth-order error".into()));
    }
    if !(n_atoms >= 0.0) {
        return Err(Error::invalid("n_atoms", "must be >= 0"));
    }
    let x = 4.0 * g * g * n_atoms / (delta * delta);
    if x == 0.0 {
        return Ok(0.0);
    }
    // exact / second order = 2 (sqrt(1+x) - 1) / x = 2 / (sqrt(1+x) + 1)
    Ok(0.5 * ((1.0 + x).sqrt() + 1.0) - 1.0)
}

/// Relative change of g^2 at the cavity center when the point-like cloud is
/// replaced by a Gaussian of sizes (sigma_z, sigma_x).
pub fn pointlike_correction(sigma_z: f64, sigma_x: f64, cavity: &CavitySpec) -> f64 {
    let z = 0.5 * cavity.length_z;
    cloud_averaged_coupling_sq(z, sigma_z, sigma_x, cavity) / cloud_averaged_coupling_sq(z, 0.0, 0.0, cavity) - 1.0
}

/// Pair interaction energy coeff / R^order (frequency units of `coeff`).
pub fn interaction_shift(spacing: f64, coeff: f64, order: i32) -> Result<f64> {
    if !(spacing > 0.0) {
        return Err(Error::invalid("spacing", "must be > 0"));
    }
    Ok(coeff / spacing.powi(order))
}

/// Resonant dipole-dipole coefficient d^2 / (4 pi eps0 h), Hz m^3, for a
/// dipole moment in units of e a0.
pub fn c3_from_dipole(d_ea0: f64) -> f64 {
    let d = dipole_from_atomic_units(d_ea0);
    d * d / (4.0 * PI * VACUUM_PERMITTIVITY * PLANCK)
}

/// Inputs of the trueness budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruenessInputs {
    pub g_max_hz: f64,
    pub n_atoms: f64,
    pub delta_plus_hz: f64,
    /// g^2 of the finite-element mode relative to the analytic mode.
    pub mode_correction: f64,
    pub length_z_m: f64,
    pub transverse_width_m: f64,
    pub mode_antinodes: u32,
    pub sigma_z_m: f64,
    pub sigma_x_m: f64,
    pub cloud_size_rel_uncertainty: f64,
    pub detuning_rel_uncertainty: f64,
    pub atom_spacing_m: f64,
    pub c6_hz_m6: f64,
    pub dipole_moment_ea0: f64,
}

impl TruenessInputs {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g_max_hz", self.g_max_hz),
            ("length_z_m", self.length_z_m),
            ("transverse_width_m", self.transverse_width_m),
            ("atom_spacing_m", self.atom_spacing_m),
            ("mode_correction", self.mode_correction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        let non_negative = [
            ("n_atoms", self.n_atoms),
            ("sigma_z_m", self.sigma_z_m),
            ("sigma_x_m", self.sigma_x_m),
            ("cloud_size_rel_uncertainty", self.cloud_size_rel_uncertainty),
            ("detuning_rel_uncertainty", self.detuning_rel_uncertainty),
            ("c6_hz_m6", self.c6_hz_m6),
            ("dipole_moment_ea0", self.dipole_moment_ea0),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and >= 0"));
            }
        }
        if !(self.delta_plus_hz != 0.0 && self.delta_plus_hz.is_finite()) {
            return Err(Error::invalid("delta_plus_hz", "must be finite and non-zero"));
        }
        if self.mode_antinodes == 0 {
            return Err(Error::invalid("mode_antinodes", "must be >= 1"));
        }
        Ok(())
    }

    fn cavity(&self) -> CavitySpec {
        CavitySpec {
            omega_c: 1.0,
            kappa: 1.0,
            kappa_out: 0.5,
            kappa_in: 0.0,
            length_z: self.length_z_m,
            mode_antinodes: self.mode_antinodes,
            g_max: 2.0 * PI * self.g_max_hz,
            mode_correction: 1.0,
            transverse_width: Some(self.transverse_width_m),
        }
    }
}

/// One line of the budget: relative error of N and its standard uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruenessItem {
    pub name: String,
    pub value: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruenessReport {
    pub items: Vec<TruenessItem>,
    pub total: f64,
    pub total_uncertainty: f64,
    pub fourth_order_error: f64,
    pub pointlike_correction: f64,
    pub van_der_waals_shift_hz: f64,
    pub dipole_shift_hz: f64,
    pub c3_hz_m3: f64,
}

impl TruenessReport {
    /// Fixed-width text rendering in percent.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<24} {:>10} {:>10}\n", "contribution", "value %", "unc. %");
        for it in &self.items {
            out += &format!("{:<24} {:>10.3} {:>10.3}\n", it.name, 100.0 * it.value, 100.0 * it.uncertainty);
        }
        out += &format!("{:<24} {:>10.3} {:>10.3}\n", "total", 100.0 * self.total, 100.0 * self.total_uncertainty);
        out
    }
}

/// Assembles the budget: mode-shape correction, detuning uncertainty,
/// neglected fourth-order term (taken as -e/2 +- e/2), the point-like cloud
/// approximation and atom-atom interactions. Values add linearly,
/// uncertainties in quadrature.
pub fn trueness_ledger(inputs: &TruenessInputs) -> Result<TruenessReport> {
    inputs.validate()?;
    let cavity = inputs.cavity();
    let g = 2.0 * PI * inputs.g_max_hz;
    let delta = 2.0 * PI * inputs.delta_plus_hz;
    let e4 = fourth_order_error(g, inputs.n_atoms, delta)?;
    let point = pointlike_correction(inputs.sigma_z_m, inputs.sigma_x_m, &cavity);
    let u = inputs.cloud_size_rel_uncertainty;
    let point_hi = pointlike_correction(inputs.sigma_z_m * (1.0 + u), inputs.sigma_x_m * (1.0 + u), &cavity);
    let point_lo = pointlike_correction(inputs.sigma_z_m * (1.0 - u), inputs.sigma_x_m * (1.0 - u), &cavity);
    let vdw = interaction_shift(inputs.atom_spacing_m, inputs.c6_hz_m6, 6)?;
    let c3 = c3_from_dipole(inputs.dipole_moment_ea0);
    let dd = interaction_shift(inputs.atom_spacing_m, c3, 3)?;
    let items = vec![
        TruenessItem {
            name: "mode_shape".into(),
            value: 1.0 - inputs.mode_correction,
            uncertainty: 0.0,
        },
        TruenessItem {
            name: "detuning".into(),
            value: 0.0,
            uncertainty: inputs.detuning_rel_uncertainty,
        },
        TruenessItem {
            name: "fourth_order".into(),
            value: -0.5 * e4,
            uncertainty: 0.5 * e4,
        },
        TruenessItem {
            name: "pointlike_cloud".into(),
            value: point,
            uncertainty: 0.5 * (point_hi - point_lo).abs(),
        },
        TruenessItem {
            name: "interactions".into(),
            value: 0.0,
            uncertainty: (vdw.abs() + dd.abs()) / inputs.delta_plus_hz.abs(),
        },
    ];
    let total = items.iter().map(|i| i.value).sum();
    let total_uncertainty = items.iter().map(|i| i.uncertainty.powi(2)).sum::<f64>().sqrt();
    Ok(TruenessReport {
        items,
        total,
        total_uncertainty,
        fourth_order_error: e4,
        pointlike_correction: point,
        van_der_waals_shift_hz: vdw,
        dipole_shift_hz: dd,
        c3_hz_m3: c3,
    })
}
