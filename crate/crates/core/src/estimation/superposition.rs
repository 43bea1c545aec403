//! Phase change predicted for ensembles prepared in s-p superpositions.

use serde::{Deserialize, Serialize};

use super::spectroscopy::{decayed_p_fraction, prep_fraction};
use super::trace::TraceModel;
use crate::error::{Error, Result};
use crate::model::Populations;
use crate::transmission::{phase_change, steady_transmission, TimeGrid};

/// Distribution of the prepared p population over the magnetic sublevels
/// inside the cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepolarizationMap {
    pub p_plus: f64,
    pub p_minus: f64,
}

impl DepolarizationMap {
    /// All prepared p atoms remain in m = +1.
    pub const PURE: DepolarizationMap = DepolarizationMap {
        p_plus: 1.0,
        p_minus: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.p_plus >= 0.0 && self.p_minus >= 0.0 && self.p_plus + self.p_minus <= 1.0 + 1e-12) {
            return Err(Error::invalid("p_plus/p_minus", "fractions must be >= 0 and sum to <= 1"));
        }
        Ok(())
    }

    pub fn populations(&self, p_fraction: f64) -> Populations {
        let p_plus = p_fraction * self.p_plus;
        let p_minus = p_fraction * self.p_minus;
        Populations {
            s: 1.0 - p_fraction,
            p_plus,
            p_minus,
            p_zero: (p_fraction - p_plus - p_minus).max(0.0),
        }
    }
}

/// Phase change (degrees) at `t_max` for an ensemble of `n_atoms` (at the
/// cavity center) prepared with Rabi frequency `prep_ratio` times the
/// pi-pulse value, `prep_to_center` seconds before reaching the cavity
/// center.
pub fn predict_superposition_phase(
    prep_ratio: f64,
    map: &DepolarizationMap,
    model: &TraceModel,
    n_atoms: f64,
    prep_to_center: f64,
    grid: TimeGrid,
    t_max: f64,
) -> Result<f64> {
    map.validate()?;
    let p = decayed_p_fraction(
        prep_fraction(prep_ratio),
        prep_to_center,
        model.ensemble.tau_s,
        model.ensemble.tau_p,
    );
    let mut m = model.clone();
    m.ensemble.populations = map.populations(p);
    let trace = m.predict(n_atoms, 0.0, grid)?;
    let dphi = phase_change(&trace, steady_transmission(0.0, 0.0, model.cavity.kappa).arg());
    let x = grid.position(t_max);
    if x < 0.0 || x > (grid.len - 1) as f64 {
        return Err(Error::Config("t_max outside the simulated grid".into()));
    }
    let i = (x.floor() as usize).min(grid.len - 2);
    let w = x - i as f64;
    Ok(dphi[i] * (1.0 - w) + dphi[i + 1] * w)
}
