//! Phase change and residual excitation versus probe photon number.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde_json::json;

use super::{measure_p_fraction, Dataset, Experiment, Scenario, SignalSetup, Table};
use crate::detection::{phase_change_precision, snr};
use crate::error::{Error, Result};
use crate::estimation::{curve_fit, fit_power_dependence, FitOptions, Param, PowerDataset};
use crate::model::excited_fraction;
use crate::rng::{stream, Purpose};

/// Sweeps n_c for several atom numbers, fits the shared critical photon
/// number, and measures the probe-induced p excitation with the MCP.
pub fn run_power_sweep(s: &Scenario) -> Result<Dataset> {
    let Experiment::PowerSweep(opts) = &s.experiment else {
        return Err(Error::Config("not a power-sweep scenario".into()));
    };
    let base = SignalSetup::new(s, false)?;
    let n_c_values = s.sweep_values();
    let kappa = s.cavity.kappa;
    let floor = s.noise.digitizer_phase_floor;

    let jobs: Vec<(usize, usize)> = (0..opts.atom_numbers.len())
        .flat_map(|a| (0..n_c_values.len()).map(move |c| (a, c)))
        .collect();
    let points: Vec<(f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(a, c)| -> Result<(f64, f64, f64)> {
            let n = opts.atom_numbers[a];
            let n_c = n_c_values[c];
            let setup = base.with_photons(n_c);
            let model = setup.signal_phase(n)?;
            let r = snr(n_c, s.cavity.kappa_out, s.probe.tau_i, s.noise.n_noise)?;
            let chi = setup.signal_shift(n)?;
            let per_shot = (phase_change_precision(r, chi, kappa, s.probe.alpha)?.powi(2) + floor * floor).sqrt();
            let sigma = per_shot.to_degrees() / (s.shots as f64).sqrt();
            let index = (a * n_c_values.len() + c) as u64;
            let mut rng = stream(s.master_seed, Purpose::Phase, index);
            let measured = model + Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng);
            Ok((model, measured, sigma))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut phase_table = Table::new(
        "power_sweep",
        &["dataset", "n_atoms", "n_c", "delta_phi_deg", "sigma_delta_phi_deg", "model_delta_phi_deg"],
    );
    let mut datasets = Vec::new();
    for (a, &n) in opts.atom_numbers.iter().enumerate() {
        let label = format!("n{a}");
        let mut d = PowerDataset {
            label: label.clone(),
            n_c: Vec::new(),
            delta_phi_deg: Vec::new(),
            sigma_deg: Vec::new(),
        };
        for (c, &n_c) in n_c_values.iter().enumerate() {
            let (model, measured, sigma) = points[a * n_c_values.len() + c];
            phase_table.push(vec![
                label.as_str().into(),
                n.into(),
                n_c.into(),
                measured.into(),
                sigma.into(),
                model.into(),
            ]);
            d.n_c.push(n_c);
            d.delta_phi_deg.push(measured);
            d.sigma_deg.push(sigma);
        }
        datasets.push(d);
    }
    let fit = fit_power_dependence(&datasets, kappa, &FitOptions::default())?;

    // residual excitation A * P_e(n_c), measured with the MCP
    let mut exc_table = Table::new(
        "residual_excitation",
        &["n_c", "p_e", "true_excitation", "excitation", "sigma_excitation"],
    );
    let mut pe = Vec::new();
    let mut meas = Vec::new();
    let mut sig = Vec::new();
    for (c, &n_c) in n_c_values.iter().enumerate() {
        let p_e = excited_fraction(n_c, base.n_crit)?;
        let truth = opts.excitation_scale * p_e;
        let mut rng = stream(s.master_seed, Purpose::Mcp, c as u64);
        let e = measure_p_fraction(opts.excitation_atoms, truth, &s.mcp, s.shots, &mut rng);
        exc_table.push(vec![n_c.into(), p_e.into(), truth.into(), e.p_p.into(), e.p_p_sigma.into()]);
        pe.push(p_e);
        meas.push(e.p_p);
        sig.push(e.p_p_sigma.max(1e-6));
    }
    let exc_fit = curve_fit(
        &pe,
        &meas,
        Some(&sig),
        |x, q| q[0] * x,
        &[Param::new("excitation_scale", opts.excitation_scale.max(1e-3)).with_scale(0.01)],
        &FitOptions::default(),
    )?;
    let a_fit = exc_fit.value("excitation_scale").unwrap_or(f64::NAN);
    let at_crit = a_fit * excited_fraction(base.n_crit, base.n_crit)?;
    let max_in_range = n_c_values
        .iter()
        .filter(|&&v| v <= base.n_crit)
        .map(|&v| excited_fraction(v, base.n_crit).map(|p| a_fit * p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(at_crit, f64::max);

    let chi0: Vec<serde_json::Value> = opts
        .atom_numbers
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            json!({
                "n_atoms": n,
                "chi0_rad_s": fit.value(&format!("chi0_n{a}")),
                "sigma_chi0_rad_s": fit.uncertainty(&format!("chi0_n{a}")),
            })
        })
        .collect();
    let summary = json!({
        "n_crit_true": base.n_crit,
        "n_crit_fit": fit.value("n_crit"),
        "sigma_n_crit_fit": fit.uncertainty("n_crit"),
        "reduced_chi_square": fit.reduced_chi_square(),
        "g_eff_rad_s": base.g_eff,
        "chi0": chi0,
        "excitation_scale_true": opts.excitation_scale,
        "excitation_scale_fit": a_fit,
        "sigma_excitation_scale_fit": exc_fit.uncertainty("excitation_scale"),
        "excitation_at_n_crit": at_crit,
        "max_excitation_up_to_n_crit": max_in_range,
    });
    Ok(Dataset {
        kind: "power_sweep".into(),
        tables: vec![phase_table, exc_table],
        summary,
    })
}
