//! Superposition preparation: phase change and p fraction versus the
//! preparation Rabi frequency, plus the MCP Rabi calibration and the
//! intracavity spectroscopy data sets.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde_json::json;

use super::{measure_p_fraction, Dataset, Experiment, Scenario, SignalSetup, Table};
use crate::detection::{phase_change_precision, snr};
use crate::error::{Error, Result};
use crate::estimation::{
    fit_rabi_calibration, fit_spectroscopy, predict_superposition_phase, prep_fraction, spectrum_model,
    DepolarizationMap, FitOptions, RabiChannels, RabiData, SpectroscopyParams, SpectroscopySetup, Spectrum,
};
use crate::rng::{stream, Purpose};
use crate::units::rad_to_hz;

/// Minimum standard deviation assigned to a measured p fraction.
const MIN_P_SIGMA: f64 = 1e-3;

pub fn run_rabi(s: &Scenario) -> Result<Dataset> {
    let Experiment::Rabi(opts) = &s.experiment else {
        return Err(Error::Config("not a Rabi scenario".into()));
    };
    let setup = SignalSetup::new(s, false)?;
    let n = s.ensemble.n_atoms;
    let ratios = s.sweep_values();
    let r = snr(s.probe.n_c, s.cavity.kappa_out, s.probe.tau_i, s.noise.n_noise)?;
    let floor = s.noise.digitizer_phase_floor;

    let rows = ratios
        .par_iter()
        .enumerate()
        .map(|(i, &ratio)| -> Result<Vec<f64>> {
            let pure = predict_superposition_phase(
                ratio,
                &DepolarizationMap::PURE,
                &setup.model,
                n,
                opts.prep_to_center,
                setup.grid,
                setup.t_max,
            )?;
            let dep = predict_superposition_phase(
                ratio,
                &opts.depolarization,
                &setup.model,
                n,
                opts.prep_to_center,
                setup.grid,
                setup.t_max,
            )?;
            let chi = -dep.to_radians().tan() * s.cavity.kappa / 2.0;
            let per_shot = (phase_change_precision(r, chi, s.cavity.kappa, s.probe.alpha)?.powi(2) + floor * floor).sqrt();
            let sigma = per_shot.to_degrees() / (s.shots as f64).sqrt();
            let mut rng = stream(s.master_seed, Purpose::Phase, i as u64);
            let measured = dep + Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng);
            let p = prep_fraction(ratio);
            let mut rng = stream(s.master_seed, Purpose::Mcp, i as u64);
            let e = measure_p_fraction(n, p, &s.mcp, s.shots, &mut rng);
            Ok(vec![ratio, p, measured, sigma, pure, dep, e.p_p, e.p_p_sigma.max(MIN_P_SIGMA)])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(
        "rabi",
        &[
            "prep_ratio",
            "p_prepared",
            "delta_phi_deg",
            "sigma_delta_phi_deg",
            "model_pure_delta_phi_deg",
            "model_depolarized_delta_phi_deg",
            "p_p",
            "sigma_p_p",
        ],
    );
    for row in rows {
        table.push(row.into_iter().map(Into::into).collect());
    }
    let mut tables = vec![table];
    let mut summary = json!({
        "n_atoms": n,
        "signal_time_s": setup.t_max,
        "depolarization": opts.depolarization,
        "prep_to_center_s": opts.prep_to_center,
    });

    if let Some(cal) = &opts.calibration {
        let data = rabi_dataset(s, &cal.pulse_areas, cal.n_atoms)?;
        let mut t = Table::new(
            "rabi_calibration",
            &[
                "pulse_area_rad",
                "s1_v_ns",
                "sigma_s1_v_ns",
                "s2_v_ns",
                "sigma_s2_v_ns",
                "s_r",
                "sigma_s_r",
            ],
        );
        for i in 0..data.pulse_area.len() {
            t.push(vec![
                data.pulse_area[i].into(),
                data.s1[i].into(),
                data.sigma_s1[i].into(),
                data.s2[i].into(),
                data.sigma_s2[i].into(),
                data.s_r[i].into(),
                data.sigma_s_r[i].into(),
            ]);
        }
        tables.push(t);
        let fit = fit_rabi_calibration(&data, s.mcp.decay_ratio(), RabiChannels::default(), &FitOptions::default())?;
        summary["calibration"] = json!({
            "decay_ratio": s.mcp.decay_ratio(),
            "alpha_p": fit.value("alpha_p"),
            "sigma_alpha_p": fit.uncertainty("alpha_p"),
            "beta_s": fit.value("beta_s"),
            "sigma_beta_s": fit.uncertainty("beta_s"),
            "beta_p": fit.value("beta_p"),
            "sigma_beta_p": fit.uncertainty("beta_p"),
            "amplitude_v_ns": fit.value("amplitude"),
            "reduced_chi_square": fit.reduced_chi_square(),
        });
    }

    if let Some(sp) = &opts.spectroscopy {
        let spec_setup = SpectroscopySetup {
            dt_i: sp.dt_i,
            decay_interval: sp.decay_interval,
            tau_s: s.ensemble.tau_s,
            tau_p: s.ensemble.tau_p,
        };
        let truth = SpectroscopyParams {
            omega_i_plus: sp.omega_i_plus,
            omega_i_minus: sp.omega_i_minus,
            line_plus: s.transitions.delta_plus.mean(),
            line_minus: s.transitions.delta_minus.mean(),
            p_plus: opts.depolarization.p_plus,
            p_minus: opts.depolarization.p_minus,
        };
        let spectra = spectroscopy_dataset(s, sp.n_atoms, &sp.prep_ratios, &sp.frequencies, &spec_setup, &truth)?;
        let mut t = Table::new(
            "spectroscopy",
            &["prep_ratio", "frequency_hz", "p_p", "sigma_p_p", "model_p_p"],
        );
        for sp_ in &spectra {
            let p_prep = spec_setup.prepared_fraction(sp_.prep_ratio);
            for i in 0..sp_.frequency.len() {
                t.push(vec![
                    sp_.prep_ratio.into(),
                    rad_to_hz(sp_.frequency[i]).into(),
                    sp_.p_p[i].into(),
                    sp_.sigma[i].into(),
                    spectrum_model(sp_.frequency[i], p_prep, &truth, sp.dt_i).into(),
                ]);
            }
        }
        tables.push(t);
        let fit = fit_spectroscopy(&spectra, &spec_setup, &FitOptions::default())?;
        summary["spectroscopy"] = json!({
            "p_plus": fit.value("p_plus"),
            "sigma_p_plus": fit.uncertainty("p_plus"),
            "p_minus": fit.value("p_minus"),
            "sigma_p_minus": fit.uncertainty("p_minus"),
            "line_plus_hz": fit.value("line_plus").map(rad_to_hz),
            "line_minus_hz": fit.value("line_minus").map(rad_to_hz),
            "omega_i_plus_hz": fit.value("omega_i_plus").map(rad_to_hz),
            "omega_i_minus_hz": fit.value("omega_i_minus").map(rad_to_hz),
            "true_p_plus": truth.p_plus,
            "true_p_minus": truth.p_minus,
            "reduced_chi_square": fit.reduced_chi_square(),
        });
    }

    Ok(Dataset {
        kind: "rabi".into(),
        tables,
        summary,
    })
}

/// Shot-averaged MCP signals of a resonant Rabi drive versus pulse area.
pub fn rabi_dataset(s: &Scenario, pulse_areas: &[f64], n_atoms: f64) -> Result<RabiData> {
    let est: Vec<_> = pulse_areas
        .par_iter()
        .enumerate()
        .map(|(i, &theta)| {
            let p = (0.5 * theta).sin().powi(2);
            let mut rng = stream(s.master_seed, Purpose::Dataset, 1_000_000 + i as u64);
            measure_p_fraction(n_atoms, p, &s.mcp, s.shots, &mut rng)
        })
        .collect();
    let tiny = 1e-9 * s.mcp.s1_atom * n_atoms.max(1.0);
    Ok(RabiData {
        pulse_area: pulse_areas.to_vec(),
        s1: est.iter().map(|e| e.s1).collect(),
        s2: est.iter().map(|e| e.s2).collect(),
        s_r: est.iter().map(|e| e.s_r).collect(),
        sigma_s1: est.iter().map(|e| e.s1_sem.max(tiny)).collect(),
        sigma_s2: est.iter().map(|e| e.s2_sem.max(tiny)).collect(),
        sigma_s_r: est.iter().map(|e| e.s_r_sem.max(1e-9)).collect(),
    })
}

/// MCP-measured spectra for each preparation ratio.
pub fn spectroscopy_dataset(
    s: &Scenario,
    n_atoms: f64,
    prep_ratios: &[f64],
    frequencies: &[f64],
    setup: &SpectroscopySetup,
    truth: &SpectroscopyParams,
) -> Result<Vec<Spectrum>> {
    Ok(prep_ratios
        .iter()
        .enumerate()
        .map(|(k, &ratio)| {
            let p_prep = setup.prepared_fraction(ratio);
            let est: Vec<_> = frequencies
                .par_iter()
                .enumerate()
                .map(|(i, &f)| {
                    let p = spectrum_model(f, p_prep, truth, setup.dt_i);
                    let idx = 2_000_000 + ((k as u64) << 20) + i as u64;
                    let mut rng = stream(s.master_seed, Purpose::Dataset, idx);
                    measure_p_fraction(n_atoms, p, &s.mcp, s.shots, &mut rng)
                })
                .collect();
            Spectrum {
                prep_ratio: ratio,
                frequency: frequencies.to_vec(),
                p_p: est.iter().map(|e| e.p_p).collect(),
                sigma: est.iter().map(|e| e.p_p_sigma.max(MIN_P_SIGMA)).collect(),
            }
        })
        .collect())
}
