//! Time-resolved transmission while a cloud crosses the cavity.

use serde_json::json;

use super::{Dataset, Experiment, Scenario, SignalSetup, Table};
use crate::detection::snr;
use crate::error::{Error, Result};
use crate::estimation::{fit_atom_number, FitOptions, MeasuredTrace};
use crate::rng::{stream, Purpose};
use crate::transmission::{
    amplitude_change, extremum, instantaneous_response, phase_change, reference_phase, Window,
};
use crate::units::rad_to_hz;

/// Averaged fly-through traces for each probe detuning, with the
/// instantaneous (cavity-free) response for comparison and an optional
/// atom-number fit of the noisy traces.
pub fn run_flythrough(s: &Scenario) -> Result<Dataset> {
    let Experiment::Flythrough(opts) = &s.experiment else {
        return Err(Error::Config("not a fly-through scenario".into()));
    };
    let setup = SignalSetup::new(s, opts.extended_cloud)?;
    let cavity = &s.cavity;
    let ens = &s.ensemble;
    let grid = setup.grid;
    let transit = (ens.entry_time, ens.exit_time(cavity));
    let t_cen = ens.center_time(cavity);
    let reference = setup.windows.reference;
    let search = Window {
        start: ens.entry_time,
        end: transit.1 + 5.0 * cavity.tau_c(),
    };

    // per-sample, per-quadrature noise of the shot-averaged trace
    let sigma = if s.probe.n_c > 0.0 {
        let r_sample = snr(s.probe.n_c, cavity.kappa_out, grid.dt, s.noise.n_noise)?;
        Some((1.0 / (r_sample * s.shots as f64)).sqrt())
    } else {
        None
    };

    let mut table = Table::new(
        "flythrough",
        &[
            "probe_detuning_hz",
            "time_s",
            "t_c_s",
            "amplitude_rel",
            "phase_rad",
            "sigma_amplitude_rel",
            "sigma_phase_rad",
            "model_delta_amplitude_rel",
            "model_delta_phase_deg",
            "instantaneous_delta_amplitude_rel",
            "instantaneous_delta_phase_deg",
        ],
    );
    let mut measured = Vec::new();
    let mut per_detuning = Vec::new();
    let unit = setup.model.unit_shift(grid, ens.entry_time)?;
    for (k, &dk) in opts.probe_detunings.iter().enumerate() {
        let delta_m = dk * cavity.kappa;
        let trace = setup.model.predict(ens.n_atoms, delta_m, grid)?;
        let inst = instantaneous_response(&unit.clone().scaled(ens.n_atoms), delta_m, cavity.kappa);
        let ref_phase = reference_phase(&trace, reference, transit)?;
        let ref_amp = trace.window_mean(reference)?.norm();
        let dphi = phase_change(&trace, ref_phase);
        let damp = amplitude_change(&trace, ref_amp);
        let inst_ref = reference_phase(&inst, reference, transit)?;
        let inst_dphi = phase_change(&inst, inst_ref);
        let inst_damp = amplitude_change(&inst, inst.window_mean(reference)?.norm());

        let data = match sigma {
            Some(sd) => {
                let mut rng = stream(s.master_seed, Purpose::Dataset, k as u64);
                MeasuredTrace::noisy(&trace, delta_m, sd, &mut rng)
            }
            None => MeasuredTrace::from_complex(&trace, delta_m, 1.0),
        };
        for i in 0..grid.len {
            let t = grid.time(i);
            table.push(vec![
                rad_to_hz(delta_m).into(),
                t.into(),
                (t - ens.entry_time).into(),
                data.amp[i].into(),
                data.phase[i].into(),
                data.sigma_amp[i].into(),
                data.sigma_phase[i].into(),
                damp[i].into(),
                dphi[i].into(),
                inst_damp[i].into(),
                inst_dphi[i].into(),
            ]);
        }
        let peak = extremum(&grid, &dphi, search);
        let inst_peak = extremum(&grid, &inst_dphi, search);
        per_detuning.push(json!({
            "probe_detuning_kappa": dk,
            "probe_detuning_hz": rad_to_hz(delta_m),
            "t_extremum_s": peak.map(|p| p.0),
            "delay_s": peak.map(|p| p.0 - t_cen),
            "delta_phi_extremum_deg": peak.map(|p| p.1),
            "instantaneous_t_extremum_s": inst_peak.map(|p| p.0),
            "instantaneous_delta_phi_extremum_deg": inst_peak.map(|p| p.1),
            "delta_phi_at_signal_time_deg": dphi[grid.position(setup.t_max).round() as usize],
        }));
        measured.push(data);
    }

    let fit = if opts.fit && sigma.is_some() {
        let r = fit_atom_number(&measured, &setup.model, &FitOptions::default())?;
        Some(json!({
            "n_atoms": r.value("n_atoms"),
            "sigma_n_atoms": r.uncertainty("n_atoms"),
            "reduced_chi_square": r.reduced_chi_square(),
            "status": r.status,
        }))
    } else {
        None
    };
    let signal_phase = setup.signal_phase(ens.n_atoms)?;
    let summary = json!({
        "n_atoms": ens.n_atoms,
        "center_time_s": t_cen,
        "entry_time_s": transit.0,
        "exit_time_s": transit.1,
        "signal_time_s": setup.t_max,
        "delay_s": setup.t_max - t_cen,
        "cavity_time_constant_s": cavity.tau_c(),
        "sigma_per_sample": sigma,
        "signal_window_phase_deg": signal_phase,
        "sensitivity_deg_per_atom": if ens.n_atoms > 0.0 { Some(signal_phase / ens.n_atoms) } else { None },
        "n_crit": setup.n_crit,
        "g_eff_hz": rad_to_hz(setup.g_eff),
        "probes": per_detuning,
        "fit": fit,
    });
    Ok(Dataset {
        kind: "flythrough".into(),
        tables: vec![table],
        summary,
    })
}
