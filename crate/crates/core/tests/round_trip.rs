//! Scenario outputs written to CSV, read back and fitted.

use std::path::{Path, PathBuf};

use rydcav::estimation::{
    fit_atom_number, fit_power_dependence, fit_rabi_calibration, fit_spectroscopy, FitOptions, RabiChannels,
    SpectroscopySetup,
};
use rydcav::experiments::{Experiment, SignalSetup};
use rydcav::io::{
    load_config, power_datasets_from_csv, rabi_data_from_csv, run_config, spectra_from_csv, traces_from_csv,
    CsvColumns, ScenarioConfig,
};

fn config(name: &str) -> ScenarioConfig {
    let p: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.json"));
    load_config(&p).unwrap()
}

#[test]
fn all_scenarios_validate() {
    for name in ["flythrough", "sensitivity", "power_sweep", "single_shot", "superposition"] {
        let cfg = config(name);
        cfg.to_scenario().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn flythrough_csv_fits_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("flythrough");
    run_config(&cfg, dir.path()).unwrap();
    let traces = traces_from_csv(&CsvColumns::read(&dir.path().join("flythrough.csv")).unwrap()).unwrap();
    let s = cfg.to_scenario().unwrap();
    let model = SignalSetup::new(&s, false).unwrap().model;
    let fit = fit_atom_number(&traces, &model, &FitOptions::default()).unwrap();
    let n = fit.value("n_atoms").unwrap();
    let sigma = fit.uncertainty("n_atoms").unwrap();
    assert!((n - 261.0).abs() < 4.0 * sigma, "{n} +- {sigma}");
}

#[test]
fn power_csv_fits_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("power_sweep");
    run_config(&cfg, dir.path()).unwrap();
    let sets = power_datasets_from_csv(&CsvColumns::read(&dir.path().join("power_sweep.csv")).unwrap()).unwrap();
    assert_eq!(sets.len(), 3);
    let s = cfg.to_scenario().unwrap();
    let fit = fit_power_dependence(&sets, s.cavity.kappa, &FitOptions::default()).unwrap();
    let n_crit = SignalSetup::new(&s, false).unwrap().n_crit;
    let v = fit.value("n_crit").unwrap();
    assert!((v - n_crit).abs() < 4.0 * fit.uncertainty("n_crit").unwrap(), "{v} vs {n_crit}");
}

#[test]
fn rabi_and_spectroscopy_csv_fit_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("superposition");
    run_config(&cfg, dir.path()).unwrap();
    let s = cfg.to_scenario().unwrap();
    let Experiment::Rabi(r) = &s.experiment else { panic!("not a rabi scenario") };

    let data = rabi_data_from_csv(&CsvColumns::read(&dir.path().join("rabi_calibration.csv")).unwrap()).unwrap();
    let fit = fit_rabi_calibration(&data, s.mcp.decay_ratio(), RabiChannels::default(), &FitOptions::default()).unwrap();
    assert!((fit.value("alpha_p").unwrap() - s.mcp.alpha_p).abs() < 0.013);
    assert!((fit.value("beta_s").unwrap() - s.mcp.beta_s).abs() < 0.003);
    assert!((fit.value("beta_p").unwrap() - s.mcp.beta_p).abs() < 0.003);

    let sp = r.spectroscopy.as_ref().unwrap();
    let spectra = spectra_from_csv(&CsvColumns::read(&dir.path().join("spectroscopy.csv")).unwrap()).unwrap();
    let setup = SpectroscopySetup {
        dt_i: sp.dt_i,
        decay_interval: sp.decay_interval,
        tau_s: s.ensemble.tau_s,
        tau_p: s.ensemble.tau_p,
    };
    let fit = fit_spectroscopy(&spectra, &setup, &FitOptions::default()).unwrap();
    assert!((fit.value("p_plus").unwrap() - r.depolarization.p_plus).abs() < 0.03);
    assert!((fit.value("p_minus").unwrap() - r.depolarization.p_minus).abs() < 0.03);
}

#[test]
fn superposition_phase_is_reduced_by_depolarization() {
    let dir = tempfile::tempdir().unwrap();
    run_config(&config("superposition"), dir.path()).unwrap();
    let cols = CsvColumns::read(&dir.path().join("rabi.csv")).unwrap();
    let ratio = cols.column("prep_ratio").unwrap();
    let pure = cols.column("model_pure_delta_phi_deg").unwrap();
    let dep = cols.column("model_depolarized_delta_phi_deg").unwrap();
    let i = ratio.iter().position(|&r| (r - 1.0).abs() < 1e-9).unwrap();
    // pi pulse: sign reversed relative to s, smaller with depolarization
    assert!(pure[i] > 0.0 && dep[i] > 0.0 && dep[i] < pure[i]);
    assert!(pure[0] < 0.0 && (pure[0] - dep[0]).abs() < 1e-12);
}
