//! Phase change versus atom number and cross-calibration of the MCP.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde_json::json;

use super::{mean_sem, prepared_atoms, shot_index, Dataset, Experiment, PhaseTable, Scenario, SignalSetup, Table};
use crate::detection::{mcp_signal, phase_change_precision, snr};
use crate::error::{Error, Result};
use crate::estimation::{curve_fit, FitOptions, Param};
use crate::rng::{stream, Purpose};

/// Sweeps the atom number, records the shot-averaged phase change in the
/// signal window and the mean MCP signal, and calibrates the MCP against the
/// cavity atom-number scale.
pub fn run_sensitivity(s: &Scenario) -> Result<Dataset> {
    let Experiment::Sensitivity(opts) = &s.experiment else {
        return Err(Error::Config("not a sensitivity scenario".into()));
    };
    let setup = SignalSetup::new(s, false)?;
    let values = s.sweep_values();
    let n_max = values.iter().fold(0.0f64, |a, &b| a.max(b));
    let table_max = (1.2 * n_max * (1.0 + opts.cavity_systematic.max(0.0))).max(10.0);
    let phase_table = PhaseTable::build(&setup, table_max, 241)?;
    let r = snr(s.probe.n_c, s.cavity.kappa_out, s.probe.tau_i, s.noise.n_noise)?;
    let kappa = s.cavity.kappa;
    let floor = s.noise.digitizer_phase_floor;

    struct Point {
        n: f64,
        model: f64,
        measured: f64,
        sigma: f64,
        n_cavity: f64,
        s1: f64,
        s1_sem: f64,
    }
    let points: Vec<Point> = values
        .par_iter()
        .enumerate()
        .map(|(i, &n)| -> Result<Point> {
            let model = setup.signal_phase(n)?;
            let truth = setup.signal_phase(n * (1.0 + opts.cavity_systematic))?;
            let chi = setup.signal_shift(n)?;
            let per_shot =
                (phase_change_precision(r, chi, kappa, s.probe.alpha)?.powi(2) + floor * floor).sqrt();
            let sigma = per_shot.to_degrees() / (s.shots as f64).sqrt();
            let mut rng = stream(s.master_seed, Purpose::Phase, i as u64);
            let measured = truth + Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng);
            let n_cavity = phase_table.invert(measured);
            let sig: Vec<f64> = (0..s.shots)
                .map(|k| {
                    let mut rng = stream(s.master_seed, Purpose::Mcp, shot_index(i, k));
                    let atoms = prepared_atoms(n, false, &mut rng);
                    mcp_signal(atoms, 0, &s.mcp, &mut rng).0
                })
                .collect();
            let (s1, s1_sem) = mean_sem(&sig);
            Ok(Point {
                n,
                model,
                measured,
                sigma,
                n_cavity,
                s1,
                s1_sem,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = Table::new(
        "sensitivity",
        &[
            "n_atoms",
            "delta_phi_deg",
            "sigma_delta_phi_deg",
            "model_delta_phi_deg",
            "n_cavity",
            "mcp_s1_v_ns",
            "sigma_mcp_s1_v_ns",
        ],
    );
    for p in &points {
        table.push(vec![
            p.n.into(),
            p.measured.into(),
            p.sigma.into(),
            p.model.into(),
            p.n_cavity.into(),
            p.s1.into(),
            p.s1_sem.into(),
        ]);
    }

    let line = |x: f64, q: &[f64]| q[0] * x + q[1];
    let ns: Vec<f64> = points.iter().map(|p| p.n).collect();
    let slope0 = setup.signal_phase(1.0)?;
    let phase_fit = curve_fit(
        &ns,
        &points.iter().map(|p| p.measured).collect::<Vec<_>>(),
        Some(&points.iter().map(|p| p.sigma).collect::<Vec<_>>()),
        line,
        &[Param::new("slope", slope0), Param::new("offset", 0.0).with_scale(1.0)],
        &FitOptions::default(),
    )?;
    // linearity of the noiseless response
    let models: Vec<f64> = points.iter().map(|p| p.model).collect();
    let full_scale = models.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let lin_dev = points
        .iter()
        .map(|p| (p.model - slope0 * p.n).abs())
        .fold(0.0f64, f64::max)
        / full_scale.max(f64::MIN_POSITIVE);

    // empty clouds give a noiseless zero signal and carry no slope information
    let informative: Vec<_> = points.iter().filter(|p| p.s1_sem > 0.0).collect();
    let ncav: Vec<f64> = informative.iter().map(|p| p.n_cavity).collect();
    let s1: Vec<f64> = informative.iter().map(|p| p.s1).collect();
    let s1_sigma: Vec<f64> = informative.iter().map(|p| p.s1_sem).collect();
    let mcp_fit = curve_fit(
        &ncav,
        &s1,
        Some(&s1_sigma),
        line,
        &[
            Param::new("mcp_sensitivity", s.mcp.s1_atom),
            Param::new("offset", 0.0).with_scale(s.mcp.s1_atom),
        ],
        &FitOptions::default(),
    )?;

    let summary = json!({
        "signal_time_s": setup.t_max,
        "delay_s": setup.t_max - s.ensemble.center_time(&s.cavity),
        "model_sensitivity_deg_per_atom": slope0,
        "fitted_sensitivity_deg_per_atom": phase_fit.value("slope"),
        "sigma_fitted_sensitivity_deg_per_atom": phase_fit.uncertainty("slope"),
        "max_linearity_deviation": lin_dev,
        "cavity_systematic": opts.cavity_systematic,
        "mcp_sensitivity_v_ns_per_atom": mcp_fit.value("mcp_sensitivity"),
        "sigma_mcp_sensitivity_v_ns_per_atom": mcp_fit.uncertainty("mcp_sensitivity"),
        "configured_mcp_sensitivity_v_ns_per_atom": s.mcp.s1_atom,
        "expected_mcp_sensitivity_v_ns_per_atom": s.mcp.s1_atom / (1.0 + opts.cavity_systematic),
        "snr": r,
        "n_crit": setup.n_crit,
    });
    Ok(Dataset {
        kind: "sensitivity".into(),
        tables: vec![table],
        summary,
    })
}
