//! Single-shot campaigns: per-shot cavity and MCP atom numbers and the
//! resulting precision curves.

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use super::{mean_sem, prepared_atoms, shot_index, std_dev, Dataset, Experiment, PhaseTable, Scenario, SignalSetup, Table};
use crate::detection::{
    atom_number_precision, mcp_relative_precision, mcp_signal, p_fraction_from_ratio, phase_change_precision,
    sample_phase_change, snr, ReadoutParams,
};
use crate::error::{Error, Result};
use crate::model::DetuningProfile;
use crate::rng::{stream, Purpose};
use crate::units::wrap_phase;

/// Relative margin outside [beta_p, beta_s] within which MCP ratios are
/// clipped instead of rejected.
const RATIO_MARGIN: f64 = 0.05;

/// Noiseless window means tabulated on an atom-number grid.
struct MeansTable {
    step: f64,
    signal: Vec<Complex64>,
    reference: Vec<Complex64>,
}

impl MeansTable {
    fn build(setup: &SignalSetup, n_max: f64, points: usize) -> Result<Self> {
        let step = n_max / (points - 1) as f64;
        let means = (0..points)
            .into_par_iter()
            .map(|i| setup.window_means(step * i as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeansTable {
            step,
            signal: means.iter().map(|m| m.0).collect(),
            reference: means.iter().map(|m| m.1).collect(),
        })
    }

    fn at(&self, n: f64) -> (Complex64, Complex64) {
        let x = (n / self.step).max(0.0);
        let i = (x.floor() as usize).min(self.signal.len() - 2);
        let w = x - i as f64;
        (
            self.signal[i] * (1.0 - w) + self.signal[i + 1] * w,
            self.reference[i] * (1.0 - w) + self.reference[i + 1] * w,
        )
    }

    fn phase_table(&self) -> Result<PhaseTable> {
        let n_atoms: Vec<f64> = (0..self.signal.len()).map(|i| self.step * i as f64).collect();
        let phase_deg: Vec<f64> = self
            .signal
            .iter()
            .zip(&self.reference)
            .map(|(s, r)| wrap_phase(s.arg() - r.arg()).to_degrees())
            .collect();
        if !phase_deg.windows(2).all(|w| w[1] < w[0]) && !phase_deg.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Config("phase response is not monotonic in the atom number".into()));
        }
        Ok(PhaseTable { n_atoms, phase_deg })
    }
}

fn campaign_setup(s: &Scenario, single_transition: bool) -> Result<SignalSetup> {
    if single_transition {
        let mut one = s.clone();
        one.transitions.delta_minus = DetuningProfile::constant(f64::INFINITY);
        SignalSetup::new(&one, false)
    } else {
        SignalSetup::new(s, false)
    }
}

/// Local phase slope (rad per atom) of the signal window at `n`.
fn local_slope(setup: &SignalSetup, n: f64) -> Result<f64> {
    let h = (0.01 * n).max(1.0);
    let lo = (n - h).max(0.0);
    Ok((setup.signal_phase(n + h)? - setup.signal_phase(lo)?).to_radians() / (n + h - lo))
}

/// Digitizer phase floor (rad) for which the simulated cavity precision at
/// `n_atoms` equals `target_sigma_n`.
pub fn calibrate_floor(s: &Scenario, target_sigma_n: f64, n_atoms: f64) -> Result<f64> {
    let single = matches!(&s.experiment, Experiment::Campaign(c) if c.single_transition);
    let setup = campaign_setup(s, single)?;
    let slope = local_slope(&setup, n_atoms)?;
    let r = snr(s.probe.n_c, s.cavity.kappa_out, s.probe.tau_i, s.noise.n_noise)?;
    let chi = setup.signal_shift(n_atoms)?;
    let white = phase_change_precision(r, chi, s.cavity.kappa, s.probe.alpha)?;
    let total = target_sigma_n * slope.abs();
    if total <= white {
        return Err(Error::Validity(format!(
            "target sigma_N = {target_sigma_n} is below the noise-only value {:.3}",
            white / slope.abs()
        )));
    }
    Ok((total * total - white * white).sqrt())
}

struct Shot {
    n_prepared: u64,
    delta_phi: f64,
    n_estimated: f64,
    s1: f64,
    s2: f64,
    s_r: f64,
    p_p: f64,
    clipped: bool,
}

/// Runs `shots` single shots per mean atom number, then the
/// precision-versus-power curves at fixed atom number.
pub fn run_campaign(s: &Scenario) -> Result<Dataset> {
    let Experiment::Campaign(opts) = &s.experiment else {
        return Err(Error::Config("not a campaign scenario".into()));
    };
    let setup = campaign_setup(s, opts.single_transition)?;
    let values = s.sweep_values();
    if values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("sweep.values", "atom numbers must be >= 0"));
    }
    let n_top = values.iter().fold(0.0f64, |a, &b| a.max(b));
    let n_max = (1.3 * n_top + 6.0 * n_top.sqrt()).max(10.0);
    let means = MeansTable::build(&setup, n_max, 801)?;
    let phases = means.phase_table()?;
    let r = snr(s.probe.n_c, s.cavity.kappa_out, s.probe.tau_i, s.noise.n_noise)?;
    let floor = s.noise.digitizer_phase_floor;
    let alpha = s.probe.alpha;

    let mut shots_table = Table::new(
        "shots",
        &[
            "shot_id",
            "n_mean",
            "n_prepared",
            "delta_phi_deg",
            "n_estimated",
            "s1_v_ns",
            "s2_v_ns",
            "s_r",
            "p_p",
            "p_p_clipped",
        ],
    );
    let mut prec_n = Table::new(
        "precision_vs_n",
        &[
            "n_mean",
            "sigma_delta_phi_deg",
            "sigma_n_cavity",
            "rel_sigma_n_cavity",
            "rel_sigma_n_cavity_total",
            "rel_sigma_n_mcp",
            "rel_sigma_n_mcp_total",
            "rel_sigma_n_mcp_analytic",
            "rel_sigma_n_mcp_analytic_total",
            "sigma_n_single_transition_analytic",
            "clipped_shots",
        ],
    );
    let mut shot_id = 0u64;
    let mut point_summaries = Vec::new();
    for (i, &n_mean) in values.iter().enumerate() {
        let shots: Vec<Shot> = (0..s.shots)
            .into_par_iter()
            .map(|k| -> Result<Shot> {
                let idx = shot_index(i, k);
                let mut prep = stream(s.master_seed, Purpose::Preparation, idx);
                let n = prepared_atoms(n_mean, opts.poisson_preparation, &mut prep);
                let (sig, refm) = means.at(n as f64);
                let mut ph = stream(s.master_seed, Purpose::Phase, idx);
                let delta_phi = sample_phase_change(sig, refm, r, alpha, floor, &mut ph);
                let mut m = stream(s.master_seed, Purpose::Mcp, idx);
                let (s1, s2) = mcp_signal(n, 0, &s.mcp, &mut m);
                let (s_r, p_p, clipped) = if s1 > 0.0 {
                    let s_r = s2 / s1;
                    match p_fraction_from_ratio(s_r, &s.mcp, RATIO_MARGIN) {
                        Ok(p) => (s_r, p.value, p.clipped),
                        Err(Error::OutOfRange { clipped, .. }) => (s_r, clipped, true),
                        Err(e) => return Err(e),
                    }
                } else {
                    (f64::NAN, f64::NAN, false)
                };
                Ok(Shot {
                    n_prepared: n,
                    delta_phi,
                    n_estimated: phases.invert(delta_phi),
                    s1,
                    s2,
                    s_r,
                    p_p,
                    clipped,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        for sh in &shots {
            shots_table.push(vec![
                shot_id.into(),
                n_mean.into(),
                sh.n_prepared.into(),
                sh.delta_phi.into(),
                sh.n_estimated.into(),
                sh.s1.into(),
                sh.s2.into(),
                sh.s_r.into(),
                sh.p_p.into(),
                sh.clipped.into(),
            ]);
            shot_id += 1;
        }

        let dphi: Vec<f64> = shots.iter().map(|x| x.delta_phi).collect();
        let dev_cav: Vec<f64> = shots.iter().map(|x| x.n_estimated - x.n_prepared as f64).collect();
        let est_cav: Vec<f64> = shots.iter().map(|x| x.n_estimated).collect();
        let n_mcp: Vec<f64> = shots.iter().map(|x| x.s1 / s.mcp.s1_atom).collect();
        let dev_mcp: Vec<f64> = shots.iter().map(|x| x.s1 / s.mcp.s1_atom - x.n_prepared as f64).collect();
        let sigma_cav = std_dev(&dev_cav);
        let rel = |v: f64| if n_mean > 0.0 { v / n_mean } else { f64::NAN };
        let (mcp_an, mcp_an_total) = if n_mean > 0.0 {
            let m = mcp_relative_precision(n_mean, s.mcp.eta, s.mcp.sigma_a_rel)?;
            (m, (m * m + 1.0 / n_mean).sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        let eq4 = atom_number_precision(&ReadoutParams {
            kappa: s.cavity.kappa,
            g: setup.g_eff,
            n_noise: s.noise.n_noise,
            kappa_out: s.cavity.kappa_out,
            tau_i: s.probe.tau_i,
            alpha,
            n_c: s.probe.n_c,
            n_crit: setup.n_crit,
        })?;
        let clipped = shots.iter().filter(|x| x.clipped).count();
        prec_n.push(vec![
            n_mean.into(),
            std_dev(&dphi).into(),
            sigma_cav.into(),
            rel(sigma_cav).into(),
            rel(std_dev(&est_cav)).into(),
            rel(std_dev(&dev_mcp)).into(),
            rel(std_dev(&n_mcp)).into(),
            mcp_an.into(),
            mcp_an_total.into(),
            eq4.into(),
            clipped.into(),
        ]);
        let (mean_est, _) = mean_sem(&est_cav);
        point_summaries.push(json!({
            "n_mean": n_mean,
            "mean_n_estimated": mean_est,
            "sigma_n_cavity": sigma_cav,
            "clipped_shots": clipped,
        }));
    }

    // precision versus probe power at fixed atom number
    let mut prec_nc = Table::new(
        "precision_vs_nc",
        &[
            "n_c",
            "n_atoms",
            "sigma_delta_phi_deg",
            "sigma_delta_phi_analytic_deg",
            "sigma_n_cavity",
            "sigma_n_single_transition_analytic",
        ],
    );
    let n_fix = opts.precision_atoms;
    let rows = opts
        .photon_numbers
        .par_iter()
        .enumerate()
        .map(|(j, &n_c)| -> Result<[f64; 6]> {
            let st = setup.with_photons(n_c);
            let (sig, refm) = st.window_means(n_fix)?;
            let centre = wrap_phase(sig.arg() - refm.arg());
            let slope = local_slope(&st, n_fix)?;
            let r = snr(n_c, s.cavity.kappa_out, s.probe.tau_i, s.noise.n_noise)?;
            let point = values.len() + j;
            let samples: Vec<f64> = (0..s.shots)
                .map(|k| {
                    let mut ph = stream(s.master_seed, Purpose::Phase, shot_index(point, k));
                    sample_phase_change(sig, refm, r, alpha, floor, &mut ph)
                })
                .collect();
            let n_est: Vec<f64> = samples
                .iter()
                .map(|d| n_fix + (d.to_radians() - centre) / slope)
                .collect();
            let chi = st.signal_shift(n_fix)?;
            let analytic = (phase_change_precision(r, chi, s.cavity.kappa, alpha)?.powi(2) + floor * floor).sqrt();
            let eq4 = atom_number_precision(&ReadoutParams {
                kappa: s.cavity.kappa,
                g: setup.g_eff,
                n_noise: s.noise.n_noise,
                kappa_out: s.cavity.kappa_out,
                tau_i: s.probe.tau_i,
                alpha,
                n_c,
                n_crit: setup.n_crit,
            })?;
            Ok([n_c, n_fix, std_dev(&samples), analytic.to_degrees(), std_dev(&n_est), eq4])
        })
        .collect::<Result<Vec<_>>>()?;
    for row in rows {
        prec_nc.push(row.iter().map(|&v| v.into()).collect());
    }

    let slope = local_slope(&setup, n_top.max(1.0) * 0.5)?;
    let summary = json!({
        "snr": r,
        "signal_time_s": setup.t_max,
        "g_eff_rad_s": setup.g_eff,
        "n_crit": setup.n_crit,
        "power_factor": setup.model.power_factor,
        "phase_slope_deg_per_atom": slope.to_degrees(),
        "digitizer_phase_floor_rad": floor,
        "poisson_preparation": opts.poisson_preparation,
        "single_transition": opts.single_transition,
        "shots_per_point": s.shots,
        "points": point_summaries,
    });
    Ok(Dataset {
        kind: "campaign".into(),
        tables: vec![shots_table, prec_n, prec_nc],
        summary,
    })
}
