//! Detection chain: heterodyne phase noise, analytic precision formulas and
//! the micro-channel-plate (MCP) ionization channel.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transmission::{ComplexTrace, Window};
use crate::units::wrap_phase;

/// Microwave detection chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseChain {
    /// Effective noise photon number of the amplifier chain.
    pub n_noise: f64,
    /// Additive phase noise of the digitizer (rad, standard deviation).
    pub digitizer_phase_floor: f64,
    pub rng_seed: u64,
}

impl NoiseChain {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_noise > 0.0 && self.n_noise.is_finite()) {
            return Err(Error::invalid("n_noise", "must be finite and > 0"));
        }
        if !(self.digitizer_phase_floor >= 0.0 && self.digitizer_phase_floor.is_finite()) {
            return Err(Error::invalid("digitizer_phase_floor", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Probe tone and integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Probe detuning from the bare cavity (rad/s).
    pub delta_m: f64,
    /// Intracavity photon number.
    pub n_c: f64,
    /// Signal integration time (s).
    pub tau_i: f64,
    /// Reference window length in units of `tau_i`.
    pub alpha: f64,
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.delta_m.is_finite() {
            return Err(Error::invalid("delta_m", "must be finite"));
        }
        if !(self.n_c >= 0.0 && self.n_c.is_finite()) {
            return Err(Error::invalid("n_c", "must be finite and >= 0"));
        }
        if !(self.tau_i > 0.0 && self.tau_i.is_finite()) {
            return Err(Error::invalid("tau_i", "must be finite and > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Two-window MCP signal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McpModel {
    pub eta: f64,
    pub sigma_a_rel: f64,
    /// Integrated single s-atom signal per prepared atom (V ns).
    pub s1_atom: f64,
    pub alpha_p: f64,
    pub beta_s: f64,
    pub beta_p: f64,
    /// Delay between the microwave population change and ionization (s).
    pub dt_md: f64,
    pub tau_s: f64,
    pub tau_p: f64,
}

impl McpModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid("eta", "must lie in (0, 1]"));
        }
        if !(self.sigma_a_rel >= 0.0 && self.sigma_a_rel.is_finite()) {
            return Err(Error::invalid("sigma_a_rel", "must be finite and >= 0"));
        }
        if !(self.s1_atom > 0.0 && self.s1_atom.is_finite()) {
            return Err(Error::invalid("s1_atom", "must be finite and > 0"));
        }
        if !(self.alpha_p > 0.0 && self.alpha_p <= 1.0) {
            return Err(Error::invalid("alpha_p", "must lie in (0, 1]"));
        }
        if !(0.0 < self.beta_p && self.beta_p < self.beta_s && self.beta_s < 1.0) {
            return Err(Error::invalid("beta_s/beta_p", "require 0 < beta_p < beta_s < 1"));
        }
        if !(self.dt_md >= 0.0 && self.dt_md.is_finite()) {
            return Err(Error::invalid("dt_md", "must be finite and >= 0"));
        }
        if !(self.tau_s > 0.0 && self.tau_p > 0.0) {
            return Err(Error::invalid("tau_s/tau_p", "lifetimes must be > 0"));
        }
        Ok(())
    }

    /// Ratio of p to s survival between the population change and detection.
    pub fn decay_ratio(&self) -> f64 {
        (self.dt_md * (1.0 / self.tau_s - 1.0 / self.tau_p)).exp()
    }

    /// Expected (S1, S2) for given atom numbers at detection time.
    pub fn expected_signal(&self, n_s: f64, n_p: f64) -> (f64, f64) {
        (
            self.s1_atom * (n_s + self.alpha_p * n_p),
            self.s1_atom * (self.beta_s * n_s + self.alpha_p * self.beta_p * n_p),
        )
    }

    /// Expected ratio S2/S1 for a p fraction set at the time of the
    /// population change (before decay to detection).
    pub fn expected_ratio(&self, p_p: f64) -> f64 {
        let d = self.decay_ratio();
        let w_s = 1.0 - p_p;
        let w_p = self.alpha_p * p_p * d;
        (self.beta_s * w_s + self.beta_p * w_p) / (w_s + w_p)
    }
}

/// Power signal-to-noise ratio of one integration window.
pub fn snr(n_c: f64, kappa_out: f64, tau_i: f64, n_noise: f64) -> Result<f64> {
    if !(n_c >= 0.0) {
        return Err(Error::invalid("n_c", "must be >= 0"));
    }
    if !(kappa_out > 0.0 && tau_i > 0.0 && n_noise > 0.0) {
        return Err(Error::invalid("kappa_out/tau_i/n_noise", "must be > 0"));
    }
    Ok(n_c * kappa_out * tau_i / n_noise)
}

/// Minimum SNR for which the small-noise phase formulas are accepted.
pub const MIN_SNR: f64 = 10.0;

fn check_snr(r: f64) -> Result<()> {
    if !(r > MIN_SNR) {
        return Err(Error::Validity(format!(
            "SNR {r:.3e} not in the high-SNR regime (> {MIN_SNR})"
        )));
    }
    Ok(())
}

/// Single-window phase precision 1/sqrt(R), rad.
pub fn phase_precision(r: f64) -> Result<f64> {
    check_snr(r)?;
    Ok(1.0 / r.sqrt())
}

/// Precision of a phase change measured against a reference window of
/// length alpha tau_i, rad.
pub fn phase_change_precision(r: f64, chi: f64, kappa: f64, alpha: f64) -> Result<f64> {
    check_snr(r)?;
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", "must be > 0"));
    }
    let x = 2.0 * chi / kappa;
    Ok((1.0 + x * x + 1.0 / alpha).sqrt() / r.sqrt())
}

/// Inputs of the single-transition atom-number precision formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutParams {
    pub kappa: f64,
    pub g: f64,
    pub n_noise: f64,
    pub kappa_out: f64,
    pub tau_i: f64,
    pub alpha: f64,
    pub n_c: f64,
    pub n_crit: f64,
}

/// Single-shot atom-number precision of the cavity channel,
/// (kappa/g) sqrt(beta n_noise / (2 kappa_out tau_i)) sqrt(1 + n_crit/n_c).
pub fn atom_number_precision(p: &ReadoutParams) -> Result<f64> {
    if p.n_c == 0.0 {
        return Err(Error::Singular("atom-number precision diverges at n_c = 0".into()));
    }
    if !(p.n_c > 0.0 && p.n_crit > 0.0 && p.g > 0.0 && p.kappa > 0.0) {
        return Err(Error::invalid("n_c/n_crit/g/kappa", "must be > 0"));
    }
    if !(p.kappa_out > 0.0 && p.tau_i > 0.0 && p.n_noise > 0.0 && p.alpha > 0.0) {
        return Err(Error::invalid("kappa_out/tau_i/n_noise/alpha", "must be > 0"));
    }
    let beta = 1.0 + 1.0 / p.alpha;
    Ok(p.kappa / p.g
        * (beta * p.n_noise / (2.0 * p.kappa_out * p.tau_i)).sqrt()
        * (1.0 + p.n_crit / p.n_c).sqrt())
}

/// Relative atom-number precision of the MCP channel for N detected-cloud
/// atoms.
pub fn mcp_relative_precision(n_atoms: f64, eta: f64, sigma_a_rel: f64) -> Result<f64> {
    if !(n_atoms > 0.0) {
        return Err(Error::invalid("n_atoms", "must be > 0"));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid("eta", "must lie in (0, 1]"));
    }
    Ok(((sigma_a_rel * sigma_a_rel / eta + 1.0 / eta - 1.0) / n_atoms).sqrt())
}

/// Sum of `k` independent gains of mean 1 and relative spread `sigma`.
fn gain_sum<R: Rng + ?Sized>(k: u64, sigma: f64, rng: &mut R) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return k as f64;
    }
    let var = sigma * sigma;
    // sum of k Gamma(1/var, var) variables
    Gamma::new(k as f64 / var, var)
        .expect("gamma parameters are positive")
        .sample(rng)
}

fn thin<R: Rng + ?Sized>(n: u64, eta: f64, rng: &mut R) -> u64 {
    if n == 0 || eta >= 1.0 {
        return n;
    }
    Binomial::new(n, eta).expect("eta in (0, 1)").sample(rng)
}

/// One MCP shot: integrated signals (S1, S2) in V ns for `n_s` s-atoms and
/// `n_p` p-atoms reaching the detector.
pub fn mcp_signal<R: Rng + ?Sized>(n_s: u64, n_p: u64, model: &McpModel, rng: &mut R) -> (f64, f64) {
    let k_s = thin(n_s, model.eta, rng);
    let k_p = thin(n_p, model.eta, rng);
    let g_s = gain_sum(k_s, model.sigma_a_rel, rng);
    let g_p = gain_sum(k_p, model.sigma_a_rel, rng) * model.alpha_p;
    let unit = model.s1_atom / model.eta;
    (
        unit * (g_s + g_p),
        unit * (model.beta_s * g_s + model.beta_p * g_p),
    )
}

/// p fraction recovered from an MCP ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PFraction {
    pub value: f64,
    /// Set when the ratio fell marginally outside [beta_p, beta_s] and was
    /// clipped to the band edge.
    pub clipped: bool,
}

/// Fraction of p atoms at the time of the population change from the ratio
/// S_r = S2/S1, corrected for decay up to detection.
///
/// Ratios within a relative margin `epsilon` outside [beta_p, beta_s] are
/// clipped and flagged; ratios further out are rejected with the clipped
/// value attached.
pub fn p_fraction_from_ratio(s_r: f64, model: &McpModel, epsilon: f64) -> Result<PFraction> {
    if !s_r.is_finite() {
        return Err(Error::invalid("s_r", "must be finite"));
    }
    let (lo, hi) = (model.beta_p, model.beta_s);
    let clipped_ratio = s_r.clamp(lo, hi);
    let clipped = clipped_ratio != s_r;
    let value = ratio_to_fraction(clipped_ratio, model);
    if s_r < lo * (1.0 - epsilon) || s_r > hi * (1.0 + epsilon) {
        return Err(Error::OutOfRange {
            s_r,
            lower: lo,
            upper: hi,
            clipped: value,
        });
    }
    Ok(PFraction { value, clipped })
}

/// Unclipped inversion of the ratio model; defined for any ratio.
pub fn ratio_to_fraction(s_r: f64, model: &McpModel) -> f64 {
    let num = s_r - model.beta_s;
    if num == 0.0 {
        return 0.0;
    }
    let den = num + model.alpha_p * (model.beta_p - s_r) * model.decay_ratio();
    if den == 0.0 {
        return 1.0;
    }
    // 1 / (1 + alpha_p (beta_p - S_r)/(S_r - beta_s) D), rewritten so both
    // band edges are exact
    num / den
}

/// Signal and reference integration windows of one shot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotWindows {
    pub signal: Window,
    pub reference: Window,
}

impl ShotWindows {
    /// Signal window of length tau_i centered at `t_signal`; reference window
    /// of length alpha tau_i starting at `t_reference`.
    pub fn new(t_signal: f64, t_reference: f64, probe: &ProbeConfig) -> Self {
        ShotWindows {
            signal: Window::centered(t_signal, probe.tau_i),
            reference: Window {
                start: t_reference,
                end: t_reference + probe.alpha * probe.tau_i,
            },
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.signal.overlaps(self.reference.start, self.reference.end) {
            return Err(Error::Config("signal and reference windows overlap".into()));
        }
        Ok(())
    }
}

/// One measured phase change (degrees) from a noiseless transmission trace.
///
/// White complex noise is added per sample with a variance chosen so that
/// the mean over the signal window has phase variance 1/R; the reference
/// window sees the same noise density. Digitizer noise of standard
/// deviation `digitizer_phase_floor` is added to the difference.
pub fn simulate_phase_shot<R: Rng + ?Sized>(
    trace: &ComplexTrace,
    windows: &ShotWindows,
    snr: f64,
    noise: &NoiseChain,
    rng: &mut R,
) -> Result<f64> {
    windows.check()?;
    check_snr(snr)?;
    let sig = trace.window_indices(windows.signal)?;
    let refw = trace.window_indices(windows.reference)?;
    let per_sample = (sig.len() as f64 / snr).sqrt();
    let normal = Normal::new(0.0, per_sample).expect("finite sigma");
    let mut noisy_mean = |range: std::ops::Range<usize>| {
        let n = range.len() as f64;
        range
            .map(|i| trace.values[i] + Complex64::new(normal.sample(rng), normal.sample(rng)))
            .sum::<Complex64>()
            / n
    };
    let s = noisy_mean(sig);
    let r = noisy_mean(refw);
    let floor = if noise.digitizer_phase_floor > 0.0 {
        Normal::new(0.0, noise.digitizer_phase_floor)
            .expect("finite floor")
            .sample(rng)
    } else {
        0.0
    };
    Ok((wrap_phase(s.arg() - r.arg()) + floor).to_degrees())
}

/// Window-mean form of [`simulate_phase_shot`]: draws the averaged noise
/// directly. `signal` and `reference` are the noiseless window means.
pub fn sample_phase_change<R: Rng + ?Sized>(
    signal: Complex64,
    reference: Complex64,
    snr: f64,
    alpha: f64,
    floor: f64,
    rng: &mut R,
) -> f64 {
    let ns = Normal::new(0.0, (1.0 / snr).sqrt()).expect("finite sigma");
    let nr = Normal::new(0.0, (1.0 / (alpha * snr)).sqrt()).expect("finite sigma");
    let s = signal + Complex64::new(ns.sample(rng), ns.sample(rng));
    let r = reference + Complex64::new(nr.sample(rng), nr.sample(rng));
    let mut d = wrap_phase(s.arg() - r.arg());
    if floor > 0.0 {
        d += Normal::new(0.0, floor).expect("finite floor").sample(rng);
    }
    d.to_degrees()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::transmission::{steady_transmission, TimeGrid};
    use crate::units::hz_to_rad;

    pub(crate) fn mcp() -> McpModel {
        McpModel {
            eta: 0.55,
            sigma_a_rel: 0.38,
            s1_atom: 2.07e-2,
            alpha_p: 0.888,
            beta_s: 0.439,
            beta_p: 0.222,
            dt_md: 35.5e-6,
            tau_s: 57.2e-6,
            tau_p: 102.6e-6,
        }
    }

    fn mean_std(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn snr_examples() {
        let r = snr(5.9e4, hz_to_rad(150e3), 6.2e-6, 23.0).unwrap();
        assert!((r - 14_989.494_687).abs() < 1e-5);
        assert_eq!(snr(0.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        let r2 = snr(2.0 * 5.9e4, hz_to_rad(150e3), 6.2e-6, 23.0).unwrap();
        assert!((r2 / r - 2.0).abs() < 1e-15);
    }

    #[test]
    fn phase_precision_examples() {
        assert!((phase_precision(14_989.494_687).unwrap() - 8.167_826_495_987_45e-3).abs() < 1e-12);
        assert!((phase_precision(14_989.494_687).unwrap().to_degrees() - 0.467_98).abs() < 1e-5);
        assert!((phase_precision(1e4).unwrap() - 0.01).abs() < 1e-15);
        assert!((phase_precision(100.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(phase_precision(10.0), Err(Error::Validity(_))));
    }

    #[test]
    fn phase_change_precision_examples() {
        let k = 1.0;
        let base = phase_precision(1e4).unwrap();
        let inf = phase_change_precision(1e4, 0.0, k, 1e300).unwrap();
        assert!((inf - base).abs() < 1e-15);
        let a4 = phase_change_precision(1e4, 0.0, k, 4.0).unwrap();
        assert!((a4 / base - 1.25f64.sqrt()).abs() < 1e-12);
        let half = phase_change_precision(1e4, 0.5 * k, k, 4.0).unwrap();
        assert!((half / base - 1.5).abs() < 1e-12);
    }

    fn readout() -> ReadoutParams {
        ReadoutParams {
            kappa: hz_to_rad(236e3),
            g: hz_to_rad(12.9e3),
            n_noise: 23.0,
            kappa_out: hz_to_rad(150e3),
            tau_i: 6.2e-6,
            alpha: 4.0,
            n_c: 5.9e4,
            n_crit: 4.4e4,
        }
    }

    #[test]
    fn atom_number_precision_examples() {
        let p = readout();
        let s = atom_number_precision(&p).unwrap();
        assert!((s - 37.912_935_97).abs() < 1e-6, "{s}");
        let big = atom_number_precision(&ReadoutParams { n_c: 1e30, ..p }).unwrap();
        let floor = p.kappa / p.g * (1.25 * p.n_noise / (2.0 * p.kappa_out * p.tau_i)).sqrt();
        assert!((big / floor - 1.0).abs() < 1e-12);
        let q = atom_number_precision(&ReadoutParams { n_c: 1e12, tau_i: 4.0 * p.tau_i, ..p }).unwrap();
        let r = atom_number_precision(&ReadoutParams { n_c: 1e12, ..p }).unwrap();
        assert!((q / r - 0.5).abs() < 1e-6);
        assert!(matches!(
            atom_number_precision(&ReadoutParams { n_c: 0.0, ..p }),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn precision_structure_is_power_independent() {
        let p = readout();
        let reference = atom_number_precision(&p).unwrap() * (p.n_c / (p.n_c + p.n_crit)).sqrt();
        for n_c in [1e2, 1e3, 3e4, 1e6] {
            let v = atom_number_precision(&ReadoutParams { n_c, ..p }).unwrap() * (n_c / (n_c + p.n_crit)).sqrt();
            assert!((v / reference - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mcp_relative_precision_examples() {
        assert_eq!(mcp_relative_precision(500.0, 1.0, 0.0).unwrap(), 0.0);
        let v = mcp_relative_precision(500.0, 0.55, 0.38).unwrap();
        assert!((v - 0.046_491_445_938_522).abs() < 1e-12);
    }

    #[test]
    fn ratio_band_edges() {
        let m = mcp();
        assert_eq!(p_fraction_from_ratio(m.beta_s, &m, 0.05).unwrap().value, 0.0);
        assert_eq!(p_fraction_from_ratio(m.beta_p, &m, 0.05).unwrap().value, 1.0);
        let f = p_fraction_from_ratio(m.beta_s * 1.01, &m, 0.05).unwrap();
        assert!(f.clipped && f.value == 0.0);
        match p_fraction_from_ratio(m.beta_s * 1.2, &m, 0.05) {
            Err(Error::OutOfRange { clipped, .. }) => assert_eq!(clipped, 0.0),
            other => panic!("{other:?}"),
        }
        match p_fraction_from_ratio(m.beta_p * 0.5, &m, 0.05) {
            Err(Error::OutOfRange { clipped, .. }) => assert_eq!(clipped, 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ratio_inverse_of_forward_model() {
        let m = mcp();
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            let r = m.expected_ratio(p);
            let back = p_fraction_from_ratio(r, &m, 0.0).unwrap().value;
            assert!((back - p).abs() < 1e-12, "{p} -> {back}");
        }
        // monotone decreasing
        let grid: Vec<f64> = (0..=50)
            .map(|i| m.beta_p + (m.beta_s - m.beta_p) * i as f64 / 50.0)
            .map(|r| p_fraction_from_ratio(r, &m, 0.0).unwrap().value)
            .collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn mcp_zero_atoms() {
        let mut rng = stream(1, Purpose::Mcp, 0);
        assert_eq!(mcp_signal(0, 0, &mcp(), &mut rng), (0.0, 0.0));
    }

    #[test]
    fn mcp_pure_p_ratio() {
        let m = mcp();
        let mut rng = stream(2, Purpose::Mcp, 0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..2000 {
            let (a, b) = mcp_signal(0, 500, &m, &mut rng);
            s1 += a;
            s2 += b;
        }
        assert!((s2 / s1 - 0.222).abs() < 1e-12);
    }

    #[test]
    fn mcp_relative_spread_matches_formula() {
        let m = mcp();
        let mut rng = stream(3, Purpose::Mcp, 0);
        let s1: Vec<f64> = (0..100_000).map(|_| mcp_signal(500, 0, &m, &mut rng).0).collect();
        let (mean, std) = mean_std(&s1);
        assert!((mean / 500.0 / m.s1_atom - 1.0).abs() < 0.002);
        let rel = std / mean;
        let analytic = mcp_relative_precision(500.0, m.eta, m.sigma_a_rel).unwrap();
        assert!((rel / analytic - 1.0).abs() < 0.05, "{rel} vs {analytic}");
    }

    #[test]
    fn noiseless_shot_is_exact() {
        let k = hz_to_rad(236e3);
        let grid = TimeGrid::new(0.0, 1e-8, 5000).unwrap();
        let chi = hz_to_rad(5e3);
        let values = (0..grid.len)
            .map(|i| steady_transmission(if i < 2000 { chi } else { 0.0 }, 0.0, k))
            .collect();
        let trace = ComplexTrace { grid, values };
        let probe = ProbeConfig {
            delta_m: 0.0,
            n_c: 1.0,
            tau_i: 6e-6,
            alpha: 4.0,
        };
        let windows = ShotWindows::new(10e-6, 22e-6, &probe);
        let noise = NoiseChain {
            n_noise: 1.0,
            digitizer_phase_floor: 0.0,
            rng_seed: 0,
        };
        let mut rng = stream(4, Purpose::Phase, 0);
        let d = simulate_phase_shot(&trace, &windows, 1e30, &noise, &mut rng).unwrap();
        let exact = -(2.0 * chi / k).atan().to_degrees();
        assert!((d - exact).abs() < 1e-9);
        let bad = ShotWindows::new(10e-6, 11e-6, &probe);
        assert!(matches!(
            simulate_phase_shot(&trace, &bad, 1e4, &noise, &mut rng),
            Err(Error::Config(_))
        ));
    }
}
