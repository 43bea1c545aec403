//! Static atom-cavity physics: mode shape, single-atom coupling, the
//! second-order dispersive shift of a three-level ensemble, its photon-number
//! dressing, and the probe-induced excitation.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Single-mode rectangular cavity seen by the atomic beam.
#[derive(Debug, Clone, PartialEq)]
pub struct CavitySpec {
    /// Resonance frequency, rad/s.
    pub omega_c: f64,
    /// Total energy decay rate, rad/s.
    pub kappa: f64,
    /// Output-port coupling rate, rad/s.
    pub kappa_out: f64,
    /// Input-port coupling rate, rad/s.
    pub kappa_in: f64,
    /// Extent of the mode along the beam axis, m.
    pub length_z: f64,
    /// Number of field antinodes along the beam axis.
    pub mode_antinodes: u32,
    /// Peak single-atom coupling at an antinode, rad/s.
    pub g_max: f64,
    /// Multiplicative correction on g^2 (finite-element deviation from the
    /// analytic mode).
    pub mode_correction: f64,
    /// Transverse width of the mode, m. `None` means no transverse variation
    /// is modelled (only relevant for extended clouds).
    pub transverse_width: Option<f64>,
}

impl CavitySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::invalid("kappa", "must be finite and > 0"));
        }
        if self.kappa_in < 0.0 || self.kappa_out < 0.0 {
            return Err(Error::invalid("kappa_in/kappa_out", "must be >= 0"));
        }
        if self.kappa_in + self.kappa_out <= 0.0 {
            return Err(Error::invalid("kappa_in/kappa_out", "sum must be > 0"));
        }
        if self.kappa < self.kappa_in + self.kappa_out {
            return Err(Error::invalid(
                "kappa",
                "total decay rate must be >= kappa_in + kappa_out",
            ));
        }
        if !(self.g_max.is_finite() && self.g_max > 0.0) {
            return Err(Error::invalid("g_max", "must be finite and > 0"));
        }
        if !(self.mode_correction > 0.5 && self.mode_correction <= 1.5) {
            return Err(Error::invalid("mode_correction", "must lie in (0.5, 1.5]"));
        }
        if !(self.length_z.is_finite() && self.length_z > 0.0) {
            return Err(Error::invalid("length_z", "must be finite and > 0"));
        }
        if self.mode_antinodes == 0 {
            return Err(Error::invalid("mode_antinodes", "must be a positive integer"));
        }
        if let Some(w) = self.transverse_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::invalid("transverse_width", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Field amplitude decay time 2/kappa.
    pub fn tau_c(&self) -> f64 {
        2.0 / self.kappa
    }
}

/// Fractions of the ensemble in the coupled and uncoupled levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Populations {
    pub s: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    /// p, m_l = 0: not coupled to the cavity mode.
    pub p_zero: f64,
}

impl Populations {
    pub const PURE_S: Populations = Populations {
        s: 1.0,
        p_plus: 0.0,
        p_minus: 0.0,
        p_zero: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_s", self.s),
            ("p_p_plus", self.p_plus),
            ("p_p_minus", self.p_minus),
            ("p_p_zero", self.p_zero),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, "fraction must lie in [0, 1]"));
            }
        }
        let sum = self.s + self.p_plus + self.p_minus + self.p_zero;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "populations",
                format!("fractions must sum to 1 (got {sum})"),
            ));
        }
        Ok(())
    }

    pub fn p_total(&self) -> f64 {
        self.p_plus + self.p_minus + self.p_zero
    }
}

/// Mean properties of a Rydberg cloud crossing the cavity.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    /// Mean atom number when the cloud is at the cavity center.
    pub n_atoms: f64,
    pub populations: Populations,
    /// Longitudinal Gaussian cloud size, m.
    pub sigma_z: f64,
    /// Transverse Gaussian cloud size, m.
    pub sigma_x: f64,
    /// Beam velocity, m/s.
    pub velocity: f64,
    /// s-state radiative lifetime, s.
    pub tau_s: f64,
    /// p-state radiative lifetime, s.
    pub tau_p: f64,
    /// Time at which the cloud enters the cavity (origin of t_c), s.
    pub entry_time: f64,
}

impl EnsembleState {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_atoms.is_finite() && self.n_atoms >= 0.0) {
            return Err(Error::invalid("n_atoms", "must be finite and >= 0"));
        }
        self.populations.validate()?;
        if self.sigma_z < 0.0 || self.sigma_x < 0.0 {
            return Err(Error::invalid("sigma_z/sigma_x", "cloud sizes must be >= 0"));
        }
        if !(self.velocity > 0.0) {
            return Err(Error::invalid("velocity", "must be > 0"));
        }
        if !(self.tau_s > 0.0) {
            return Err(Error::invalid("tau_s", "must be > 0"));
        }
        if !(self.tau_p > 0.0) {
            return Err(Error::invalid("tau_p", "must be > 0"));
        }
        if !self.entry_time.is_finite() {
            return Err(Error::invalid("entry_time", "must be finite"));
        }
        Ok(())
    }

    /// Time at which the cloud center reaches the middle of the cavity.
    pub fn center_time(&self, cavity: &CavitySpec) -> f64 {
        self.entry_time + 0.5 * cavity.length_z / self.velocity
    }

    pub fn exit_time(&self, cavity: &CavitySpec) -> f64 {
        self.entry_time + cavity.length_z / self.velocity
    }
}

/// Atom-cavity detuning sampled along the beam axis. Linear interpolation
/// between samples, held constant outside the sampled range.
#[derive(Debug, Clone, PartialEq)]
pub struct DetuningProfile {
    positions: Vec<f64>,
    values: Vec<f64>,
}

impl DetuningProfile {
    pub fn constant(value: f64) -> Self {
        DetuningProfile {
            positions: vec![0.0],
            values: vec![value],
        }
    }

    pub fn new(positions: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if positions.is_empty() || positions.len() != values.len() {
            return Err(Error::invalid(
                "detuning profile",
                "positions and values must be non-empty and of equal length",
            ));
        }
        if positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "detuning profile",
                "positions must be strictly increasing",
            ));
        }
        if values.iter().chain(&positions).any(|v| !v.is_finite()) {
            return Err(Error::invalid("detuning profile", "values must be finite"));
        }
        Ok(DetuningProfile { positions, values })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, z: f64) -> f64 {
        let n = self.positions.len();
        if n == 1 || z <= self.positions[0] {
            return self.values[0];
        }
        if z >= self.positions[n - 1] {
            return self.values[n - 1];
        }
        let i = self.positions.partition_point(|&p| p <= z) - 1;
        let (z0, z1) = (self.positions[i], self.positions[i + 1]);
        let w = (z - z0) / (z1 - z0);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    pub fn min_abs(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Same profile with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DetuningProfile {
            positions: self.positions.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// The two cavity-coupled transitions s -> p, m_l = +1 and s -> p, m_l = -1.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    pub delta_plus: DetuningProfile,
    pub delta_minus: DetuningProfile,
    /// Transition dipole moment, C m.
    pub dipole_moment: f64,
}

impl TransitionSet {
    /// Reject profiles that touch zero or come within 10 g_max sqrt(N) of it.
    pub fn check_dispersive(&self, g_max: f64, n_atoms: f64) -> Result<()> {
        let limit = 10.0 * g_max * n_atoms.max(0.0).sqrt();
        for profile in [&self.delta_plus, &self.delta_minus] {
            let m = profile.min_abs();
            if m == 0.0 {
                return Err(Error::Singular("zero atom-cavity detuning".into()));
            }
            if m <= limit {
                return Err(Error::DispersiveValidity {
                    detuning: m,
                    limit,
                });
            }
        }
        Ok(())
    }
}

fn check_in_cavity(z: f64, cavity: &CavitySpec) -> Result<()> {
    if !(0.0..=cavity.length_z).contains(&z) {
        return Err(Error::Domain(format!(
            "position z = {z} m outside cavity [0, {}] m",
            cavity.length_z
        )));
    }
    Ok(())
}

/// Normalised field amplitude |sin(p pi z / L)| along the beam axis.
pub fn mode_amplitude(z: f64, cavity: &CavitySpec) -> Result<f64> {
    check_in_cavity(z, cavity)?;
    Ok(mode_amplitude_unchecked(z, cavity))
}

#[inline]
pub(crate) fn mode_amplitude_unchecked(z: f64, cavity: &CavitySpec) -> f64 {
    let p = f64::from(cavity.mode_antinodes);
    (p * PI * z / cavity.length_z).sin().abs()
}

/// Single-atom coupling g(z) = g_max |mode(z)| sqrt(mode_correction), rad/s.
pub fn coupling(z: f64, cavity: &CavitySpec) -> Result<f64> {
    Ok(cavity.g_max * mode_amplitude(z, cavity)? * cavity.mode_correction.sqrt())
}

/// Dispersive cavity shift of `n_atoms` atoms with the given level fractions.
pub fn dispersive_shift(
    ensemble: &EnsembleState,
    g: f64,
    delta_plus: f64,
    delta_minus: f64,
) -> Result<f64> {
    let n = ensemble.n_atoms;
    let pops = &ensemble.populations;
    let limit = 10.0 * g.abs() * n.max(0.0).sqrt();
    for d in [delta_plus, delta_minus] {
        if d == 0.0 {
            return Err(Error::Singular("zero atom-cavity detuning".into()));
        }
        if d.abs() <= limit {
            return Err(Error::DispersiveValidity {
                detuning: d.abs(),
                limit,
            });
        }
    }
    Ok(shift_from_counts(
        g * g,
        n * pops.s,
        n * pops.p_plus,
        n * pops.p_minus,
        delta_plus,
        delta_minus,
    ))
}

/// chi = g^2 [ (N_p+ - N_s)/Delta_+ + (N_p- - N_s)/Delta_- ] with per-level
/// atom counts. No validity checks.
#[inline]
pub(crate) fn shift_from_counts(
    g_sq: f64,
    n_s: f64,
    n_p_plus: f64,
    n_p_minus: f64,
    delta_plus: f64,
    delta_minus: f64,
) -> f64 {
    g_sq * ((n_p_plus - n_s) / delta_plus + (n_p_minus - n_s) / delta_minus)
}

/// Dispersive shift dressed by the intracavity photon number.
pub fn power_dependent_shift(chi0: f64, n_c: f64, n_crit: f64) -> Result<f64> {
    if !(n_c >= 0.0) {
        return Err(Error::Domain(format!("photon number {n_c} must be >= 0")));
    }
    if !(n_crit > 0.0) {
        return Err(Error::Domain(format!("critical photon number {n_crit} must be > 0")));
    }
    Ok(chi0 * power_factor(n_c, n_crit))
}

#[inline]
pub(crate) fn power_factor(n_c: f64, n_crit: f64) -> f64 {
    1.0 / (1.0 + n_c / n_crit).sqrt()
}

/// n_crit = Delta^2 / (4 g^2).
pub fn critical_photon_number(g: f64, delta: f64) -> Result<f64> {
    if g == 0.0 {
        return Err(Error::Singular("zero coupling in critical photon number".into()));
    }
    Ok(delta * delta / (4.0 * g * g))
}

/// Atomic excitation of the dressed cavity-like eigenstate,
/// sin^2(arctan sqrt((n_c + 1)/n_crit)).
pub fn excited_fraction(n_c: f64, n_crit: f64) -> Result<f64> {
    if !(n_crit > 0.0) {
        return Err(Error::Domain(format!("critical photon number {n_crit} must be > 0")));
    }
    if !(n_c >= 0.0) {
        return Err(Error::Domain(format!("photon number {n_c} must be >= 0")));
    }
    // sin^2(atan x) = x^2 / (1 + x^2)
    let x2 = (n_c + 1.0) / n_crit;
    Ok(x2 / (1.0 + x2))
}

const CLOUD_NODES: usize = 257;
const CLOUD_HALF_WIDTH: f64 = 8.0;

/// Gaussian average of `f(center + u)` with u ~ N(0, sigma^2), by composite
/// trapezoid quadrature on +-8 sigma.
fn gaussian_average(center: f64, sigma: f64, f: impl Fn(f64) -> f64) -> f64 {
    if sigma == 0.0 {
        return f(center);
    }
    let h = 2.0 * CLOUD_HALF_WIDTH / (CLOUD_NODES - 1) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..CLOUD_NODES {
        let u = -CLOUD_HALF_WIDTH + h * i as f64;
        let w = (-0.5 * u * u).exp() * if i == 0 || i == CLOUD_NODES - 1 { 0.5 } else { 1.0 };
        num += w * f(center + sigma * u);
        den += w;
    }
    num / den
}

/// Longitudinal mode intensity, zero outside the cavity.
fn longitudinal_intensity(z: f64, cavity: &CavitySpec) -> f64 {
    if (0.0..=cavity.length_z).contains(&z) {
        mode_amplitude_unchecked(z, cavity).powi(2)
    } else {
        0.0
    }
}

/// Transverse mode intensity relative to the axis; the fundamental
/// cos(pi x / a) profile across a width `a`.
fn transverse_intensity(x: f64, width: Option<f64>) -> f64 {
    match width {
        None => 1.0,
        Some(a) if x.abs() <= 0.5 * a => (PI * x / a).cos().powi(2),
        Some(_) => 0.0,
    }
}

/// g^2 averaged over a Gaussian cloud centred at `z` on the beam axis.
pub fn cloud_averaged_coupling_sq(z: f64, sigma_z: f64, sigma_x: f64, cavity: &CavitySpec) -> f64 {
    let long = gaussian_average(z, sigma_z, |zz| longitudinal_intensity(zz, cavity));
    let trans = gaussian_average(0.0, sigma_x, |x| transverse_intensity(x, cavity.transverse_width));
    cavity.g_max * cavity.g_max * cavity.mode_correction * long * trans
}
