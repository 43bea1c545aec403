//! Physical constants (CODATA 2018 exact/recommended values) and unit helpers.

use std::f64::consts::PI;

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Bohr radius, m.
pub const BOHR_RADIUS: f64 = 5.291_772_109_03e-11;
/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = PLANCK / (2.0 * PI);

/// Cyclic frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}

/// Angular frequency (rad/s) to cyclic frequency (Hz).
#[inline]
pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Transition dipole moment in units of e a0 to C m.
#[inline]
pub fn dipole_from_atomic_units(d_ea0: f64) -> f64 {
    d_ea0 * ELEMENTARY_CHARGE * BOHR_RADIUS
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y <= -PI {
        y += 2.0 * PI;
    } else if y > PI {
        y -= 2.0 * PI;
    }
    y
}
