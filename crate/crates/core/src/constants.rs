//! CODATA 2018 physical constants (SI). Every module reads them from here.

use std::f64::consts::PI;

/// Bohr magneton (J/T).
pub const MU_B: f64 = 9.274_010_078_3e-24;
/// Planck constant (J s).
pub const H: f64 = 6.626_070_15e-34;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = H / (2.0 * PI);
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380_649e-23;
/// Vacuum permeability (T m / A).
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Bohr magneton over hbar, i.e. the angular gyromagnetic ratio of g = 1 (rad/s/T).
pub const MU_B_OVER_HBAR: f64 = MU_B / HBAR;

pub const TWO_PI: f64 = 2.0 * PI;

/// cm^-3 to m^-3.
pub const PER_CM3: f64 = 1e6;

/// Converts an angular gyromagnetic ratio (rad/s/T) to a dimensionless g-factor.
pub fn gamma_to_g(gamma: f64) -> f64 {
    gamma / MU_B_OVER_HBAR
}

/// Converts a g-factor to an angular gyromagnetic ratio (rad/s/T).
pub fn g_to_gamma(g: f64) -> f64 {
    g * MU_B_OVER_HBAR
}

/// Converts a frequency in Hz to angular frequency.
pub fn hz_to_angular(f: f64) -> f64 {
    TWO_PI * f
}
