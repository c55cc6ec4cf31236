//! Physical constants and unit conversions.
//!
//! Internally every energy is an angular frequency in rad/s with ħ = 1.

use std::f64::consts::PI;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Reduced flux quantum φ₀ = ħ/(2e).
pub const PHI0_REDUCED: f64 = HBAR / (2.0 * E_CHARGE);

pub const NS: f64 = 1e-9;
pub const US: f64 = 1e-6;

pub fn ghz(f: f64) -> f64 {
    2.0 * PI * f * 1e9
}

pub fn mhz(f: f64) -> f64 {
    2.0 * PI * f * 1e6
}

pub fn to_ghz(w: f64) -> f64 {
    w / (2.0 * PI * 1e9)
}

pub fn to_mhz(w: f64) -> f64 {
    w / (2.0 * PI * 1e6)
}

/// φ₀²/(L ħ) for an inductance in nH.
pub fn inductive_rate(l_nh: f64) -> f64 {
    PHI0_REDUCED * PHI0_REDUCED / (l_nh * 1e-9 * HBAR)
}

/// C φ₀²/ħ for a capacitance in fF.
pub fn reduced_capacitance(c_ff: f64) -> f64 {
    c_ff * 1e-15 * PHI0_REDUCED * PHI0_REDUCED / HBAR
}
