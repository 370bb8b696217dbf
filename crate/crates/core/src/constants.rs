//! Physical constants (CODATA, six significant digits).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Gravitational constant, m³·kg⁻¹·s⁻².
    pub g: f64,
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Speed of light, m/s.
    pub c: f64,
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = PhysicalConstants {
        g: 6.67430e-11,
        hbar: 1.05457e-34,
        k_b: 1.38065e-23,
        c: 2.99792e8,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA
    }
}

pub const G: f64 = PhysicalConstants::CODATA.g;
pub const HBAR: f64 = PhysicalConstants::CODATA.hbar;
pub const K_B: f64 = PhysicalConstants::CODATA.k_b;
pub const C: f64 = PhysicalConstants::CODATA.c;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive() {
        let c = PhysicalConstants::CODATA;
        for v in [c.g, c.hbar, c.k_b, c.c] {
            assert!(v > 0.0 && v.is_finite());
        }
    }
}
