//! Oscillator parameters and the quantities derived from them.
//!
//! Frequencies are stored in Hz; angular frequencies are formed internally.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B};
use crate::error::{require_nonnegative, require_positive, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DampingLaw {
    /// Loss rate γ(ω) = γ0·ω0/ω (constant loss angle).
    #[default]
    Structural,
    /// Frequency-independent loss rate γ0.
    Viscous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorParams {
    /// Moment of inertia, kg·m².
    pub inertia: f64,
    /// Bare resonance, Hz.
    pub f0: f64,
    /// Bare quality factor.
    pub q0: f64,
    /// Bath temperature, K.
    pub t0: f64,
    #[serde(default)]
    pub damping_law: DampingLaw,
    /// Distance from the rotation axis used to convert angles to lengths, m.
    pub lever_arm: f64,
}

impl OscillatorParams {
    /// The 1 mg torsion pendulum: 3.3e-13 kg·m², 6.72 Hz, Q = 8.6e4, room
    /// temperature, 1 mm lever arm.
    pub fn reference() -> Self {
        OscillatorParams {
            inertia: 3.3e-13,
            f0: 6.72,
            q0: 8.6e4,
            t0: 295.0,
            damping_law: DampingLaw::Structural,
            lever_arm: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("inertia", self.inertia)?;
        require_positive("f0", self.f0)?;
        require_positive("q0", self.q0)?;
        require_nonnegative("t0", self.t0)?;
        require_positive("lever_arm", self.lever_arm)?;
        let g0 = self.gamma0();
        if !(g0.is_finite() && g0 > 0.0) {
            return Err(Error::invalid("q0", "bare damping rate is not finite and positive"));
        }
        Ok(())
    }

    pub fn omega0(&self) -> f64 {
        2.0 * PI * self.f0
    }

    pub fn gamma0(&self) -> f64 {
        self.omega0() / self.q0
    }

    /// High-temperature occupation k_B·T0/(ħω) of a mode at `omega`.
    pub fn occupation_at(&self, omega: f64) -> f64 {
        K_B * self.t0 / (HBAR * omega)
    }

    /// Zero-point angle √(ħ/(2Iω)) of a mode at `omega`.
    pub fn theta_zp_at(&self, omega: f64) -> f64 {
        (HBAR / (2.0 * self.inertia * omega)).sqrt()
    }

    /// Equipartition RMS angle √(k_B·T0/(Iω²)) of a mode at `omega`.
    pub fn equipartition_angle_at(&self, omega: f64) -> f64 {
        (K_B * self.t0 / (self.inertia * omega * omega)).sqrt()
    }

    /// Ring-down time constant 2Q0/ω0.
    pub fn ringdown_tau(&self) -> f64 {
        2.0 * self.q0 / self.omega0()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub omega0: f64,
    pub gamma0: f64,
    /// Thermal occupation at the effective resonance.
    pub n_th: f64,
    pub theta_zp: f64,
    pub x_zp: f64,
    pub equipartition_angle: f64,
    pub q_app: f64,
    pub gamma_app: f64,
    pub omega_eff: f64,
    pub g_gain: f64,
    pub omega_lead_min: f64,
}

/// Derives the reference-mode quantities for a loop that shifts the
/// resonance to `f_eff` and damps it to `q_eff_target`.
///
/// Occupation, zero-point angle and equipartition angle refer to the mode at
/// `f_eff`; pass `f_eff = f0` for the free pendulum.
pub fn derive_all(params: &OscillatorParams, f_eff: f64, q_eff_target: f64) -> Result<DerivedQuantities> {
    params.validate()?;
    require_positive("f_eff", f_eff)?;
    require_positive("q_eff_target", q_eff_target)?;
    if f_eff < params.f0 {
        return Err(Error::Domain(format!(
            "f_eff = {f_eff} Hz is below f0 = {} Hz; the optical spring only stiffens",
            params.f0
        )));
    }
    let omega0 = params.omega0();
    let gamma0 = params.gamma0();
    let omega_eff = 2.0 * PI * f_eff;
    let ratio = f_eff / params.f0;
    let theta_zp = params.theta_zp_at(omega_eff);
    Ok(DerivedQuantities {
        omega0,
        gamma0,
        n_th: params.occupation_at(omega_eff),
        theta_zp,
        x_zp: theta_zp * params.lever_arm,
        equipartition_angle: params.equipartition_angle_at(omega_eff),
        q_app: params.q0 * ratio * ratio,
        gamma_app: gamma0 / ratio,
        omega_eff,
        g_gain: ratio * ratio - 1.0,
        omega_lead_min: omega_eff * q_eff_target * (1.0 - 1.0 / (ratio * ratio)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_point() {
        let p = OscillatorParams::reference();
        let d = derive_all(&p, p.f0, 1.0).unwrap();
        assert_eq!(d.g_gain, 0.0);
        assert_eq!(d.q_app, p.q0);
        assert_eq!(d.gamma_app, d.gamma0);
        assert_eq!(d.omega_lead_min, 0.0);
    }

    #[test]
    fn rejects_softening() {
        let p = OscillatorParams::reference();
        assert!(matches!(derive_all(&p, 5.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = OscillatorParams::reference();
        p.inertia = -1.0;
        assert!(p.validate().is_err());
        let mut p = OscillatorParams::reference();
        p.t0 = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn omega_lead_min_inverts_closed_loop_q() {
        // With the lead-only loop, γ_eff = ω0²g/ω_lead + γ(ω_eff); dropping the
        // tiny mechanical term, Q_eff = ω_eff/γ_eff.
        let p = OscillatorParams::reference();
        let d = derive_all(&p, 18.0, 0.58).unwrap();
        let gamma_eff = d.omega0.powi(2) * d.g_gain / d.omega_lead_min;
        assert!((d.omega_eff / gamma_eff - 0.58).abs() < 1e-12);
    }
}
