//! Coherence lengths of thermal and feedback-damped Gaussian states.
//!
//! Angular and linear frames share the same code: use (I, θ_zp) in place of
//! (m, x_zp) for the angular case.

use serde::{Deserialize, Serialize};

use crate::constants::HBAR;
use crate::error::{require_nonnegative, require_positive, Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Angular,
    Linear,
}

/// Second moments of a zero-mean Gaussian state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub vxx: f64,
    pub vpp: f64,
    /// Symmetrised cross-covariance ⟨xp + px⟩/2.
    pub vxp: f64,
    pub frame: Frame,
}

impl GaussianState {
    pub fn new(vxx: f64, vpp: f64, vxp: f64, frame: Frame) -> Result<Self> {
        let s = GaussianState { vxx, vpp, vxp, frame };
        s.validate()?;
        Ok(s)
    }

    /// Thermal state of a mode with zero-point width `x_zp`, frequency
    /// `omega` and occupation `n_th`.
    pub fn thermal(x_zp: f64, omega: f64, n_th: f64, frame: Frame) -> Result<Self> {
        require_positive("x_zp", x_zp)?;
        require_positive("omega", omega)?;
        require_nonnegative("n_th", n_th)?;
        let m = HBAR / (2.0 * omega * x_zp * x_zp);
        let vxx = x_zp * x_zp * (2.0 * n_th + 1.0);
        Self::new(vxx, m * m * omega * omega * vxx, 0.0, frame)
    }

    pub fn determinant(&self) -> f64 {
        self.vxx * self.vpp - self.vxp * self.vxp
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("vxx", self.vxx)?;
        require_positive("vpp", self.vpp)?;
        if !self.vxp.is_finite() {
            return Err(Error::invalid("vxp", "not finite"));
        }
        let bound = 0.25 * HBAR * HBAR;
        if self.determinant() < bound * (1.0 - 1e-9) {
            return Err(Error::invalid(
                "state",
                format!("violates the uncertainty bound: det = {:.6e} < {:.6e}", self.determinant(), bound),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub xi: f64,
    pub delta_x: f64,
}

/// ξ = x_zp/√(2n+1), Δx = x_zp·√(2n+1).
pub fn thermal_coherence(x_zp: f64, n_th: f64) -> Result<Coherence> {
    require_positive("x_zp", x_zp)?;
    require_nonnegative("n_th", n_th)?;
    let k = (2.0 * n_th + 1.0).sqrt();
    Ok(Coherence {
        xi: x_zp / k,
        delta_x: x_zp * k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackCoherence {
    pub xi_theta: f64,
    /// Suppression factor (1 + Q_eff⁻²·fb_fraction)^(−1/2).
    pub s: f64,
}

/// Coherence angle s·θ_zp/√(2n+1) of a feedback-cooled mode.
pub fn feedback_coherence_angle(theta_zp: f64, n: f64, q_eff: f64, fb_fraction: f64) -> Result<FeedbackCoherence> {
    require_positive("theta_zp", theta_zp)?;
    require_nonnegative("n", n)?;
    require_positive("q_eff", q_eff)?;
    if !(0.0..=1.0).contains(&fb_fraction) {
        return Err(Error::invalid("fb_fraction", "must lie in [0, 1]"));
    }
    let s = (1.0 + fb_fraction / (q_eff * q_eff)).powf(-0.5);
    Ok(FeedbackCoherence {
        xi_theta: s * theta_zp / (2.0 * n + 1.0).sqrt(),
        s,
    })
}

/// Rates of the feedback master equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionRates {
    /// Thermal momentum diffusion, p²/s.
    pub d_th: f64,
    /// Measurement back-action momentum diffusion, p²/s.
    pub d_m: f64,
    /// Feedback-imprinted position diffusion, x²/s.
    pub d_fb: f64,
    pub gamma_eff: f64,
    pub omega: f64,
    pub mass_like: f64,
}

impl DiffusionRates {
    /// Thermal diffusion γ0·ħ²(2n_th+1)/(4x_zp²) for a bath loss rate
    /// `gamma0`.
    pub fn thermal_diffusion(gamma0: f64, n_th: f64, x_zp: f64) -> f64 {
        gamma0 * HBAR * HBAR * (2.0 * n_th + 1.0) / (4.0 * x_zp * x_zp)
    }

    /// Feedback diffusion ħ²γ_eff²/(16·D_m) scaled by 1/efficiency.
    pub fn feedback_diffusion(gamma_eff: f64, d_m: f64, efficiency: f64) -> Result<f64> {
        require_positive("d_m", d_m)?;
        require_positive("efficiency", efficiency)?;
        if efficiency > 1.0 {
            return Err(Error::invalid("efficiency", "must not exceed 1"));
        }
        Ok(HBAR * HBAR * gamma_eff * gamma_eff / (16.0 * d_m * efficiency))
    }

    pub fn validate(&self) -> Result<()> {
        require_nonnegative("d_th", self.d_th)?;
        require_nonnegative("d_m", self.d_m)?;
        require_nonnegative("d_fb", self.d_fb)?;
        require_positive("omega", self.omega)?;
        require_positive("mass_like", self.mass_like)?;
        if !(self.gamma_eff.is_finite() && self.gamma_eff > 0.0) {
            return Err(Error::Domain(format!(
                "gamma_eff = {} admits no steady state",
                self.gamma_eff
            )));
        }
        Ok(())
    }

    /// Zero-point width √(ħ/(2mΩ)).
    pub fn x_zp(&self) -> f64 {
        (HBAR / (2.0 * self.mass_like * self.omega)).sqrt()
    }
}

/// Which damping mechanism the master equation describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MasterEquation {
    /// Momentum damping by a thermal bath.
    ThermalBath,
    /// Cold damping by position feedback with imprinted detection noise.
    Feedback,
}

/// Linear equations for (⟨x²⟩, ⟨p²⟩, ⟨xp+px⟩/2): dv/dt = A·v + b.
#[derive(Debug, Clone, Copy)]
pub struct MomentSystem {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
}

impl MomentSystem {
    pub fn new(rates: &DiffusionRates, kind: MasterEquation) -> Result<Self> {
        rates.validate()?;
        let (m, w, g) = (rates.mass_like, rates.omega, rates.gamma_eff);
        let d = rates.d_th + rates.d_m;
        let mw2 = m * w * w;
        Ok(match kind {
            MasterEquation::Feedback => MomentSystem {
                a: [[-2.0 * g, 0.0, 2.0 / m], [0.0, 0.0, -2.0 * mw2], [-mw2, 1.0 / m, -g]],
                b: [2.0 * rates.d_fb, 2.0 * d, 0.0],
            },
            MasterEquation::ThermalBath => MomentSystem {
                a: [[0.0, 0.0, 2.0 / m], [0.0, -2.0 * g, -2.0 * mw2], [-mw2, 1.0 / m, -g]],
                b: [2.0 * rates.d_fb, 2.0 * d, 0.0],
            },
        })
    }

    pub fn derivative(&self, v: &[f64; 3]) -> [f64; 3] {
        let mut out = self.b;
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..3 {
                *o += self.a[i][j] * v[j];
            }
        }
        out
    }

    /// Classical RK4 from `v0` over `t` seconds in `steps` steps.
    pub fn integrate(&self, v0: [f64; 3], t: f64, steps: usize) -> [f64; 3] {
        let h = t / steps as f64;
        let mut v = v0;
        let add = |v: &[f64; 3], k: &[f64; 3], s: f64| [v[0] + s * k[0], v[1] + s * k[1], v[2] + s * k[2]];
        for _ in 0..steps {
            let k1 = self.derivative(&v);
            let k2 = self.derivative(&add(&v, &k1, h / 2.0));
            let k3 = self.derivative(&add(&v, &k2, h / 2.0));
            let k4 = self.derivative(&add(&v, &k3, h));
            for i in 0..3 {
                v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        v
    }
}

/// Algebraic steady state of the feedback master equation.
pub fn steady_state_moments(rates: &DiffusionRates) -> Result<GaussianState> {
    rates.validate()?;
    let (m, w, g) = (rates.mass_like, rates.omega, rates.gamma_eff);
    let d = rates.d_th + rates.d_m;
    let c = d / (m * w * w);
    let vxx = (d / (m * m * w * w) + rates.d_fb) / g;
    let vpp = m * m * w * w * vxx + g * d / (w * w);
    GaussianState::new(vxx, vpp, c, Frame::Angular)
}

/// Algebraic steady state of the thermal-bath master equation.
pub fn thermal_bath_steady_state(rates: &DiffusionRates) -> Result<GaussianState> {
    rates.validate()?;
    let (m, w, g) = (rates.mass_like, rates.omega, rates.gamma_eff);
    if rates.d_fb != 0.0 {
        return Err(Error::invalid("d_fb", "the thermal-bath equation has no position diffusion"));
    }
    let vpp = (rates.d_th + rates.d_m) / g;
    GaussianState::new(vpp / (m * m * w * w), vpp, 0.0, Frame::Angular)
}

/// Closed-form coherence of the feedback steady state: the thermal-state
/// result at the occupation implied by ⟨x²⟩, reduced by the suppression
/// factor for the feedback share of ⟨x²⟩. First order in that share.
pub fn feedback_closed_form(rates: &DiffusionRates) -> Result<Coherence> {
    rates.validate()?;
    let (m, w, g) = (rates.mass_like, rates.omega, rates.gamma_eff);
    let x_zp = rates.x_zp();
    let passive = (rates.d_th + rates.d_m) / (m * m * w * w * g);
    let imprinted = rates.d_fb / g;
    let vxx = passive + imprinted;
    let a = vxx / (x_zp * x_zp);
    let q = w / g;
    let fc = feedback_coherence_angle(x_zp, (a - 1.0) / 2.0, q, imprinted / vxx)?;
    Ok(Coherence {
        xi: fc.xi_theta,
        delta_x: vxx.sqrt(),
    })
}

/// ξ = (ħ/2)·√(V_xx/det V), Δx = √V_xx.
pub fn coherence_from_covariance(state: &GaussianState) -> Result<Coherence> {
    state.validate()?;
    Ok(Coherence {
        xi: 0.5 * HBAR * (state.vxx / state.determinant()).sqrt(),
        delta_x: state.vxx.sqrt(),
    })
}

/// ξ by direct quadrature of ∫∫|ρ(x,x')|²(x−x')²/2 over ∫∫|ρ(x,x')|² on a
/// square grid spanning `grid_extent` position standard deviations.
///
/// The Gaussian density matrix has |ρ|² ∝ exp(−X²/V_xx − Δ²·det/(ħ²V_xx))
/// with X = (x+x')/2 and Δ = x − x'; its phase does not enter.
pub fn coherence_numerical_oracle(state: &GaussianState, grid_extent: f64, grid_points: usize) -> Result<f64> {
    coherence_numerical_oracle_with(state, grid_extent, grid_points, Execution::default())
}

pub fn coherence_numerical_oracle_with(
    state: &GaussianState,
    grid_extent: f64,
    grid_points: usize,
    exec: Execution,
) -> Result<f64> {
    state.validate()?;
    if !(grid_extent >= 8.0) {
        return Err(Error::invalid("grid_extent", "must span at least 8 standard deviations"));
    }
    if grid_points < 256 {
        return Err(Error::invalid("grid_points", "must be at least 256"));
    }
    let sd = state.vxx.sqrt();
    let half = 0.5 * grid_extent * sd;
    let h = 2.0 * half / (grid_points - 1) as f64;
    let ax = 1.0 / state.vxx;
    let ad = state.determinant() / (HBAR * HBAR * state.vxx);
    let rows = exec.map_range(grid_points, |i| {
        let x = -half + i as f64 * h;
        let wi = if i == 0 || i == grid_points - 1 { 0.5 } else { 1.0 };
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..grid_points {
            let xp = -half + j as f64 * h;
            let wj = if j == 0 || j == grid_points - 1 { 0.5 } else { 1.0 };
            let big_x = 0.5 * (x + xp);
            let d = x - xp;
            let r2 = (-(ax * big_x * big_x) - ad * d * d).exp() * wj;
            num += r2 * d * d * 0.5;
            den += r2;
        }
        (num * wi, den * wi)
    });
    let (num, den) = rows.iter().fold((0.0, 0.0), |(a, b), (n, d)| (a + n, b + d));
    Ok((num / den).sqrt())
}
