//! Analytic frequency-domain response of the oscillator and its feedback
//! loop.
//!
//! All public functions take frequencies in Hz. PSDs are one-sided.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B};
use crate::error::{require_nonnegative, require_positive, Error, Result};
use crate::exec::Execution;
use crate::numerics::{integrate_with_breakpoints, logspace, QuadTol};
use crate::physcore::{DampingLaw, OscillatorParams};
use crate::spectrum::SpectrumRecord;

/// Half-width at half-maximum of parasitic detection lines, Hz.
pub const PARASITIC_LINE_HWHM: f64 = 0.02;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingModel {
    pub law: DampingLaw,
    pub gamma0: f64,
    pub omega0: f64,
}

impl DampingModel {
    pub fn from_params(params: &OscillatorParams) -> Self {
        DampingModel {
            law: params.damping_law,
            gamma0: params.gamma0(),
            omega0: params.omega0(),
        }
    }

    pub fn with_law(params: &OscillatorParams, law: DampingLaw) -> Self {
        DampingModel {
            law,
            ..Self::from_params(params)
        }
    }

    /// Loss rate at angular frequency `omega`.
    pub fn gamma_at(&self, omega: f64) -> Result<f64> {
        match self.law {
            DampingLaw::Viscous => Ok(self.gamma0),
            DampingLaw::Structural => {
                if omega > 0.0 {
                    Ok(self.gamma0 * self.omega0 / omega)
                } else {
                    Err(Error::Domain(
                        "structural damping is undefined at zero frequency".into(),
                    ))
                }
            }
        }
    }
}

/// Lead-lag loop filter G(ω) = (g/χ(0))·(1 + iω/ω_lead)/(1 + iω/ω_lag).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopFilter {
    pub g: f64,
    pub omega_lead: f64,
    pub omega_lag: f64,
    /// Include the lag pole; `false` gives the lead-only approximation.
    #[serde(default = "default_exact")]
    pub exact: bool,
}

fn default_exact() -> bool {
    true
}

/// Default lag corner, rad/s.
pub const DEFAULT_OMEGA_LAG: f64 = 2.0 * PI * 1.5e3;

impl LoopFilter {
    /// Filter placing the closed-loop resonance at `f_eff` with quality factor
    /// `q_eff`, using the minimum lead corner.
    pub fn for_target(params: &OscillatorParams, f_eff: f64, q_eff: f64, omega_lag: f64) -> Result<Self> {
        let d = crate::physcore::derive_all(params, f_eff, q_eff)?;
        let f = LoopFilter {
            g: d.g_gain,
            omega_lead: if d.g_gain > 0.0 { d.omega_lead_min } else { omega_lag * 1e-3 },
            omega_lag,
            exact: true,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn open_loop() -> Self {
        LoopFilter {
            g: 0.0,
            omega_lead: 1.0,
            omega_lag: DEFAULT_OMEGA_LAG,
            exact: true,
        }
    }

    pub fn lead_only(self) -> Self {
        LoopFilter { exact: false, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        require_nonnegative("g", self.g)?;
        require_positive("omega_lead", self.omega_lead)?;
        require_positive("omega_lag", self.omega_lag)?;
        if self.exact && self.omega_lead >= self.omega_lag {
            return Err(Error::invalid("omega_lead", "must be below omega_lag"));
        }
        Ok(())
    }

    /// ω0·√(1 + g).
    pub fn omega_eff(&self, params: &OscillatorParams) -> f64 {
        params.omega0() * (1.0 + self.g).sqrt()
    }

    /// Feedback damping rate ω0²·g/ω_lead.
    pub fn gamma_fb(&self, params: &OscillatorParams) -> f64 {
        params.omega0().powi(2) * self.g / self.omega_lead
    }

    /// Closed-loop quality factor at the shifted resonance.
    pub fn q_eff(&self, params: &OscillatorParams, damping: &DampingModel) -> Result<f64> {
        let we = self.omega_eff(params);
        Ok(we / (self.gamma_fb(params) + damping.gamma_at(we)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralLine {
    pub freq: f64,
    /// Peak PSD, rad²/Hz.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBudget {
    /// White detection (imprecision) level, rad²/Hz.
    pub detection_white: f64,
    /// Frequency below which the 1/f detection term exceeds the white level, Hz.
    pub detection_pink_knee: f64,
    /// White excess torque noise, (N·m)²/Hz.
    pub vibration_white_torque: f64,
    /// White radiation-pressure torque noise, (N·m)²/Hz.
    #[serde(default)]
    pub radiation_pressure_torque: f64,
    #[serde(default)]
    pub parasitic_lines: Vec<SpectralLine>,
}

impl NoiseBudget {
    /// Thermal noise only.
    pub fn thermal_only() -> Self {
        NoiseBudget {
            detection_white: 0.0,
            detection_pink_knee: 0.0,
            vibration_white_torque: 0.0,
            radiation_pressure_torque: 0.0,
            parasitic_lines: Vec::new(),
        }
    }

    /// Levels calibrated so that the 18 Hz, Q_eff = 0.58 configuration of the
    /// reference pendulum reaches ≈238 μK over 8–28 Hz with thermal noise
    /// dominant throughout the band.
    pub fn calibrated() -> Self {
        NoiseBudget {
            detection_white: 3.55e-21,
            detection_pink_knee: 5.0,
            vibration_white_torque: 2.07e-37,
            radiation_pressure_torque: 0.0,
            parasitic_lines: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_nonnegative("detection_white", self.detection_white)?;
        require_nonnegative("detection_pink_knee", self.detection_pink_knee)?;
        require_nonnegative("vibration_white_torque", self.vibration_white_torque)?;
        require_nonnegative("radiation_pressure_torque", self.radiation_pressure_torque)?;
        for l in &self.parasitic_lines {
            require_positive("parasitic_lines.freq", l.freq)?;
            require_nonnegative("parasitic_lines.amplitude", l.amplitude)?;
        }
        Ok(())
    }

    /// Detection noise S_det(f) = white·(1 + knee/f) plus Lorentzian lines.
    pub fn detection_psd(&self, f: f64) -> f64 {
        let pink = if self.detection_pink_knee > 0.0 {
            self.detection_white * self.detection_pink_knee / f
        } else {
            0.0
        };
        let lines: f64 = self
            .parasitic_lines
            .iter()
            .map(|l| l.amplitude / (1.0 + ((f - l.freq) / PARASITIC_LINE_HWHM).powi(2)))
            .sum();
        self.detection_white + pink + lines
    }
}

fn omega_of(f: f64) -> f64 {
    2.0 * PI * f
}

fn check_freq(f: f64) -> Result<()> {
    if f.is_finite() && f >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("f", format!("frequency must be finite and >= 0, got {f}")))
    }
}

/// Mechanical susceptibility χ(ω) = 1/(I(ω0² − ω² + iωγ(ω))), rad/(N·m).
pub fn chi_mech(f: f64, params: &OscillatorParams, damping: &DampingModel) -> Result<Complex64> {
    check_freq(f)?;
    let w = omega_of(f);
    let gamma = damping.gamma_at(w)?;
    let w0 = damping.omega0;
    Ok(1.0 / (params.inertia * Complex64::new(w0 * w0 - w * w, w * gamma)))
}

/// Thermal torque PSD 4k_B·T0·I·γ(ω), (N·m)²/Hz.
pub fn thermal_torque_psd(f: f64, params: &OscillatorParams, damping: &DampingModel) -> Result<f64> {
    check_freq(f)?;
    Ok(4.0 * K_B * params.t0 * params.inertia * damping.gamma_at(omega_of(f))?)
}

/// Thermal angle PSD |χ|²·S_th.
pub fn thermal_angle_psd(f: f64, params: &OscillatorParams, damping: &DampingModel) -> Result<f64> {
    Ok(chi_mech(f, params, damping)?.norm_sqr() * thermal_torque_psd(f, params, damping)?)
}

/// Zero-point angle PSD: the thermal angle PSD divided by 2n_th + 1, with
/// n_th taken at the bare resonance.
pub fn zp_angle_psd(f: f64, params: &OscillatorParams, damping: &DampingModel) -> Result<f64> {
    let n_th = params.occupation_at(damping.omega0);
    Ok(thermal_angle_psd(f, params, damping)? / (2.0 * n_th + 1.0))
}

/// Loop filter transfer G(ω), N·m/rad.
pub fn loop_filter_g(f: f64, filter: &LoopFilter, params: &OscillatorParams) -> Complex64 {
    let w = omega_of(f);
    let dc = filter.g * params.inertia * params.omega0().powi(2);
    let lead = 1.0 + I * (w / filter.omega_lead);
    if filter.exact {
        dc * lead / (1.0 + I * (w / filter.omega_lag))
    } else {
        dc * lead
    }
}

/// Closed-loop susceptibility χ/(1 + Gχ).
pub fn chi_eff(f: f64, filter: &LoopFilter, params: &OscillatorParams, damping: &DampingModel) -> Result<Complex64> {
    let chi = chi_mech(f, params, damping)?;
    Ok(chi / (1.0 + loop_filter_g(f, filter, params) * chi))
}

/// Closed-loop susceptibility in resonator form
/// 1/(I(ω_eff² − ω² + iωγ_eff)) with γ_eff = ω0²g/ω_lead + γ(ω). Equal to
/// [`chi_eff`] for the lead-only filter.
pub fn chi_eff_closed_form(
    f: f64,
    filter: &LoopFilter,
    params: &OscillatorParams,
    damping: &DampingModel,
) -> Result<Complex64> {
    check_freq(f)?;
    let w = omega_of(f);
    let we = filter.omega_eff(params);
    let ge = filter.gamma_fb(params) + damping.gamma_at(w)?;
    Ok(1.0 / (params.inertia * Complex64::new(we * we - w * w, w * ge)))
}

/// Imprecision transfer (ω_eff² − ω0² + iωγ_eff)/(ω_eff² − ω² + iωγ_eff),
/// with γ_eff including the mechanical loss of `params.damping_law`.
pub fn chi_imp(f: f64, filter: &LoopFilter, params: &OscillatorParams) -> Result<Complex64> {
    check_freq(f)?;
    let damping = DampingModel::from_params(params);
    let w = omega_of(f);
    let we = filter.omega_eff(params);
    let w0 = params.omega0();
    let ge = filter.gamma_fb(params) + damping.gamma_at(w)?;
    Ok(Complex64::new(we * we - w0 * w0, w * ge) / Complex64::new(we * we - w * w, w * ge))
}

/// Imprecision transfer from the composed loop, G·χ/(1 + Gχ).
pub fn imprecision_transfer(
    f: f64,
    filter: &LoopFilter,
    params: &OscillatorParams,
    damping: &DampingModel,
) -> Result<Complex64> {
    Ok(loop_filter_g(f, filter, params) * chi_eff(f, filter, params, damping)?)
}

/// Closed-loop angle PSD split by source. `total` is the sum of the parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePsdBreakdown {
    pub thermal: f64,
    pub imprinted: f64,
    pub vibration: f64,
    pub radiation: f64,
    pub total: f64,
}

/// S_θθ = |χ_eff|²(S_th + S_vib + S_rp) + |Gχ_eff|²·S_det.
pub fn closed_loop_angle_psd(
    f: f64,
    filter: &LoopFilter,
    params: &OscillatorParams,
    damping: &DampingModel,
    budget: &NoiseBudget,
) -> Result<AnglePsdBreakdown> {
    let chi = chi_mech(f, params, damping)?;
    let g = loop_filter_g(f, filter, params);
    let ce = chi / (1.0 + g * chi);
    let ce2 = ce.norm_sqr();
    let thermal = ce2 * thermal_torque_psd(f, params, damping)?;
    let imprinted = (g * ce).norm_sqr() * budget.detection_psd(f);
    let vibration = ce2 * budget.vibration_white_torque;
    let radiation = ce2 * budget.radiation_pressure_torque;
    Ok(AnglePsdBreakdown {
        thermal,
        imprinted,
        vibration,
        radiation,
        total: thermal + imprinted + vibration + radiation,
    })
}

/// [`closed_loop_angle_psd`] on a grid.
pub fn closed_loop_spectrum(
    freqs: &[f64],
    filter: &LoopFilter,
    params: &OscillatorParams,
    damping: &DampingModel,
    budget: &NoiseBudget,
    exec: Execution,
) -> Result<Vec<AnglePsdBreakdown>> {
    exec.try_map(freqs, |&f| closed_loop_angle_psd(f, filter, params, damping, budget))
}

/// Free-running angle PSD: thermal and excess torque through χ plus the
/// detection floor.
pub fn free_running_angle_psd(
    f: f64,
    params: &OscillatorParams,
    damping: &DampingModel,
    budget: &NoiseBudget,
) -> Result<f64> {
    let chi2 = chi_mech(f, params, damping)?.norm_sqr();
    let torque = thermal_torque_psd(f, params, damping)?
        + budget.vibration_white_torque
        + budget.radiation_pressure_torque;
    Ok(chi2 * torque + budget.detection_psd(f))
}

/// Divides an angle spectrum by |χ|² to refer it to torque.
pub fn torque_referred_psd(
    s_theta: &SpectrumRecord,
    params: &OscillatorParams,
    damping: &DampingModel,
) -> Result<SpectrumRecord> {
    s_theta.validate()?;
    if s_theta.freqs[0] <= 0.0 {
        return Err(Error::invalid("freqs", "torque referral needs f > 0"));
    }
    let psd = s_theta
        .freqs
        .iter()
        .zip(&s_theta.psd)
        .map(|(&f, &s)| Ok(s / chi_mech(f, params, damping)?.norm_sqr()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumRecord {
        freqs: s_theta.freqs.clone(),
        psd,
        unit: "(N*m)^2/Hz".into(),
        segments: s_theta.segments,
        dof: s_theta.dof,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// 180° plus the loop phase at the unity-gain point (or at the maximum
    /// gain point when there is no crossing), degrees.
    pub phase_margin_deg: f64,
    /// Highest unity-gain frequency, Hz.
    pub unity_gain_hz: Option<f64>,
    pub stable: bool,
    pub diagnostic: Option<String>,
}

/// Open-loop phase arg χ + atan(ω/ω_lead) − atan(ω/ω_lag), radians,
/// evaluated without wrapping.
fn loop_phase(w: f64, filter: &LoopFilter, damping: &DampingModel) -> Result<f64> {
    let w0 = damping.omega0;
    let gamma = damping.gamma_at(w)?;
    // arg of 1/(a + ib) with b > 0 lies in (-π, 0).
    let arg_chi = -(w * gamma).atan2(w0 * w0 - w * w);
    let mut phase = arg_chi + (w / filter.omega_lead).atan();
    if filter.exact {
        phase -= (w / filter.omega_lag).atan();
    }
    Ok(phase)
}

/// Phase margin of the loop G·χ at its highest unity-gain crossing.
///
/// The loop is declared stable when the margin is positive and the crossing
/// lies below the lag corner. Without any crossing the small-gain condition
/// holds, the loop is reported stable, and the margin at the maximum-gain
/// point is returned with a diagnostic.
pub fn stability_margin(filter: &LoopFilter, params: &OscillatorParams, damping: &DampingModel) -> Result<StabilityReport> {
    filter.validate()?;
    let f_hi = 1e3 * filter.omega_lag.max(filter.omega_lead) / (2.0 * PI);
    let f_lo = 1e-3 * params.f0;
    let grid = logspace(f_lo, f_hi.max(1e3 * params.f0), 20_000);
    let gain = |f: f64| -> Result<f64> {
        Ok((loop_filter_g(f, filter, params) * chi_mech(f, params, damping)?).norm())
    };
    let mut values = Vec::with_capacity(grid.len());
    for &f in &grid {
        values.push(gain(f)?);
    }
    let margin_at = |f: f64| -> Result<f64> {
        Ok(180.0 + loop_phase(omega_of(f), filter, damping)?.to_degrees())
    };
    let crossing = (1..grid.len())
        .rev()
        .find(|&i| (values[i - 1] - 1.0) * (values[i] - 1.0) <= 0.0 && values[i - 1] != values[i]);
    match crossing {
        Some(i) => {
            let (mut a, mut b) = (grid[i - 1], grid[i]);
            let above_at_a = values[i - 1] > 1.0;
            for _ in 0..100 {
                let m = (a * b).sqrt();
                if (gain(m)? > 1.0) == above_at_a {
                    a = m;
                } else {
                    b = m;
                }
            }
            let fu = (a * b).sqrt();
            let margin = margin_at(fu)?;
            let below_lag = omega_of(fu) < filter.omega_lag;
            Ok(StabilityReport {
                phase_margin_deg: margin,
                unity_gain_hz: Some(fu),
                stable: margin > 0.0 && below_lag,
                diagnostic: if below_lag {
                    None
                } else {
                    Some("unity-gain frequency lies above the lag corner".into())
                },
            })
        }
        None => {
            let imax = values
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            Ok(StabilityReport {
                phase_margin_deg: margin_at(grid[imax])?,
                unity_gain_hz: None,
                stable: true,
                diagnostic: Some(format!(
                    "loop gain never reaches unity (max {:.3e} at {:.3e} Hz)",
                    values[imax], grid[imax]
                )),
            })
        }
    }
}

/// Fails with [`Error::Unstable`] unless the loop is stable.
pub fn require_stable(filter: &LoopFilter, params: &OscillatorParams, damping: &DampingModel) -> Result<StabilityReport> {
    let r = stability_margin(filter, params, damping)?;
    if r.stable {
        Ok(r)
    } else {
        let at = match r.unity_gain_hz {
            Some(f) => format!("unity gain at {f:.3} Hz"),
            None => "no unity-gain crossing".into(),
        };
        Err(Error::Unstable(format!("phase margin {:.2}°, {at}", r.phase_margin_deg)))
    }
}

/// Panel edges for integrating a resonance at `f_c` with half-width `hw`
/// over `[f1, f2]`.
pub(crate) fn resonance_breakpoints(f1: f64, f2: f64, f_c: f64, hw: f64) -> Vec<f64> {
    let mut pts = vec![f1, f2];
    for k in [0.0, 1.0, 3.0, 10.0, 30.0, 100.0, 1e3, 1e4] {
        for s in [-1.0, 1.0] {
            let p = f_c + s * k * hw;
            if p > f1 && p < f2 {
                pts.push(p);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// ∫ psd(f) df over `[f1, f2]` for a spectrum peaked at `f_c` with
/// half-width `hw`.
pub fn integrate_band(
    psd: impl Fn(f64) -> f64,
    f1: f64,
    f2: f64,
    f_c: f64,
    hw: f64,
) -> Result<f64> {
    if !(f1 > 0.0 && f2 > f1) {
        return Err(Error::invalid("band", format!("need 0 < f1 < f2, got [{f1}, {f2}]")));
    }
    let pts = resonance_breakpoints(f1, f2, f_c, hw);
    Ok(integrate_with_breakpoints(psd, &pts, QuadTol::rel(1e-11))?.value)
}

/// Ground-state variance θ_zp² at ω0 for reference in tests and reports.
pub fn theta_zp_sq_bare(params: &OscillatorParams) -> f64 {
    HBAR / (2.0 * params.inertia * params.omega0())
}
