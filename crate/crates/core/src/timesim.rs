//! Synthetic time series: colored noise, closed-loop runs, ring-downs.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::{C, K_B};
use crate::error::{require_positive, Error, Result};
use crate::exec::Execution;
use crate::numerics::fft::inverse_real;
use crate::physcore::{DampingLaw, OscillatorParams};
use crate::response::{
    chi_mech, loop_filter_g, thermal_torque_psd, DampingModel, LoopFilter, NoiseBudget,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// Sampling rate, Hz.
    pub rate: f64,
    pub samples: Vec<f64>,
    pub seed: u64,
    pub label: String,
    pub unit: String,
}

impl TimeSeries {
    pub fn new(rate: f64, samples: Vec<f64>, seed: u64, label: impl Into<String>, unit: impl Into<String>) -> Result<Self> {
        let ts = TimeSeries {
            rate,
            samples,
            seed,
            label: label.into(),
            unit: unit.into(),
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("rate", self.rate)?;
        if self.samples.len() < 2 {
            return Err(Error::invalid("samples", "need at least 2 samples"));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample in series `{}`", self.label)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    FrequencyDomain,
    TimeDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimPlan {
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub rate: f64,
    pub seed: u64,
    /// Actuator torque clamp, N·m.
    pub actuator_torque_max: f64,
    #[serde(default)]
    pub mode: SimMode,
}

/// Push-beam power used for the default actuator clamp, W.
pub const DEFAULT_PUSH_POWER: f64 = 2e-3;
/// Default sampling rate of the time-domain loop, Hz.
pub const DEFAULT_LOOP_RATE: f64 = 1e4;

/// Radiation-pressure torque bound 2·P·arm/c.
pub fn default_actuator_clamp(params: &OscillatorParams, power: f64) -> f64 {
    2.0 * power * params.lever_arm / C
}

impl SimPlan {
    pub fn new(duration: f64, rate: f64, seed: u64, params: &OscillatorParams) -> Self {
        SimPlan {
            duration,
            rate,
            seed,
            actuator_torque_max: default_actuator_clamp(params, DEFAULT_PUSH_POWER),
            mode: SimMode::FrequencyDomain,
        }
    }

    pub fn with_mode(self, mode: SimMode) -> Self {
        SimPlan { mode, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("duration", self.duration)?;
        require_positive("rate", self.rate)?;
        require_positive("actuator_torque_max", self.actuator_torque_max)?;
        self.sample_count().map(|_| ())
    }

    pub fn sample_count(&self) -> Result<usize> {
        let x = self.duration * self.rate;
        let n = x.round();
        if (x - n).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::invalid(
                "duration",
                format!("duration·rate = {x} is not an integer sample count"),
            ));
        }
        if n < 4.0 {
            return Err(Error::invalid("duration", "fewer than 4 samples"));
        }
        Ok(n as usize)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Complex Gaussian bins for a length-`n` real series whose one-sided PSD
/// is `psd`. The DC bin is zero.
fn shaped_bins(
    psd: &dyn Fn(f64) -> Result<f64>,
    n: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    let nb = n / 2 + 1;
    let mut bins = vec![Complex64::new(0.0, 0.0); nb];
    let scale = rate * n as f64;
    for (k, bin) in bins.iter_mut().enumerate().skip(1) {
        let f = k as f64 * rate / n as f64;
        let s = psd(f)?;
        if !s.is_finite() {
            return Err(Error::invalid("psd", format!("non-finite value at {f} Hz")));
        }
        if s < 0.0 {
            return Err(Error::invalid("psd", format!("negative value {s} at {f} Hz")));
        }
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        if n.is_multiple_of(2) && k == n / 2 {
            *bin = Complex64::new(re * (s * scale / 2.0).sqrt(), 0.0);
        } else {
            let c = (s * scale / 4.0).sqrt();
            *bin = Complex64::new(re * c, im * c);
        }
    }
    Ok(bins)
}

fn bins_to_series(bins: &[Complex64], n: usize) -> Vec<f64> {
    let inv = 1.0 / n as f64;
    inverse_real(bins, n).into_iter().map(|v| v * inv).collect()
}

/// Zero-mean Gaussian series with one-sided PSD `psd`, by spectral shaping of
/// Hermitian-symmetric random bins.
pub fn synth_colored_noise(psd: impl Fn(f64) -> f64, plan: &SimPlan) -> Result<TimeSeries> {
    plan.validate()?;
    let n = plan.sample_count()?;
    let mut rng = stream_rng(plan.seed, 0);
    let bins = shaped_bins(&|f| Ok(psd(f)), n, plan.rate, &mut rng)?;
    TimeSeries::new(plan.rate, bins_to_series(&bins, n), plan.seed, "colored_noise", "arb")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRun {
    pub theta: TimeSeries,
    /// Feedback torque applied by the actuator.
    pub torque: TimeSeries,
    /// Fraction of steps at the actuator clamp (time-domain mode only).
    pub saturation_fraction: f64,
    /// Set when more than 1% of steps saturated.
    pub flagged: bool,
}

/// Saturation fraction above which a time-domain run is flagged.
pub const SATURATION_FLAG: f64 = 0.01;

/// Closed-loop angle and feedback-torque series.
///
/// Frequency-domain mode shapes independent torque and detection noises by
/// χ_eff and G·χ_eff. Time-domain mode integrates viscous-equivalent
/// mechanics (loss rate γ(ω_eff)) exactly per step, drives them with
/// white torque noise, and closes the loop through a bilinear-discretised
/// lead-lag filter with an actuator clamp.
pub fn simulate_closed_loop(
    params: &OscillatorParams,
    filter: &LoopFilter,
    damping: &DampingModel,
    budget: &NoiseBudget,
    plan: &SimPlan,
) -> Result<ClosedLoopRun> {
    params.validate()?;
    filter.validate()?;
    budget.validate()?;
    plan.validate()?;
    match plan.mode {
        SimMode::FrequencyDomain => {
            crate::response::require_stable(filter, params, damping)?;
            frequency_domain_loop(params, filter, damping, budget, plan)
        }
        SimMode::TimeDomain => time_domain_loop(params, filter, damping, budget, plan),
    }
}

fn frequency_domain_loop(
    params: &OscillatorParams,
    filter: &LoopFilter,
    damping: &DampingModel,
    budget: &NoiseBudget,
    plan: &SimPlan,
) -> Result<ClosedLoopRun> {
    let n = plan.sample_count()?;
    let torque_psd = |f: f64| -> Result<f64> {
        Ok(thermal_torque_psd(f, params, damping)?
            + budget.vibration_white_torque
            + budget.radiation_pressure_torque)
    };
    let detection_psd = |f: f64| -> Result<f64> { Ok(budget.detection_psd(f)) };
    let tau_bins = shaped_bins(&torque_psd, n, plan.rate, &mut stream_rng(plan.seed, 1))?;
    let det_bins = shaped_bins(&detection_psd, n, plan.rate, &mut stream_rng(plan.seed, 2))?;
    let mut theta_bins = vec![Complex64::new(0.0, 0.0); tau_bins.len()];
    let mut fb_bins = theta_bins.clone();
    for k in 1..tau_bins.len() {
        let f = k as f64 * plan.rate / n as f64;
        let chi = chi_mech(f, params, damping)?;
        let g = loop_filter_g(f, filter, params);
        let ce = chi / (1.0 + g * chi);
        let th = ce * tau_bins[k] - g * ce * det_bins[k];
        theta_bins[k] = th;
        fb_bins[k] = -g * (th + det_bins[k]);
    }
    Ok(ClosedLoopRun {
        theta: TimeSeries::new(plan.rate, bins_to_series(&theta_bins, n), plan.seed, "theta", "rad")?,
        torque: TimeSeries::new(plan.rate, bins_to_series(&fb_bins, n), plan.seed, "feedback_torque", "N*m")?,
        saturation_fraction: 0.0,
        flagged: false,
    })
}

/// Exact one-step propagation of a damped oscillator driven by a torque held
/// constant over the step, plus the covariance of continuous white torque
/// noise accumulated over the step.
pub(crate) struct OscillatorStep {
    pub phi: Matrix2<f64>,
    pub gamma_in: Vector2<f64>,
    /// Lower Cholesky factor of the per-step noise covariance.
    pub noise_chol: Matrix2<f64>,
}

impl OscillatorStep {
    /// `torque_psd` is the one-sided white torque PSD in (N·m)²/Hz.
    pub fn new(omega0: f64, gamma: f64, inertia: f64, dt: f64, torque_psd: f64) -> Result<Self> {
        let a = Matrix2::new(0.0, 1.0, -omega0 * omega0, -gamma);
        let phi = (a * dt).exp();
        let b = Vector2::new(0.0, 1.0 / inertia);
        let a_inv = a
            .try_inverse()
            .ok_or_else(|| Error::Domain("singular oscillator matrix".into()))?;
        let gamma_in = a_inv * (phi - Matrix2::identity()) * b;
        // Stationary covariance under white torque noise solves the Lyapunov
        // equation, which is diagonal for this A; the per-step covariance is
        // P − Φ P Φᵀ.
        let q = torque_psd / (2.0 * inertia * inertia);
        let p = Matrix2::new(q / (2.0 * gamma * omega0 * omega0), 0.0, 0.0, q / (2.0 * gamma));
        let qd = p - phi * p * phi.transpose();
        let l11 = qd[(0, 0)].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { qd[(1, 0)] / l11 } else { 0.0 };
        let l22 = (qd[(1, 1)] - l21 * l21).max(0.0).sqrt();
        Ok(OscillatorStep {
            phi,
            gamma_in,
            noise_chol: Matrix2::new(l11, 0.0, l21, l22),
        })
    }
}

/// First-order section y = b0·x + b1·x₋₁ − a1·y₋₁.
struct Biquad1 {
    b0: f64,
    b1: f64,
    a1: f64,
    x1: f64,
    y1: f64,
}

impl Biquad1 {
    /// Bilinear transform of k·(1 + s/ω_lead)/(1 + s/ω_lag).
    fn lead_lag(k: f64, omega_lead: f64, omega_lag: f64, rate: f64) -> Self {
        let c = 2.0 * rate;
        let den = 1.0 + c / omega_lag;
        Biquad1 {
            b0: k * (1.0 + c / omega_lead) / den,
            b1: k * (1.0 - c / omega_lead) / den,
            a1: (1.0 - c / omega_lag) / den,
            x1: 0.0,
            y1: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b1 * self.x1 - self.a1 * self.y1;
        self.x1 = x;
        self.y1 = y;
        y
    }
}

fn time_domain_loop(
    params: &OscillatorParams,
    filter: &LoopFilter,
    damping: &DampingModel,
    budget: &NoiseBudget,
    plan: &SimPlan,
) -> Result<ClosedLoopRun> {
    if !filter.exact {
        return Err(Error::invalid("filter.exact", "time-domain mode needs the lag pole"));
    }
    let f_lag = filter.omega_lag / (2.0 * PI);
    if plan.rate < 6.0 * f_lag {
        return Err(Error::invalid(
            "rate",
            format!("time-domain rate {} Hz is below 6× the lag corner ({f_lag:.1} Hz)", plan.rate),
        ));
    }
    let n = plan.sample_count()?;
    let omega_eff = filter.omega_eff(params);
    let gamma_v = damping.gamma_at(omega_eff)?;
    let surrogate = DampingModel {
        law: DampingLaw::Viscous,
        gamma0: gamma_v,
        omega0: damping.omega0,
    };
    let dt = 1.0 / plan.rate;
    let white = thermal_torque_psd(1.0, params, &surrogate)?
        + budget.vibration_white_torque
        + budget.radiation_pressure_torque;
    let step = OscillatorStep::new(damping.omega0, gamma_v, params.inertia, dt, white)?;

    // Discard a settling interval of twenty closed-loop decay times.
    let gamma_cl = filter.gamma_fb(params) + gamma_v;
    let warm = ((20.0 / gamma_cl) * plan.rate).ceil().min(1e7) as usize;
    let total = warm + n;
    let det = {
        let dpsd = |f: f64| -> Result<f64> { Ok(budget.detection_psd(f)) };
        let bins = shaped_bins(&dpsd, total, plan.rate, &mut stream_rng(plan.seed, 2))?;
        bins_to_series(&bins, total)
    };
    let mut rng = stream_rng(plan.seed, 1);
    let k = filter.g * params.inertia * params.omega0().powi(2);
    let mut ctrl = Biquad1::lead_lag(k, filter.omega_lead, filter.omega_lag, plan.rate);
    let clamp = plan.actuator_torque_max;
    let mut x = Vector2::zeros();
    let mut theta = Vec::with_capacity(n);
    let mut torque = Vec::with_capacity(n);
    let mut saturated = 0usize;
    for (i, d) in det.iter().enumerate() {
        let u = -ctrl.step(x[0] + d);
        let applied = u.clamp(-clamp, clamp);
        if i >= warm {
            theta.push(x[0]);
            torque.push(applied);
            if u.abs() > clamp {
                saturated += 1;
            }
        }
        let z = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
        x = step.phi * x + step.gamma_in * applied + step.noise_chol * z;
        if !x[0].is_finite() {
            return Err(Error::Unstable("time-domain loop diverged".into()));
        }
    }
    let frac = saturated as f64 / n as f64;
    Ok(ClosedLoopRun {
        theta: TimeSeries::new(plan.rate, theta, plan.seed, "theta", "rad")?,
        torque: TimeSeries::new(plan.rate, torque, plan.seed, "feedback_torque", "N*m")?,
        saturation_fraction: frac,
        flagged: frac > SATURATION_FLAG,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingdownOptions {
    /// Sampling rate, Hz; defaults to 20·f0.
    pub rate: Option<f64>,
    /// Seed for the thermal drive; `None` runs noise-free.
    pub thermal_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ringdown {
    pub series: TimeSeries,
    /// Fitted amplitude decay time, s.
    pub tau: f64,
    /// τ·ω/2 with ω from the fitted oscillation period.
    pub q: f64,
}

/// Free decay from rest at `theta0`, integrated exactly at the bare loss
/// rate (structural and viscous laws coincide at ω0).
pub fn ringdown(params: &OscillatorParams, theta0: f64, duration: f64, opts: &RingdownOptions) -> Result<Ringdown> {
    params.validate()?;
    require_positive("theta0", theta0)?;
    require_positive("duration", duration)?;
    let rate = opts.rate.unwrap_or(20.0 * params.f0);
    require_positive("rate", rate)?;
    let n = (duration * rate).floor() as usize;
    let periods = duration * params.f0;
    if periods < 4.0 || n < 16 {
        return Err(Error::invalid("duration", "need at least four oscillation periods"));
    }
    let omega0 = params.omega0();
    let gamma0 = params.gamma0();
    let psd = if opts.thermal_seed.is_some() {
        4.0 * K_B * params.t0 * params.inertia * gamma0
    } else {
        0.0
    };
    let step = OscillatorStep::new(omega0, gamma0, params.inertia, 1.0 / rate, psd)?;
    let mut rng = stream_rng(opts.thermal_seed.unwrap_or(0), 3);
    let mut x = Vector2::new(theta0, 0.0);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(x[0]);
        x = step.phi * x;
        if psd > 0.0 {
            let z = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
            x += step.noise_chol * z;
        }
    }
    // Under thermal drive only peaks well above the equipartition level
    // carry the decay.
    let floor = if psd > 0.0 { 5.0 * params.equipartition_angle_at(omega0) } else { 0.0 };
    let (tau, period) = fit_decay(&samples, rate, floor)?;
    let series = TimeSeries::new(rate, samples, opts.thermal_seed.unwrap_or(0), "ringdown", "rad")?;
    Ok(Ringdown {
        series,
        tau,
        q: tau * PI / period,
    })
}

/// Fits ln(peak) against time over parabolically interpolated positive
/// peaks above `floor`. Returns (decay time, mean period).
fn fit_decay(x: &[f64], rate: f64, floor: f64) -> Result<(f64, f64)> {
    let mut t = Vec::new();
    let mut a = Vec::new();
    for i in 1..x.len() - 1 {
        if x[i] > floor && x[i] > 0.0 && x[i] >= x[i - 1] && x[i] > x[i + 1] {
            let (y0, y1, y2) = (x[i - 1], x[i], x[i + 1]);
            let den = y0 - 2.0 * y1 + y2;
            let off = if den != 0.0 { 0.5 * (y0 - y2) / den } else { 0.0 };
            t.push((i as f64 + off) / rate);
            a.push((y1 - 0.25 * (y0 - y2) * off).ln());
        }
    }
    if t.len() < 3 {
        return Err(Error::NonConvergence("too few peaks to fit a decay".into()));
    }
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let ma = a.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(&a).map(|(ti, ai)| (ti - mt) * (ai - ma)).sum();
    let sxx: f64 = t.iter().map(|ti| (ti - mt).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::NonConvergence("amplitude does not decay".into()));
    }
    let period = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    Ok((-1.0 / slope, period))
}

/// RMS angle pooled over the window `[t_start, end]` of thermally driven
/// ring-downs, one per seed.
pub fn late_time_rms(
    params: &OscillatorParams,
    theta0: f64,
    duration: f64,
    t_start: f64,
    seeds: &[u64],
    exec: Execution,
) -> Result<f64> {
    let runs = exec.try_map(seeds, |&s| {
        let r = ringdown(
            params,
            theta0,
            duration,
            &RingdownOptions {
                rate: None,
                thermal_seed: Some(s),
            },
        )?;
        let i0 = (t_start * r.series.rate) as usize;
        let tail = &r.series.samples[i0.min(r.series.len())..];
        Ok::<_, Error>((tail.iter().map(|v| v * v).sum::<f64>(), tail.len()))
    })?;
    let (ss, count) = runs.iter().fold((0.0, 0usize), |(a, b), (s, c)| (a + s, b + c));
    if count == 0 {
        return Err(Error::invalid("t_start", "window is empty"));
    }
    Ok((ss / count as f64).sqrt())
}
