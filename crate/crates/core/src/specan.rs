//! Spectral estimation and inference on measured or synthetic spectra.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::digamma;

use crate::constants::{HBAR, K_B};
use crate::error::{require_positive, Error, Result};
use crate::exec::Execution;
use crate::numerics::lm::{levenberg_marquardt, LmOptions};
use crate::numerics::trapezoid_between;
use crate::physcore::OscillatorParams;
use crate::response::{
    chi_mech, closed_loop_angle_psd, integrate_band, thermal_torque_psd, DampingModel, LoopFilter,
    NoiseBudget,
};
use crate::spectrum::SpectrumRecord;
use crate::timesim::TimeSeries;

const SEGMENTS_PER_CHUNK: usize = 16;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Equivalent χ² degrees of freedom of a Welch average of `k` segments of
/// window `w` advanced by `step` samples.
pub fn welch_dof(w: &[f64], step: usize, k: usize) -> f64 {
    let norm: f64 = w.iter().map(|v| v * v).sum();
    let mut denom = k as f64;
    for lag in 1..k {
        let shift = lag * step;
        if shift >= w.len() {
            break;
        }
        let c: f64 = (0..w.len() - shift).map(|i| w[i] * w[i + shift]).sum();
        denom += 2.0 * (k - lag) as f64 * (c / norm).powi(2);
    }
    2.0 * (k as f64).powi(2) / denom
}

/// Variance inflation for a least-squares sum over adjacent frequency bins
/// of a windowed periodogram: 1 + 2Σ_m ρ_m², with ρ_m the power correlation
/// between bins m apart.
pub fn bin_correlation_inflation(w: &[f64]) -> f64 {
    let n = w.len();
    let norm: f64 = w.iter().map(|v| v * v).sum();
    let mut total = 1.0;
    for m in 1..n / 2 {
        let z: Complex64 = w
            .iter()
            .enumerate()
            .map(|(i, v)| v * v * Complex64::from_polar(1.0, -2.0 * PI * (m * i) as f64 / n as f64))
            .sum();
        let rho = (z.norm() / norm).powi(2);
        if rho < 1e-12 {
            break;
        }
        total += 2.0 * rho;
    }
    total
}

/// Welch PSD with a periodic Hann window and per-segment mean removal.
/// Bins run from the first positive frequency to Nyquist. Mean removal
/// biases the first bin low, since the Hann kernel spans one bin either side.
pub fn welch_psd(series: &TimeSeries, segment_seconds: f64, overlap: f64) -> Result<SpectrumRecord> {
    welch_psd_with(series, segment_seconds, overlap, Execution::default())
}

pub fn welch_psd_with(series: &TimeSeries, segment_seconds: f64, overlap: f64, exec: Execution) -> Result<SpectrumRecord> {
    series.validate()?;
    require_positive("segment_seconds", segment_seconds)?;
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid("overlap", "must lie in [0, 1)"));
    }
    let nseg = (segment_seconds * series.rate).round() as usize;
    if nseg < 16 {
        return Err(Error::invalid("segment_seconds", "segment shorter than 16 samples"));
    }
    let x = &series.samples;
    if x.len() < nseg {
        return Err(Error::invalid("series", "shorter than one segment"));
    }
    let step = (nseg - (overlap * nseg as f64).round() as usize).max(1);
    let k = 1 + (x.len() - nseg) / step;
    let w = hann(nseg);
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nseg);
    let nb = nseg / 2 + 1;
    let chunks = k.div_ceil(SEGMENTS_PER_CHUNK);
    let partial = exec.map_range(chunks, |c| {
        let mut acc = vec![0.0; nb];
        let mut buf = vec![Complex64::new(0.0, 0.0); nseg];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for s in c * SEGMENTS_PER_CHUNK..((c + 1) * SEGMENTS_PER_CHUNK).min(k) {
            let seg = &x[s * step..s * step + nseg];
            let mean = seg.iter().sum::<f64>() / nseg as f64;
            for ((b, v), wi) in buf.iter_mut().zip(seg).zip(&w) {
                *b = Complex64::new((v - mean) * wi, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm_sqr();
            }
        }
        acc
    });
    let mut sum = vec![0.0; nb];
    for p in &partial {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let norm = 1.0 / (series.rate * wss * k as f64);
    let mut freqs = Vec::with_capacity(nb - 1);
    let mut psd = Vec::with_capacity(nb - 1);
    for (i, s) in sum.iter().enumerate().skip(1) {
        let one_sided = if nseg.is_multiple_of(2) && i == nseg / 2 { 1.0 } else { 2.0 };
        freqs.push(i as f64 * series.rate / nseg as f64);
        psd.push(one_sided * s * norm);
    }
    Ok(SpectrumRecord {
        freqs,
        psd,
        unit: format!("{}^2/Hz", series.unit),
        segments: k,
        dof: Some(welch_dof(&w, step, k)),
    })
}

/// Trapezoid integral of the spectrum over `[f1, f2]`.
pub fn band_integral(spec: &SpectrumRecord, f1: f64, f2: f64) -> Result<f64> {
    spec.validate()?;
    check_band(spec, f1, f2)?;
    Ok(trapezoid_between(&spec.freqs, &spec.psd, f1, f2))
}

fn check_band(spec: &SpectrumRecord, f1: f64, f2: f64) -> Result<()> {
    if !(f1 > 0.0 && f2 > f1) {
        return Err(Error::invalid("band", format!("need 0 < f1 < f2, got [{f1}, {f2}]")));
    }
    let (lo, hi) = (spec.freqs[0], spec.freqs[spec.len() - 1]);
    if f1 < lo || f2 > hi {
        return Err(Error::invalid(
            "band",
            format!("[{f1}, {f2}] Hz is outside the spectrum grid [{lo}, {hi}] Hz"),
        ));
    }
    Ok(())
}

/// Angle PSD of the frequency-shifted oscillator with only its mechanical
/// loss: |χ_app|²·S_th with χ_app = 1/(I(ω_eff² − ω² + iωγ(ω))).
pub fn apparent_angle_psd(f: f64, params: &OscillatorParams, damping: &DampingModel, f_eff: f64) -> Result<f64> {
    let w = 2.0 * PI * f;
    let we = 2.0 * PI * f_eff;
    let chi = 1.0 / (params.inertia * Complex64::new(we * we - w * w, w * damping.gamma_at(w)?));
    Ok(chi.norm_sqr() * thermal_torque_psd(f, params, damping)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureEstimate {
    /// K.
    pub t_eff: f64,
    /// k_B·T_eff/(ħω_eff).
    pub occupation: f64,
    /// Band integral of the measured spectrum, rad².
    pub measured_variance: f64,
    /// Band integral of the apparent thermal spectrum at T0, rad².
    pub reference_variance: f64,
}

/// Effective temperature from the ratio of the measured band variance to
/// that of the apparent (feedback-free, frequency-shifted) oscillator at T0.
pub fn effective_temperature(
    measured: &SpectrumRecord,
    params: &OscillatorParams,
    damping: &DampingModel,
    f_eff: f64,
    f1: f64,
    f2: f64,
) -> Result<TemperatureEstimate> {
    params.validate()?;
    require_positive("t0", params.t0)?;
    require_positive("f_eff", f_eff)?;
    let num = band_integral(measured, f1, f2)?;
    let we = 2.0 * PI * f_eff;
    let hw = damping.gamma_at(we)? / (4.0 * PI);
    let den = integrate_band(
        |f| apparent_angle_psd(f, params, damping, f_eff).unwrap_or(f64::NAN),
        f1,
        f2,
        f_eff,
        hw,
    )?;
    if !(den.is_finite() && den > 0.0) {
        return Err(Error::Domain("reference band variance is not positive".into()));
    }
    let t_eff = params.t0 * num / den;
    Ok(TemperatureEstimate {
        t_eff,
        occupation: K_B * t_eff / (HBAR * we),
        measured_variance: num,
        reference_variance: den,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub value: f64,
    /// 95% interval.
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub f_eff: Option<f64>,
    pub q_eff: Option<f64>,
    pub vibration_white_torque: Option<f64>,
    /// χ² per degree of freedom of the log-spectrum residuals.
    pub residual: f64,
    pub confidence: Vec<ParamEstimate>,
    pub bins: usize,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&ParamEstimate> {
        self.confidence.iter().find(|p| p.name == name)
    }
}

/// Trigamma function ψ₁(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// Mean and variance of ln(P̂/P) for a PSD estimate with `nu` χ² degrees of
/// freedom.
pub fn log_estimator_moments(nu: f64) -> (f64, f64) {
    (digamma(nu / 2.0) - (nu / 2.0).ln(), trigamma(nu / 2.0))
}

fn spectrum_dof(s: &SpectrumRecord) -> Option<f64> {
    s.dof.or(if s.segments > 1 { Some(2.0 * s.segments as f64) } else { None })
}

fn quantile_95(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof.max(1) as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(1.96)
}

/// Hann bin-correlation inflation for estimated spectra, 1 otherwise.
fn inflation_for(s: &SpectrumRecord) -> f64 {
    if s.dof.is_some() {
        bin_correlation_inflation(&hann(64))
    } else {
        1.0
    }
}

/// Fits |χ_eff| = 1/(I·√((ω_eff² − ω²)² + (ωω_eff/Q)²)) (times a free
/// overall scale) to √(S_θθ/S_ττ) in log space over `band`.
pub fn fit_susceptibility(
    driven: &SpectrumRecord,
    drive_torque_psd: f64,
    params: &OscillatorParams,
    band: (f64, f64),
) -> Result<FitResult> {
    driven.validate()?;
    params.validate()?;
    require_positive("drive_torque_psd", drive_torque_psd)?;
    check_band(driven, band.0, band.1)?;
    let idx = driven.band_indices(band.0, band.1);
    let f: Vec<f64> = driven.freqs[idx.clone()].to_vec();
    let s: Vec<f64> = driven.psd[idx].to_vec();
    if f.len() < 6 {
        return Err(Error::invalid("band", "fewer than 6 bins in band"));
    }
    if s.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("zero PSD bin in fit band".into()));
    }
    let y: Vec<f64> = s.iter().map(|v| 0.5 * (v / drive_torque_psd).ln()).collect();

    // Seeds: peak bin and half-power width.
    let ipk = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap_or(0);
    let half = s[ipk] / 2.0;
    let mut lo = ipk;
    while lo > 0 && s[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = ipk;
    while hi + 1 < s.len() && s[hi + 1] >= half {
        hi += 1;
    }
    let width = (f[hi] - f[lo]).max(f[1] - f[0]);
    let q_seed = (f[ipk] / width).max(0.3);
    let inertia = params.inertia;
    let model = |p: &[f64], fr: f64| -> f64 {
        let (fe, q) = (p[0], p[1].exp());
        let (w, we) = (2.0 * PI * fr, 2.0 * PI * fe);
        p[2] - inertia.ln() - 0.5 * ((we * we - w * w).powi(2) + (w * we / q).powi(2)).ln()
    };
    let resid = |p: &[f64]| -> Result<Vec<f64>> {
        if !(p[0] > 0.0) {
            return Err(Error::Domain("negative resonance frequency".into()));
        }
        Ok(f.iter().zip(&y).map(|(&fr, &yi)| model(p, fr) - yi).collect())
    };
    let scale_seed = {
        let p = [f[ipk], q_seed.ln(), 0.0];
        y.iter().zip(&f).map(|(yi, &fr)| yi - model(&p, fr)).sum::<f64>() / f.len() as f64
    };
    let fit = levenberg_marquardt(resid, &[f[ipk], q_seed.ln(), scale_seed], &LmOptions::default())
        .map_err(|e| Error::NonConvergence(format!("susceptibility fit: {e}")))?;
    let n = f.len();
    let dof = n - 3;
    let s2 = fit.rss / dof as f64;
    let expected = spectrum_dof(driven).map(|nu| 0.25 * log_estimator_moments(nu).1);
    let residual = match expected {
        Some(v) => s2 / v,
        None => s2,
    };
    let t = quantile_95(dof);
    let infl = inflation_for(driven);
    let se = |k: usize| (s2 * infl * fit.cov_unscaled[(k, k)]).sqrt();
    let fe = fit.params[0];
    let lq = fit.params[1];
    Ok(FitResult {
        f_eff: Some(fe),
        q_eff: Some(lq.exp()),
        vibration_white_torque: None,
        residual,
        confidence: vec![
            ParamEstimate {
                name: "f_eff".into(),
                value: fe,
                lo: fe - t * se(0),
                hi: fe + t * se(0),
            },
            ParamEstimate {
                name: "q_eff".into(),
                value: lq.exp(),
                lo: (lq - t * se(1)).exp(),
                hi: (lq + t * se(1)).exp(),
            },
        ],
        bins: n,
    })
}

/// Fits the white excess-torque level with all other budget terms held at
/// `budget_known`, by least squares on ln S with the χ² log-bias removed.
pub fn fit_noise_budget(
    measured: &SpectrumRecord,
    filter: &LoopFilter,
    params: &OscillatorParams,
    damping: &DampingModel,
    budget_known: &NoiseBudget,
    band: (f64, f64),
) -> Result<FitResult> {
    measured.validate()?;
    budget_known.validate()?;
    check_band(measured, band.0, band.1)?;
    let nu = spectrum_dof(measured).ok_or_else(|| {
        Error::invalid("measured", "needs an averaged estimate (segments > 1) to weight the fit")
    })?;
    let (bias, var) = log_estimator_moments(nu);
    let fixed = NoiseBudget {
        vibration_white_torque: 0.0,
        ..budget_known.clone()
    };
    let idx = measured.band_indices(band.0, band.1);
    let mut base = Vec::new();
    let mut slope = Vec::new();
    let mut y = Vec::new();
    for i in idx {
        let fr = measured.freqs[i];
        let b = closed_loop_angle_psd(fr, filter, params, damping, &fixed)?;
        let ce2 = b.thermal / thermal_torque_psd(fr, params, damping)?;
        if measured.psd[i] <= 0.0 {
            return Err(Error::Domain("zero PSD bin in fit band".into()));
        }
        base.push(b.total);
        slope.push(ce2);
        y.push(measured.psd[i].ln() - bias);
    }
    let n = y.len();
    if n < 3 {
        return Err(Error::invalid("band", "fewer than 3 bins in band"));
    }
    let resid = |v: f64| -> Option<Vec<f64>> {
        base.iter()
            .zip(&slope)
            .zip(&y)
            .map(|((b, c), yi)| {
                let m = b + v * c;
                (m > 0.0).then(|| yi - m.ln())
            })
            .collect()
    };
    // Gauss-Newton in V, halving steps that leave the model non-positive.
    let mut v = 0.0;
    let mut converged = false;
    for _ in 0..200 {
        let r = resid(v).ok_or_else(|| Error::Domain("model non-positive".into()))?;
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for ((b, c), ri) in base.iter().zip(&slope).zip(&r) {
            let j = c / (b + v * c);
            jtj += j * j;
            jtr += j * ri;
        }
        let mut dv = jtr / jtj;
        let cost: f64 = r.iter().map(|x| x * x).sum();
        let mut accepted = false;
        for _ in 0..60 {
            if let Some(rt) = resid(v + dv) {
                if rt.iter().map(|x| x * x).sum::<f64>() <= cost {
                    accepted = true;
                    break;
                }
            }
            dv *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        v += dv;
        if dv.abs() <= 1e-10 * v.abs().max(1e-60) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence("noise-budget fit did not settle".into()));
    }
    let r = resid(v).ok_or_else(|| Error::Domain("model non-positive".into()))?;
    let rss: f64 = r.iter().map(|x| x * x).sum();
    let jtj: f64 = base
        .iter()
        .zip(&slope)
        .map(|(b, c)| (c / (b + v * c)).powi(2))
        .sum();
    let se = (var * inflation_for(measured) / jtj).sqrt();
    let z = 1.959_963_984_540_054;
    Ok(FitResult {
        f_eff: Some(filter.omega_eff(params) / (2.0 * PI)),
        q_eff: Some(filter.q_eff(params, damping)?),
        vibration_white_torque: Some(v),
        residual: rss / ((n - 1) as f64 * var),
        confidence: vec![ParamEstimate {
            name: "vibration_white_torque".into(),
            value: v,
            lo: v - z * se,
            hi: v + z * se,
        }],
        bins: n,
    })
}

/// Band-integrated share of the closed-loop variance that comes from
/// imprinted detection noise.
pub fn fb_noise_fraction(
    filter: &LoopFilter,
    params: &OscillatorParams,
    damping: &DampingModel,
    budget: &NoiseBudget,
    f1: f64,
    f2: f64,
) -> Result<f64> {
    budget.validate()?;
    let we = filter.omega_eff(params);
    let hw = (filter.gamma_fb(params) + damping.gamma_at(we)?) / (4.0 * PI);
    let fc = we / (2.0 * PI);
    let term = |pick: fn(&crate::response::AnglePsdBreakdown) -> f64| {
        integrate_band(
            |f| closed_loop_angle_psd(f, filter, params, damping, budget).map(|b| pick(&b)).unwrap_or(f64::NAN),
            f1,
            f2,
            fc,
            hw,
        )
    };
    let imp = term(|b| b.imprinted)?;
    let tot = term(|b| b.total)?;
    if !(imp.is_finite() && tot.is_finite()) {
        return Err(Error::Domain("closed-loop PSD undefined in band".into()));
    }
    if tot == 0.0 {
        return Ok(0.0);
    }
    Ok((imp / tot).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSpectrum {
    pub centers: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Mean and spread of the PSD within consecutive bins of `width` Hz
/// starting at `f_start`.
pub fn bin_spectrum(spec: &SpectrumRecord, f_start: f64, width: f64) -> Result<BinnedSpectrum> {
    spec.validate()?;
    require_positive("width", width)?;
    let mut out = BinnedSpectrum {
        centers: vec![],
        mean: vec![],
        std: vec![],
        counts: vec![],
    };
    let mut lo = f_start;
    let fmax = spec.freqs[spec.len() - 1];
    while lo < fmax {
        let r = spec.band_indices(lo, lo + width);
        let vals: Vec<f64> = spec.psd[r.clone()]
            .iter()
            .zip(&spec.freqs[r])
            .filter(|(_, &f)| f < lo + width)
            .map(|(p, _)| *p)
            .collect();
        if !vals.is_empty() {
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            out.centers.push(lo + 0.5 * width);
            out.mean.push(m);
            out.std.push(sd);
            out.counts.push(vals.len());
        }
        lo += width;
    }
    Ok(out)
}

/// |χ(f)|⁻² helper for callers converting between angle and torque.
pub fn inverse_chi_sq(f: f64, params: &OscillatorParams, damping: &DampingModel) -> Result<f64> {
    Ok(1.0 / chi_mech(f, params, damping)?.norm_sqr())
}
