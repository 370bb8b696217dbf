#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};
use torsionlab::SpectrumRecord;

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Two-sided 95% χ² test of a Welch estimate against a model PSD over
/// [f1, f2], using every second bin so Hann leakage correlation is small.
/// Returns (statistic, lower, upper).
pub fn chi2_band(est: &SpectrumRecord, model: impl Fn(f64) -> f64, f1: f64, f2: f64) -> (f64, f64, f64) {
    let nu = est.dof.expect("Welch estimate carries dof");
    let mut x = 0.0;
    let mut k = 0usize;
    for i in est.band_indices(f1, f2).step_by(2) {
        x += nu * est.psd[i] / model(est.freqs[i]);
        k += 1;
    }
    let dist = ChiSquared::new(nu * k as f64).unwrap();
    (x, dist.inverse_cdf(0.025), dist.inverse_cdf(0.975))
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
