//! Real-signal FFT helpers on top of rustfft.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Inverse of a one-sided spectrum: `bins` holds the `n/2 + 1` non-negative
/// frequency coefficients of a real signal of length `n`. Returns
/// `x[t] = Σ_k X[k] e^{2πikt/n}` (no `1/n` factor) using Hermitian symmetry.
/// For even `n` the imaginary part of the Nyquist bin is ignored.
pub fn inverse_real(bins: &[Complex64], n: usize) -> Vec<f64> {
    assert!(bins.len() == n / 2 + 1);
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[..bins.len()].copy_from_slice(bins);
    for k in 1..=(n - 1) / 2 {
        full[n - k] = bins[k].conj();
    }
    if n.is_multiple_of(2) {
        full[n / 2].im = 0.0;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut full);
    full.into_iter().map(|z| z.re).collect()
}

/// Forward FFT of a real signal, returning the `n/2 + 1` non-negative
/// frequency bins.
pub fn forward_real(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}
