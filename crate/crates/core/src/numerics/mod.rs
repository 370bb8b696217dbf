//! Numerical building blocks shared by the physics modules.

pub mod fft;
pub mod lm;
pub mod quad;

pub use quad::{integrate, integrate_with_breakpoints, QuadResult, QuadTol};

/// Log-spaced grid of `n` points from `a` to `b` inclusive.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Linearly spaced grid of `n` points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Trapezoid rule over tabulated samples.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// Trapezoid integral of tabulated `y(x)` restricted to `[a, b]`, with linear
/// interpolation at the interval edges. `x` must be increasing.
pub fn trapezoid_between(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    let interp = |t: f64| -> f64 {
        let i = x.partition_point(|&v| v < t);
        if i == 0 {
            y[0]
        } else if i >= x.len() {
            y[x.len() - 1]
        } else {
            let w = (t - x[i - 1]) / (x[i] - x[i - 1]);
            y[i - 1] + w * (y[i] - y[i - 1])
        }
    };
    let mut xs = vec![a];
    let mut ys = vec![interp(a)];
    for (&xi, &yi) in x.iter().zip(y) {
        if xi > a && xi < b {
            xs.push(xi);
            ys.push(yi);
        }
    }
    xs.push(b);
    ys.push(interp(b));
    trapezoid(&xs, &ys)
}
