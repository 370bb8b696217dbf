//! Levenberg-Marquardt least squares with a finite-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative parameter-step tolerance for convergence.
    pub xtol: f64,
    /// Relative cost-decrease tolerance for convergence.
    pub ftol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            xtol: 1e-10,
            ftol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Unscaled covariance (JᵀJ)⁻¹ at the solution.
    pub cov_unscaled: DMatrix<f64>,
    /// Sum of squared residuals.
    pub rss: f64,
    pub n_residuals: usize,
    pub iterations: usize,
}

fn jacobian<F>(f: &F, p: &[f64], r0: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let mut j = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = 1e-6 * p[k].abs().max(1e-6);
        q[k] = p[k] + h;
        let rp = f(&q)?;
        q[k] = p[k] - h;
        let rm = f(&q)?;
        q[k] = p[k];
        for i in 0..m {
            j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Minimises `Σ r_i(p)²` starting from `p0`.
pub fn levenberg_marquardt<F>(f: F, p0: &[f64], opts: &LmOptions) -> Result<LmFit>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = DVector::from_vec(f(&p)?);
    if r.len() < n {
        return Err(Error::invalid("residuals", "fewer residuals than parameters"));
    }
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::Domain("non-finite residuals at starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        let j = jacobian(&f, &p, &r)?;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = match f(&trial) {
                Ok(v) => DVector::from_vec(v),
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let small_step = step
                    .iter()
                    .zip(&p)
                    .all(|(s, x)| s.abs() <= opts.xtol * (x.abs() + opts.xtol));
                let small_gain = cost - ct <= opts.ftol * cost;
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: already at a minimum to
            // working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "no convergence after {} iterations (cost {cost:.3e})",
            opts.max_iter
        )));
    }
    let j = jacobian(&f, &p, &r)?;
    let cov = (j.transpose() * &j)
        .try_inverse()
        .ok_or_else(|| Error::NonConvergence("singular normal matrix at solution".into()))?;
    Ok(LmFit {
        params: p,
        cov_unscaled: cov,
        rss: cost,
        n_residuals: r.len(),
        iterations: iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-0.7 * x).exp() + 0.3).collect();
        let fit = levenberg_marquardt(
            |p| Ok(xs.iter().zip(&ys).map(|(x, y)| p[0] * (-p[1] * x).exp() + p[2] - y).collect()),
            &[1.0, 0.1, 0.0],
            &LmOptions::default(),
        )
        .unwrap();
        assert!((fit.params[0] - 2.5).abs() < 1e-7);
        assert!((fit.params[1] - 0.7).abs() < 1e-7);
        assert!((fit.params[2] - 0.3).abs() < 1e-7);
        assert!(fit.rss < 1e-20);
    }
}
