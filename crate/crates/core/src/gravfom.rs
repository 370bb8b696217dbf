//! Gravitational force gradients, the entanglement figure-of-merit η and
//! the cross-platform comparison table.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{require_positive, Error, Result};
use crate::exec::Execution;
use crate::numerics::quad::kronrod15;
use crate::numerics::{integrate_with_breakpoints, QuadTol};

/// Minimum centre separation accepted without an explicit exception, m.
pub const MIN_SEPARATION: f64 = 50e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    /// Rod-like (parallel rods of length L).
    #[serde(rename = "1D")]
    G1D,
    /// Disk-like (coaxial disks of diameter L).
    #[serde(rename = "2D")]
    G2D,
    /// Point-like (spheres).
    #[serde(rename = "3D")]
    G3D,
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Geometry::G1D => "1D",
            Geometry::G2D => "2D",
            Geometry::G3D => "3D",
        })
    }
}

/// Below this a, the disk factor is taken from the direct pair-distance
/// integral instead of the Bessel integral.
const F2D_DIRECT_BELOW: f64 = 0.02;

/// Dimensionless gradient factor f(a), a = d/L, with
/// |∇F| = 2Gm²/L³·f(d/L).
pub fn geometry_factor(a: f64, geometry: Geometry) -> Result<f64> {
    require_positive("a", a)?;
    Ok(match geometry {
        Geometry::G3D => 1.0 / (a * a * a),
        Geometry::G1D => 1.0 / (a * a * (1.0 + a * a).sqrt()),
        Geometry::G2D => {
            if a < F2D_DIRECT_BELOW {
                disk_factor_direct(a)?
            } else {
                disk_factor_bessel(a, 1e-10)?
            }
        }
    })
}

/// 16∫₀^∞ J₁(u)²e^(−2au) du, panelled on the J₁² period π.
pub fn disk_factor_bessel(a: f64, rel_tol: f64) -> Result<f64> {
    require_positive("a", a)?;
    let u_max = (30.0 / a).max(60.0);
    let f = |u: f64| {
        let j = libm::j1(u);
        j * j * (-2.0 * a * u).exp()
    };
    // J₁(u)² ≈ u²/4 near zero; ∫₀^u0 (u²/4)e^(−bu) du in closed form.
    let u0: f64 = 1e-3;
    let b = 2.0 * a;
    let bu = b * u0;
    let mut total = if bu < 1e-4 {
        u0.powi(3) / 12.0 * (1.0 - 0.75 * bu)
    } else {
        0.25 * (2.0 - (-bu).exp() * (bu * bu + 2.0 * bu + 2.0)) / b.powi(3)
    };
    let mut lo = u0;
    let tol = QuadTol {
        abs: 0.0,
        rel: rel_tol,
        max_intervals: 2000,
    };
    while lo < u_max {
        let hi = (lo + PI).min(u_max);
        total += integrate_with_breakpoints(f, &[lo, hi], tol)?.value;
        lo = hi;
    }
    Ok(16.0 * total)
}

/// Probability density of the distance between two uniform points on a
/// disk of radius `r`.
fn disk_pair_pdf(rho: f64, r: f64) -> f64 {
    let x = rho / (2.0 * r);
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    4.0 * rho / (PI * r * r) * (x.acos() - x * (1.0 - x * x).max(0.0).sqrt())
}

/// Probability density of the axial offset between two uniform points on
/// rods of length `l` (s ≥ 0, folded).
fn rod_pair_pdf(s: f64, l: f64) -> f64 {
    if !(0.0..=l).contains(&s) {
        return 0.0;
    }
    2.0 * (l - s) / (l * l)
}

/// Disk factor from the pair-distance integral of ∂²/∂d² (ρ²+d²)^(−1/2),
/// for unit diameter.
fn disk_factor_direct(a: f64) -> Result<f64> {
    let r = 0.5;
    let k = |rho: f64| {
        let s = rho * rho + a * a;
        disk_pair_pdf(rho, r) * (2.0 * a * a - rho * rho) / (s * s * s.sqrt())
    };
    let mut pts = vec![0.0];
    for m in [0.1, 0.3, 1.0, 3.0, 10.0, 30.0] {
        if m * a < 1.0 {
            pts.push(m * a);
        }
    }
    pts.push(1.0);
    let v = integrate_with_breakpoints(k, &pts, QuadTol::rel(1e-11))?.value;
    // |∇F| = Gm²·|∫p·K''| = 2Gm²/L³·f.
    Ok(v.abs() / 2.0)
}

/// |∇F| = 2Gm²/L³·f(d/L).
pub fn force_gradient(m: f64, l: f64, d: f64, geometry: Geometry) -> Result<f64> {
    force_gradient_with(&PhysicalConstants::CODATA, m, l, d, geometry)
}

pub fn force_gradient_with(c: &PhysicalConstants, m: f64, l: f64, d: f64, geometry: Geometry) -> Result<f64> {
    require_positive("m", m)?;
    require_positive("L", l)?;
    require_positive("d", d)?;
    Ok(2.0 * c.g * m * m / l.powi(3) * geometry_factor(d / l, geometry)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BruteForceGradient {
    pub gradient: f64,
    /// Estimated discretisation plus finite-difference error, absolute.
    pub error_estimate: f64,
}

/// Interaction energy from the pair-distance distribution, composite
/// 15-point Kronrod on `panels` cosine-graded panels.
fn pair_energy(g: f64, m: f64, l: f64, d: f64, geometry: Geometry, panels: usize) -> f64 {
    let (span, pdf): (f64, Box<dyn Fn(f64) -> f64>) = match geometry {
        Geometry::G3D => return -g * m * m / d,
        Geometry::G1D => (l, Box::new(move |s| rod_pair_pdf(s, l))),
        Geometry::G2D => (l, Box::new(move |rho| disk_pair_pdf(rho, l / 2.0))),
    };
    let edge = |k: usize| span * 0.5 * (1.0 - (PI * k as f64 / panels as f64).cos());
    let integrand = |rho: f64| pdf(rho) / (rho * rho + d * d).sqrt();
    let mut acc = 0.0;
    for k in 0..panels {
        acc += kronrod15(integrand, edge(k), edge(k + 1));
    }
    -g * m * m * acc
}

/// Fractional error above which the brute-force gradient is rejected.
pub const BRUTE_FORCE_MAX_ERROR: f64 = 0.01;

/// Gradient from the numerically integrated interaction energy U(d),
/// differentiated twice by central differences (h = d/200) with one
/// Richardson step.
pub fn brute_force_gradient(m: f64, l: f64, d: f64, geometry: Geometry, resolution: usize) -> Result<BruteForceGradient> {
    require_positive("m", m)?;
    require_positive("L", l)?;
    require_positive("d", d)?;
    if resolution < 64 {
        return Err(Error::invalid("resolution", "must be at least 64"));
    }
    let g = PhysicalConstants::CODATA.g;
    let second = |panels: usize, h: f64| {
        let u = |x: f64| pair_energy(g, m, l, x, geometry, panels);
        (u(d + h) - 2.0 * u(d) + u(d - h)) / (h * h)
    };
    let h = d / 200.0;
    let fine = |p: usize| {
        let d1 = second(p, h);
        let d2 = second(p, 2.0 * h);
        ((4.0 * d1 - d2) / 3.0, (d1 - (4.0 * d1 - d2) / 3.0).abs())
    };
    let (val, fd_err) = fine(resolution);
    let (coarse, _) = fine(resolution / 2);
    let err = fd_err + (val - coarse).abs();
    let gradient = val.abs();
    if !(gradient.is_finite() && err <= BRUTE_FORCE_MAX_ERROR * gradient) {
        return Err(Error::Tolerance(format!(
            "brute-force gradient {gradient:.4e} has error estimate {err:.2e}"
        )));
    }
    Ok(BruteForceGradient {
        gradient,
        error_estimate: err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FomResult {
    pub grad_f: f64,
    pub eta: f64,
    /// η with ξ replaced by the zero-point width.
    pub eta_zp: f64,
    /// x_zp²|∇F|/ħ, 1/s.
    pub ent_rate_ground: f64,
    /// Γ_ent⁽⁰⁾/(2η²), 1/s.
    pub thermal_decoherence: f64,
}

/// η = √(ξ²|∇F|/(ħγ)) with `gamma` the bare loss rate in rad/s.
pub fn eta(xi: f64, grad_f: f64, gamma: f64, x_zp: f64) -> Result<FomResult> {
    eta_with(&PhysicalConstants::CODATA, xi, grad_f, gamma, x_zp)
}

pub fn eta_with(c: &PhysicalConstants, xi: f64, grad_f: f64, gamma: f64, x_zp: f64) -> Result<FomResult> {
    require_positive("xi", xi)?;
    require_positive("grad_F", grad_f)?;
    require_positive("gamma", gamma)?;
    require_positive("x_zp", x_zp)?;
    let eta2 = xi * xi * grad_f / (c.hbar * gamma);
    let ent = x_zp * x_zp * grad_f / c.hbar;
    Ok(FomResult {
        grad_f,
        eta: eta2.sqrt(),
        eta_zp: (x_zp * x_zp * grad_f / (c.hbar * gamma)).sqrt(),
        ent_rate_ground: ent,
        thermal_decoherence: ent / (2.0 * eta2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorsionalSpec {
    /// kg·m².
    pub inertia: f64,
    /// m.
    pub lever_arm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformRecord {
    pub label: String,
    #[serde(default)]
    pub name: String,
    /// kg.
    pub mass: f64,
    /// Hz.
    pub freq: f64,
    /// Hz.
    pub gamma_over_2pi: f64,
    /// Tabulated zero-point width, m.
    #[serde(default)]
    pub x_zp: Option<f64>,
    /// m.
    pub xi: f64,
    /// Major dimension, m.
    #[serde(rename = "L")]
    pub major_dimension: f64,
    /// Centre separation, m.
    #[serde(rename = "d")]
    pub separation: f64,
    pub geometry: Geometry,
    #[serde(default)]
    pub notes: String,
    /// Tabulated mass is an effective mode mass; x_zp is taken as tabulated.
    #[serde(default)]
    pub effective_mass: bool,
    /// Separation below the 50 μm floor is accepted (touching distance).
    #[serde(default)]
    pub separation_exception: bool,
    /// Torsional mode: zero-point width is θ_zp·lever_arm.
    #[serde(default)]
    pub torsional: Option<TorsionalSpec>,
    /// Alternate loss rate from projected structural-damping properties, Hz.
    #[serde(default)]
    pub gamma_alt_over_2pi: Option<f64>,
}

impl PlatformRecord {
    pub fn validate(&self) -> Result<()> {
        require_positive("mass", self.mass)?;
        require_positive("freq", self.freq)?;
        require_positive("gamma_over_2pi", self.gamma_over_2pi)?;
        require_positive("xi", self.xi)?;
        require_positive("L", self.major_dimension)?;
        require_positive("d", self.separation)?;
        if let Some(x) = self.x_zp {
            require_positive("x_zp", x)?;
        }
        if let Some(t) = &self.torsional {
            require_positive("torsional.inertia", t.inertia)?;
            require_positive("torsional.lever_arm", t.lever_arm)?;
        }
        if let Some(g) = self.gamma_alt_over_2pi {
            require_positive("gamma_alt_over_2pi", g)?;
        }
        if self.separation < MIN_SEPARATION && !self.separation_exception {
            return Err(Error::invalid(
                "d",
                format!(
                    "separation {:.3e} m is below the {MIN_SEPARATION:.0e} m floor without an exception flag",
                    self.separation
                ),
            ));
        }
        Ok(())
    }

    /// Zero-point width from the mode parameters, unless the mass is flagged
    /// as effective.
    pub fn recomputed_x_zp(&self, c: &PhysicalConstants) -> Option<f64> {
        let w = 2.0 * PI * self.freq;
        match (&self.torsional, self.effective_mass) {
            (Some(t), _) => Some((c.hbar / (2.0 * t.inertia * w)).sqrt() * t.lever_arm),
            (None, false) => Some((c.hbar / (2.0 * self.mass * w)).sqrt()),
            (None, true) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformRow {
    pub label: String,
    pub name: String,
    pub geometry: Geometry,
    pub fom: Option<FomResult>,
    /// η using the alternate loss rate, when given.
    pub eta_alt: Option<f64>,
    pub x_zp_tabulated: Option<f64>,
    pub x_zp_recomputed: Option<f64>,
    /// recomputed / tabulated.
    pub x_zp_ratio: Option<f64>,
    pub error: Option<String>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformReport {
    /// Valid rows by descending η, then rows that failed validation.
    pub rows: Vec<PlatformRow>,
}

impl PlatformReport {
    pub fn rank_of(&self, label: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.label == label).map(|i| i + 1)
    }
}

fn evaluate_row(r: &PlatformRecord, c: &PhysicalConstants) -> PlatformRow {
    let mut row = PlatformRow {
        label: r.label.clone(),
        name: r.name.clone(),
        geometry: r.geometry,
        fom: None,
        eta_alt: None,
        x_zp_tabulated: r.x_zp,
        x_zp_recomputed: None,
        x_zp_ratio: None,
        error: None,
        notes: r.notes.clone(),
    };
    let result = (|| -> Result<()> {
        r.validate()?;
        let recomputed = r.recomputed_x_zp(c);
        row.x_zp_recomputed = recomputed;
        row.x_zp_ratio = recomputed.zip(r.x_zp).map(|(a, b)| a / b);
        let x_zp = r
            .x_zp
            .or(recomputed)
            .ok_or_else(|| Error::invalid("x_zp", "effective-mass rows need a tabulated x_zp"))?;
        let grad = force_gradient_with(c, r.mass, r.major_dimension, r.separation, r.geometry)?;
        let fom = eta_with(c, r.xi, grad, 2.0 * PI * r.gamma_over_2pi, x_zp)?;
        if let Some(ga) = r.gamma_alt_over_2pi {
            row.eta_alt = Some(eta_with(c, r.xi, grad, 2.0 * PI * ga, x_zp)?.eta);
        }
        row.fom = Some(fom);
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// Evaluates every record; per-row failures are reported in the row.
pub fn platform_table(records: &[PlatformRecord], constants: &PhysicalConstants, exec: Execution) -> PlatformReport {
    let mut rows = exec.map(records, |r| evaluate_row(r, constants));
    rows.sort_by(|a, b| match (&a.fom, &b.fom) {
        (Some(x), Some(y)) => y.eta.total_cmp(&x.eta),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    PlatformReport { rows }
}
