//! Gaussian-beam optical lever: propagation through thin and cylindrical
//! lenses with Gouy-phase tracking, tilt sensitivity and photon budget.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamState {
    /// m.
    pub wavelength: f64,
    /// Waist radius (1/e² intensity), m.
    pub waist: f64,
    /// Waist location along the axis, m (z = 0 at the start of the
    /// prescription).
    pub waist_position: f64,
    /// Gouy phase offset at the start, rad.
    #[serde(default)]
    pub gouy_accumulated: f64,
    pub axis: Axis,
}

impl BeamState {
    pub fn validate(&self) -> Result<()> {
        require_positive("wavelength", self.wavelength)?;
        require_positive("waist", self.waist)?;
        if !self.waist_position.is_finite() || !self.gouy_accumulated.is_finite() {
            return Err(Error::invalid("waist_position", "not finite"));
        }
        Ok(())
    }

    pub fn rayleigh_range(&self) -> f64 {
        PI * self.waist * self.waist / self.wavelength
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Element {
    FreeSpace { length: f64 },
    ThinLens { focal_length: f64 },
    CylindricalLens { focal_length: f64, axis: Axis },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalPrescription {
    pub elements: Vec<Element>,
    /// m.
    pub pendulum_position: f64,
}

impl OpticalPrescription {
    pub fn validate(&self) -> Result<()> {
        for e in &self.elements {
            match *e {
                Element::FreeSpace { length } => {
                    require_positive("free_space.length", length)?;
                }
                Element::ThinLens { focal_length } | Element::CylindricalLens { focal_length, .. } => {
                    if !(focal_length.is_finite() && focal_length != 0.0) {
                        return Err(Error::invalid("focal_length", "must be finite and nonzero"));
                    }
                }
            }
        }
        let ext = self.extent();
        if ext <= 0.0 {
            return Err(Error::invalid("elements", "prescription has zero length"));
        }
        if !(0.0..=ext).contains(&self.pendulum_position) {
            return Err(Error::invalid("pendulum_position", "outside the prescription"));
        }
        Ok(())
    }

    /// Total propagation length, m.
    pub fn extent(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| match e {
                Element::FreeSpace { length } => *length,
                _ => 0.0,
            })
            .sum()
    }

    /// Lenses acting on `axis`, as (position, focal length).
    fn lenses(&self, axis: Axis) -> Vec<(f64, f64)> {
        let mut z = 0.0;
        let mut out = Vec::new();
        for e in &self.elements {
            match *e {
                Element::FreeSpace { length } => z += length,
                Element::ThinLens { focal_length } => out.push((z, focal_length)),
                Element::CylindricalLens { focal_length, axis: a } if a == axis => out.push((z, focal_length)),
                Element::CylindricalLens { .. } => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    z_start: f64,
    z_w: f64,
    z_r: f64,
    offset: f64,
}

impl Segment {
    fn q(&self, z: f64) -> Complex64 {
        Complex64::new(z - self.z_w, self.z_r)
    }
    fn gouy(&self, z: f64) -> f64 {
        ((z - self.z_w) / self.z_r).atan() + self.offset
    }
}

/// Beam parameters along one axis of a prescription.
#[derive(Debug, Clone)]
pub struct BeamTrace {
    beam: BeamState,
    segments: Vec<Segment>,
    extent: f64,
    pendulum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSample {
    pub z: f64,
    /// Spot radius, m.
    pub w: f64,
    /// Wavefront radius of curvature, m (infinite at a waist).
    pub r: f64,
    pub gouy: f64,
}

impl BeamTrace {
    pub fn new(beam: &BeamState, prescription: &OpticalPrescription) -> Result<Self> {
        beam.validate()?;
        prescription.validate()?;
        let mut seg = Segment {
            z_start: 0.0,
            z_w: beam.waist_position,
            z_r: beam.rayleigh_range(),
            offset: 0.0,
        };
        seg.offset += beam.gouy_accumulated - seg.gouy(0.0);
        let mut segments = vec![seg];
        for (zl, f) in prescription.lenses(beam.axis) {
            let prev = *segments.last().expect("non-empty");
            let q_out = 1.0 / (1.0 / prev.q(zl) - 1.0 / f);
            if !(q_out.im > 0.0) {
                return Err(Error::Domain("lens produced a non-physical beam".into()));
            }
            let mut next = Segment {
                z_start: zl,
                z_w: zl - q_out.re,
                z_r: q_out.im,
                offset: 0.0,
            };
            next.offset = prev.gouy(zl) - ((zl - next.z_w) / next.z_r).atan();
            segments.push(next);
        }
        Ok(BeamTrace {
            beam: *beam,
            segments,
            extent: prescription.extent(),
            pendulum: prescription.pendulum_position,
        })
    }

    fn segment_at(&self, z: f64) -> Result<&Segment> {
        if !(0.0..=self.extent).contains(&z) {
            return Err(Error::invalid(
                "z",
                format!("{z} m is outside the prescription [0, {}] m", self.extent),
            ));
        }
        let i = self.segments.partition_point(|s| s.z_start <= z);
        Ok(&self.segments[i.max(1) - 1])
    }

    pub fn sample(&self, z: f64) -> Result<BeamSample> {
        let s = self.segment_at(z)?;
        let w0 = (self.beam.wavelength * s.z_r / PI).sqrt();
        let dz = z - s.z_w;
        Ok(BeamSample {
            z,
            w: w0 * (1.0 + (dz / s.z_r).powi(2)).sqrt(),
            r: if dz == 0.0 { f64::INFINITY } else { dz * (1.0 + (s.z_r / dz).powi(2)) },
            gouy: s.gouy(z),
        })
    }

    fn q_at(&self, z: f64) -> Result<Complex64> {
        Ok(self.segment_at(z)?.q(z))
    }

    /// Signed sensitivity (√(32π)/λ)·w_p·sin(φ(z) − φ(z_p)).
    fn signed_sensitivity(&self, z_detect: f64) -> Result<f64> {
        if z_detect < self.pendulum {
            return Err(Error::invalid("z_detect", "must be downstream of the pendulum"));
        }
        let p = self.sample(self.pendulum)?;
        let d = self.sample(z_detect)?;
        Ok(s_max_for(self.beam.wavelength, p.w) * (d.gouy - p.gouy).sin())
    }

    /// ABCD matrix from the pendulum plane to `z_detect`.
    fn abcd_to(&self, prescription: &OpticalPrescription, z_detect: f64) -> [[f64; 2]; 2] {
        let mul = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
            [
                [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
                [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
            ]
        };
        let mut m = [[1.0, 0.0], [0.0, 1.0]];
        let mut z = self.pendulum;
        for (zl, f) in prescription.lenses(self.beam.axis) {
            if zl > self.pendulum && zl <= z_detect {
                m = mul([[1.0, zl - z], [0.0, 1.0]], m);
                m = mul([[1.0, 0.0], [-1.0 / f, 1.0]], m);
                z = zl;
            }
        }
        mul([[1.0, z_detect - z], [0.0, 1.0]], m)
    }
}

fn s_max_for(wavelength: f64, w_p: f64) -> f64 {
    (32.0 * PI).sqrt() / wavelength * w_p
}

/// Spot size, curvature and Gouy phase at each `z_samples` point. A point on
/// a lens plane is evaluated just downstream of the lens.
pub fn propagate(beam: &BeamState, prescription: &OpticalPrescription, z_samples: &[f64]) -> Result<Vec<BeamSample>> {
    let t = BeamTrace::new(beam, prescription)?;
    z_samples.iter().map(|&z| t.sample(z)).collect()
}

/// S(z) = (√(32π)/λ)·w_p·|sin Δφ|, rad⁻¹.
pub fn tilt_sensitivity(beam: &BeamState, prescription: &OpticalPrescription, z_detect: f64) -> Result<f64> {
    Ok(BeamTrace::new(beam, prescription)?.signed_sensitivity(z_detect)?.abs())
}

/// (√(32π)/λ)·w_p, the bound on S over all detector planes.
pub fn s_max(beam: &BeamState, prescription: &OpticalPrescription) -> Result<f64> {
    let t = BeamTrace::new(beam, prescription)?;
    Ok(s_max_for(beam.wavelength, t.sample(prescription.pendulum_position)?.w))
}

/// Largest input-grid size the split-detector oracle will use.
const ORACLE_MAX_INPUT_POINTS: usize = 1 << 18;

/// dS/dθ of the normalised split-detector signal, from a direct Collins
/// diffraction integral of the tilted beam between the pendulum and the
/// detector, differentiated by central difference in θ.
pub fn split_detector_oracle(
    beam: &BeamState,
    prescription: &OpticalPrescription,
    z_detect: f64,
    theta: f64,
    grid_points: usize,
) -> Result<f64> {
    require_positive("theta", theta)?;
    if theta > 1e-4 {
        return Err(Error::invalid("theta", "must be at most 1e-4 rad (small-angle regime)"));
    }
    if grid_points < 64 {
        return Err(Error::invalid("grid_points", "must be at least 64"));
    }
    let t = BeamTrace::new(beam, prescription)?;
    if z_detect < prescription.pendulum_position {
        return Err(Error::invalid("z_detect", "must be downstream of the pendulum"));
    }
    let lambda = beam.wavelength;
    let k0 = 2.0 * PI / lambda;
    let p = t.sample(prescription.pendulum_position)?;
    let d = t.sample(z_detect)?;
    let q1 = t.q_at(prescription.pendulum_position)?;
    let m = t.abcd_to(prescription, z_detect);
    let (a, b) = (m[0][0], m[0][1]);
    if b.abs() < 1e-9 * p.w * p.w / lambda {
        // Detector plane images the pendulum: no tilt signal.
        return Ok(0.0);
    }
    let x1_half = 6.0 * p.w;
    let x2_half = 6.0 * d.w;
    let inv_q1 = 1.0 / q1;
    let rate = k0 * ((a / b).abs() * x1_half + x2_half / b.abs() + inv_q1.re.abs() * x1_half + 2.0 * theta);
    let h_needed = (p.w / 8.0).min(1.0 / rate);
    let n_in = ((2.0 * x1_half / h_needed).ceil() as usize).max(grid_points) | 1;
    if n_in > ORACLE_MAX_INPUT_POINTS {
        return Err(Error::Tolerance(format!(
            "Collins integrand needs {n_in} samples; detector plane too close to an image plane"
        )));
    }
    let n_out = grid_points | 1;
    let h1 = 2.0 * x1_half / (n_in - 1) as f64;
    let h2 = 2.0 * x2_half / (n_out - 1) as f64;
    let x1: Vec<f64> = (0..n_in).map(|j| -x1_half + j as f64 * h1).collect();
    let kappa = 2.0 * PI / (lambda * b);

    let signal = |tilt: f64| -> f64 {
        let src: Vec<Complex64> = x1
            .iter()
            .map(|&x| {
                let phase = Complex64::new(0.0, -0.5 * k0 * x * x) * inv_q1
                    + Complex64::new(0.0, 2.0 * tilt * k0 * x - PI * a * x * x / (lambda * b));
                phase.exp()
            })
            .collect();
        let mut left = 0.0;
        let mut right = 0.0;
        let mid = n_out / 2;
        for i in 0..n_out {
            let x2 = -x2_half + i as f64 * h2;
            let step = Complex64::from_polar(1.0, kappa * h1 * x2);
            let mut rot = Complex64::from_polar(1.0, kappa * x1[0] * x2);
            let mut acc = Complex64::new(0.0, 0.0);
            for s in &src {
                acc += s * rot;
                rot *= step;
            }
            let inten = acc.norm_sqr();
            let edge = |j: usize| if j == 0 || j == n_out - 1 { 0.5 } else { 1.0 };
            if i < mid {
                left += inten * edge(i);
            } else if i > mid {
                right += inten * edge(i);
            } else {
                left += 0.5 * inten;
                right += 0.5 * inten;
            }
        }
        (right - left) / (right + left)
    };
    Ok(((signal(theta) - signal(-theta)) / (2.0 * theta)).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidPhotons {
    /// Beam centroid displacement at the detector, m.
    pub centroid_shift: f64,
    /// Shot-noise-limited photons needed to resolve θ, 1/(Sθ)².
    pub photons_required: f64,
}

pub fn centroid_and_photons(
    beam: &BeamState,
    prescription: &OpticalPrescription,
    z_detect: f64,
    theta: f64,
) -> Result<CentroidPhotons> {
    require_positive("theta", theta)?;
    let t = BeamTrace::new(beam, prescription)?;
    let s = t.signed_sensitivity(z_detect)?.abs();
    let w = t.sample(z_detect)?.w;
    Ok(CentroidPhotons {
        centroid_shift: s * theta * w * (PI / 8.0).sqrt(),
        photons_required: 1.0 / (s * theta).powi(2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub z: f64,
    pub w_h: f64,
    pub w_v: f64,
    pub s_h: f64,
    pub s_v: f64,
    /// d(centroid)/dθ, m/rad.
    pub centroid_h: f64,
    pub centroid_v: f64,
}

/// Both axes over a detector-position grid.
pub fn scan_detector_plane(
    beam_h: &BeamState,
    beam_v: &BeamState,
    prescription_h: &OpticalPrescription,
    prescription_v: &OpticalPrescription,
    z_grid: &[f64],
    exec: Execution,
) -> Result<Vec<ScanRow>> {
    if beam_h.axis != Axis::Horizontal || beam_v.axis != Axis::Vertical {
        return Err(Error::invalid("axis", "expected one horizontal and one vertical beam"));
    }
    if z_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("z_grid", "must be strictly increasing"));
    }
    let th = BeamTrace::new(beam_h, prescription_h)?;
    let tv = BeamTrace::new(beam_v, prescription_v)?;
    let k = (PI / 8.0).sqrt();
    exec.try_map(z_grid, |&z| {
        let (h, v) = (th.sample(z)?, tv.sample(z)?);
        let sh = th.signed_sensitivity(z)?.abs();
        let sv = tv.signed_sensitivity(z)?.abs();
        Ok(ScanRow {
            z,
            w_h: h.w,
            w_v: v.w,
            s_h: sh,
            s_v: sv,
            centroid_h: sh * h.w * k,
            centroid_v: sv * v.w * k,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beam() -> BeamState {
        BeamState {
            wavelength: 780e-9,
            waist: 100e-6,
            waist_position: 0.0,
            gouy_accumulated: 0.0,
            axis: Axis::Horizontal,
        }
    }

    #[test]
    fn s_max_reference_value() {
        let p = OpticalPrescription {
            elements: vec![Element::FreeSpace { length: 1.0 }],
            pendulum_position: 0.0,
        };
        let s = s_max(&beam(), &p).unwrap();
        assert!((s - 1285.5).abs() < 0.5, "{s}");
        assert_eq!(tilt_sensitivity(&beam(), &p, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn lens_plane_is_downstream() {
        let p = OpticalPrescription {
            elements: vec![
                Element::FreeSpace { length: 0.5 },
                Element::ThinLens { focal_length: 0.1 },
                Element::FreeSpace { length: 0.5 },
            ],
            pendulum_position: 0.0,
        };
        let t = BeamTrace::new(&beam(), &p).unwrap();
        let s = t.sample(0.5).unwrap();
        // Converging after the lens.
        assert!(s.r < 0.0);
        assert!(t.sample(0.4999).unwrap().r > 0.0);
    }

    #[test]
    fn rejects_bad_prescriptions() {
        let p = OpticalPrescription {
            elements: vec![Element::ThinLens { focal_length: 0.0 }],
            pendulum_position: 0.0,
        };
        assert!(p.validate().is_err());
        let p = OpticalPrescription {
            elements: vec![Element::FreeSpace { length: 1.0 }],
            pendulum_position: 2.0,
        };
        assert!(p.validate().is_err());
    }
}
