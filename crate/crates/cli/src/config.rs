//! Run configuration and its validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use torsionlab::beamlever::{Axis, BeamState, OpticalPrescription};
use torsionlab::gravfom::PlatformRecord;
use torsionlab::response::{DampingModel, LoopFilter, NoiseBudget, DEFAULT_OMEGA_LAG};
use torsionlab::timesim::{default_actuator_clamp, SimMode, SimPlan, DEFAULT_PUSH_POWER};
use torsionlab::{derive_all, OscillatorParams, DEFAULT_BAND};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub oscillator: OscillatorParams,
    pub feedback: FeedbackConfig,
    pub noise: NoiseBudget,
    pub sim: SimConfig,
    /// Analysis band, Hz.
    #[serde(default = "default_band")]
    pub band: [f64; 2],
    /// Output directory, relative to the config file.
    pub outputs: String,
    /// Platform table for `fom`, relative to the config file.
    #[serde(default)]
    pub platforms: Option<String>,
    #[serde(default)]
    pub optics: Option<OpticsConfig>,
    #[serde(default)]
    pub geometry: GeometryConfig,
}

fn default_band() -> [f64; 2] {
    [DEFAULT_BAND.0, DEFAULT_BAND.1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    /// Closed-loop resonance, Hz.
    pub f_eff: f64,
    pub q_eff: f64,
    /// Lag corner, rad/s.
    #[serde(default = "default_omega_lag")]
    pub omega_lag: f64,
    /// Q_eff values of the damping ladder run by `report`.
    #[serde(default)]
    pub ladder: Vec<f64>,
}

fn default_omega_lag() -> f64 {
    DEFAULT_OMEGA_LAG
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: SimMode,
    /// N·m; defaults to the push-beam radiation-pressure bound.
    #[serde(default)]
    pub actuator_torque_max: Option<f64>,
    #[serde(default = "default_segment")]
    pub welch_segment_s: f64,
    #[serde(default = "default_overlap")]
    pub welch_overlap: f64,
}

fn default_segment() -> f64 {
    10.0
}

fn default_overlap() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    /// Free text; example prescriptions say they are illustrative here.
    #[serde(default)]
    pub label: String,
    /// m.
    pub wavelength: f64,
    /// Waist radius at the pendulum, m.
    pub waist: f64,
    #[serde(default)]
    pub waist_position: f64,
    pub horizontal: OpticalPrescription,
    pub vertical: OpticalPrescription,
    pub scan: ScanGrid,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub a_min: f64,
    pub a_max: f64,
    pub points: usize,
    /// a values checked against the brute-force integral.
    pub oracle_a: Vec<f64>,
    pub oracle_resolution: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            a_min: 0.01,
            a_max: 100.0,
            points: 41,
            oracle_a: vec![0.25, 0.5, 1.0, 2.0, 10.0],
            oracle_resolution: 128,
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub band: Option<[f64; 2]>,
    pub table: Option<PathBuf>,
}

/// A configuration whose invariants have all been checked, with the derived
/// objects every subcommand needs.
#[derive(Debug, Clone)]
pub struct Validated {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub damping: DampingModel,
    pub filter: LoopFilter,
    pub ladder: Vec<(f64, LoopFilter)>,
    pub plan: SimPlan,
    pub platforms: Option<Vec<PlatformRecord>>,
    pub beams: Option<(BeamState, BeamState)>,
}

impl Validated {
    pub fn band(&self) -> (f64, f64) {
        (self.config.band[0], self.config.band[1])
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check<T>(r: torsionlab::Result<T>, what: &str) -> Result<T, CliError> {
    r.map_err(|e| invalid(format!("{what}: {e}")))
}

/// Reads and validates `path`, applying overrides. Performs no writes.
pub fn load(path: &Path, ov: &Overrides, need: Need) -> Result<Validated, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut config: RunConfig =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if let Some(s) = ov.seed {
        config.sim.seed = s;
    }
    if let Some(b) = ov.band {
        config.band = b;
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(t) = &ov.table {
        config.platforms = Some(t.to_string_lossy().into_owned());
    }
    validate(config, base_dir, need)
}

/// Which optional sections a subcommand requires.
#[derive(Debug, Clone, Copy, Default)]
pub struct Need {
    pub platforms: bool,
    pub optics: bool,
}

fn validate(config: RunConfig, base_dir: PathBuf, need: Need) -> Result<Validated, CliError> {
    let p = config.oscillator;
    check(p.validate(), "oscillator")?;
    check(config.noise.validate(), "noise")?;

    let fb = &config.feedback;
    check(derive_all(&p, fb.f_eff, fb.q_eff), "feedback")?;
    let filter = check(LoopFilter::for_target(&p, fb.f_eff, fb.q_eff, fb.omega_lag), "feedback")?;
    let ladder = fb
        .ladder
        .iter()
        .map(|&q| check(LoopFilter::for_target(&p, fb.f_eff, q, fb.omega_lag), "feedback.ladder").map(|f| (q, f)))
        .collect::<Result<Vec<_>, _>>()?;

    let s = &config.sim;
    let clamp = s.actuator_torque_max.unwrap_or_else(|| default_actuator_clamp(&p, DEFAULT_PUSH_POWER));
    let plan = SimPlan {
        duration: s.duration,
        rate: s.rate,
        seed: s.seed,
        actuator_torque_max: clamp,
        mode: s.mode,
    };
    check(plan.validate(), "sim")?;
    if !(s.welch_segment_s.is_finite() && s.welch_segment_s > 0.0 && s.welch_segment_s <= s.duration) {
        return Err(invalid("sim.welch_segment_s must lie in (0, duration]"));
    }
    if !(s.welch_segment_s * s.rate >= 8.0) {
        return Err(invalid("sim.welch_segment_s must hold at least 8 samples"));
    }
    if !(0.0..1.0).contains(&s.welch_overlap) {
        return Err(invalid("sim.welch_overlap must lie in [0, 1)"));
    }
    if s.mode == SimMode::TimeDomain {
        // The time-domain loop needs its lag pole resolved.
        if s.rate < 6.0 * fb.omega_lag / (2.0 * std::f64::consts::PI) {
            return Err(invalid("sim.rate too low for the time-domain loop (need ≥ 6× the lag corner)"));
        }
    }

    let [f1, f2] = config.band;
    if !(f1.is_finite() && f2.is_finite() && f1 > 0.0 && f2 > f1) {
        return Err(invalid(format!("band must satisfy 0 < f1 < f2, got {f1},{f2}")));
    }
    if f2 > s.rate / 2.0 {
        return Err(invalid(format!("band upper edge {f2} Hz exceeds Nyquist {}", s.rate / 2.0)));
    }
    if f1 < 1.0 / s.welch_segment_s {
        return Err(invalid("band lower edge is below the Welch resolution"));
    }

    let g = &config.geometry;
    if !(g.a_min > 0.0 && g.a_max > g.a_min && g.a_max.is_finite()) || g.points < 2 {
        return Err(invalid("geometry grid must satisfy 0 < a_min < a_max and points ≥ 2"));
    }
    if g.oracle_resolution < 64 {
        return Err(invalid("geometry.oracle_resolution must be at least 64"));
    }
    if g.oracle_a.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(invalid("geometry.oracle_a entries must be positive"));
    }

    let platforms = match &config.platforms {
        Some(rel) => Some(read_platforms(&base_dir.join(rel))?),
        None if need.platforms => return Err(invalid("no platform table: set `platforms` or pass --table")),
        None => None,
    };

    let beams = match &config.optics {
        Some(o) => Some(validate_optics(o)?),
        None if need.optics => return Err(invalid("no `optics` section in config")),
        None => None,
    };

    let out_dir = base_dir.join(&config.outputs);
    Ok(Validated {
        damping: DampingModel::from_params(&p),
        config,
        out_dir,
        filter,
        ladder,
        plan,
        platforms,
        beams,
    })
}

fn read_platforms(path: &Path) -> Result<Vec<PlatformRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let recs: Vec<PlatformRecord> =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if recs.is_empty() {
        return Err(invalid(format!("{}: empty platform table", path.display())));
    }
    Ok(recs)
}

fn validate_optics(o: &OpticsConfig) -> Result<(BeamState, BeamState), CliError> {
    let bh = BeamState {
        wavelength: o.wavelength,
        waist: o.waist,
        waist_position: o.waist_position,
        gouy_accumulated: 0.0,
        axis: Axis::Horizontal,
    };
    let bv = BeamState { axis: Axis::Vertical, ..bh };
    check(bh.validate(), "optics")?;
    check(o.horizontal.validate(), "optics.horizontal")?;
    check(o.vertical.validate(), "optics.vertical")?;
    let sc = o.scan;
    if sc.points < 2 || !(sc.stop > sc.start) {
        return Err(invalid("optics.scan needs start < stop and points ≥ 2"));
    }
    for pr in [&o.horizontal, &o.vertical] {
        if sc.start < pr.pendulum_position || sc.stop > pr.extent() {
            return Err(invalid("optics.scan extends outside a prescription"));
        }
    }
    Ok((bh, bv))
}

/// Parses `f1,f2`.
pub fn parse_band(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected f1,f2".into());
    }
    let f = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t}: {e}"));
    Ok([f(parts[0])?, f(parts[1])?])
}
