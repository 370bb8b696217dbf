//! Subcommand bodies. Each returns the files it produced; nothing touches
//! the disk until the whole computation has succeeded.

use std::f64::consts::PI;

use serde::Serialize;
use serde_json::json;
use torsionlab::beamlever::{s_max, scan_detector_plane, ScanRow};
use torsionlab::constants::K_B;
use torsionlab::gravfom::{brute_force_gradient, geometry_factor, platform_table, Geometry, PlatformReport};
use torsionlab::numerics::{linspace, logspace};
use torsionlab::quantum::{feedback_coherence_angle, thermal_coherence, FeedbackCoherence};
use torsionlab::response::{
    closed_loop_spectrum, free_running_angle_psd, integrate_band, require_stable, torque_referred_psd,
    StabilityReport,
};
use torsionlab::specan::{
    apparent_angle_psd, effective_temperature, fb_noise_fraction, fit_noise_budget, welch_psd_with, FitResult,
    TemperatureEstimate,
};
use torsionlab::timesim::{ringdown, simulate_closed_loop, ClosedLoopRun, RingdownOptions};
use torsionlab::{derive_all, DerivedQuantities, Execution, PhysicalConstants, SpectrumRecord};

use crate::config::Validated;
use crate::error::CliError;
use crate::output::{num, opt, Artifacts, Meta};

pub struct Ctx {
    pub v: Validated,
    pub meta: Meta,
    pub exec: Execution,
}

type Out = Result<Artifacts, CliError>;

struct LoopRun {
    run: ClosedLoopRun,
    psd: SpectrumRecord,
    stability: StabilityReport,
}

fn run_loop(ctx: &Ctx) -> Result<LoopRun, CliError> {
    let v = &ctx.v;
    let p = &v.config.oscillator;
    let stability = require_stable(&v.filter, p, &v.damping)?;
    let run = simulate_closed_loop(p, &v.filter, &v.damping, &v.config.noise, &v.plan)?;
    let s = &v.config.sim;
    let psd = welch_psd_with(&run.theta, s.welch_segment_s, s.welch_overlap, ctx.exec)?;
    Ok(LoopRun { run, psd, stability })
}

/// Model spectrum of the configured loop on the Welch grid.
fn model_spectrum(ctx: &Ctx, freqs: &[f64]) -> Result<Vec<[f64; 5]>, CliError> {
    let v = &ctx.v;
    let f: Vec<f64> = freqs.iter().copied().filter(|&f| f > 0.0).collect();
    let b = closed_loop_spectrum(&f, &v.filter, &v.config.oscillator, &v.damping, &v.config.noise, ctx.exec)?;
    Ok(f.iter()
        .zip(b)
        .map(|(&f, b)| [f, b.thermal, b.imprinted, b.vibration + b.radiation, b.total])
        .collect())
}

pub fn simulate(ctx: &Ctx) -> Out {
    simulate_artifacts(ctx, &run_loop(ctx)?)
}

fn simulate_artifacts(ctx: &Ctx, r: &LoopRun) -> Out {
    let m = &ctx.meta;
    let mut a = Artifacts::default();
    let extra = json!({
        "saturation_fraction": r.run.saturation_fraction,
        "saturation_flagged": r.run.flagged,
        "mode": ctx.v.plan.mode,
    });
    a.time_series(m, "theta", &r.run.theta, extra.clone())?;
    a.time_series(m, "feedback_torque", &r.run.torque, extra)?;
    a.spectrum(m, "psd_theta.csv", &r.psd)?;
    let model = model_spectrum(ctx, &r.psd.freqs)?;
    a.csv(
        m,
        "psd_model.csv",
        &["f_hz", "thermal", "imprinted", "excess_torque", "total"],
        model.iter().map(|row| row.iter().map(|x| num(*x)).collect()),
    )?;
    Ok(a)
}

#[derive(Debug, Serialize)]
struct Analysis {
    band_hz: [f64; 2],
    derived: DerivedQuantities,
    stability: StabilityReport,
    q_eff_model: f64,
    temperature: TemperatureEstimate,
    fit: FitResult,
    fb_noise_fraction: f64,
    saturation_fraction: f64,
}

fn analysis(ctx: &Ctx, r: &LoopRun) -> Result<Analysis, CliError> {
    let v = &ctx.v;
    let p = &v.config.oscillator;
    let fb = &v.config.feedback;
    let (f1, f2) = v.band();
    Ok(Analysis {
        band_hz: [f1, f2],
        derived: derive_all(p, fb.f_eff, fb.q_eff)?,
        stability: r.stability.clone(),
        q_eff_model: v.filter.q_eff(p, &v.damping)?,
        temperature: effective_temperature(&r.psd, p, &v.damping, fb.f_eff, f1, f2)?,
        fit: fit_noise_budget(&r.psd, &v.filter, p, &v.damping, &v.config.noise, (f1, f2))?,
        fb_noise_fraction: fb_noise_fraction(&v.filter, p, &v.damping, &v.config.noise, f1, f2)?,
        saturation_fraction: r.run.saturation_fraction,
    })
}

pub fn analyze(ctx: &Ctx) -> Out {
    let r = run_loop(ctx)?;
    let mut a = Artifacts::default();
    a.json(&ctx.meta, "analysis.json", analysis(ctx, &r)?)?;
    Ok(a)
}

#[derive(Debug, Serialize)]
struct CoherenceOut {
    occupation: f64,
    t_eff: f64,
    theta_zp: f64,
    q_eff: f64,
    fb_noise_fraction: f64,
    feedback: FeedbackCoherence,
    /// ξ_θ times the lever arm, m.
    xi_m: f64,
    /// θ_zp/√(2n+1), no suppression.
    xi_theta_thermal: f64,
}

fn coherence_of(ctx: &Ctx, an: &Analysis) -> Result<CoherenceOut, CliError> {
    let n = an.temperature.occupation;
    let q = ctx.v.config.feedback.q_eff;
    let fc = feedback_coherence_angle(an.derived.theta_zp, n, q, an.fb_noise_fraction)?;
    Ok(CoherenceOut {
        occupation: n,
        t_eff: an.temperature.t_eff,
        theta_zp: an.derived.theta_zp,
        q_eff: q,
        fb_noise_fraction: an.fb_noise_fraction,
        feedback: fc,
        xi_m: fc.xi_theta * ctx.v.config.oscillator.lever_arm,
        xi_theta_thermal: thermal_coherence(an.derived.theta_zp, n)?.xi,
    })
}

pub fn coherence(ctx: &Ctx) -> Out {
    let r = run_loop(ctx)?;
    let an = analysis(ctx, &r)?;
    let mut a = Artifacts::default();
    a.json(&ctx.meta, "coherence.json", coherence_of(ctx, &an)?)?;
    Ok(a)
}

fn fom_report(ctx: &Ctx) -> Result<PlatformReport, CliError> {
    let recs = ctx.v.platforms.as_ref().ok_or_else(|| CliError::Config("no platform table".into()))?;
    Ok(platform_table(recs, &PhysicalConstants::CODATA, ctx.exec))
}

fn fom_artifacts(ctx: &Ctx, rep: &PlatformReport) -> Out {
    let mut a = Artifacts::default();
    let rows = rep.rows.iter().map(|r| {
        let f = r.fom.as_ref();
        let notes = match &r.error {
            Some(e) if r.notes.is_empty() => format!("error: {e}"),
            Some(e) => format!("{}; error: {e}", r.notes),
            None => r.notes.clone(),
        };
        vec![
            r.label.clone(),
            opt(f.map(|f| f.eta)),
            opt(f.map(|f| f.eta_zp)),
            opt(f.map(|f| f.grad_f)),
            notes,
        ]
    });
    a.csv(&ctx.meta, "fom.csv", &["label", "eta", "eta_zp", "grad_F", "notes"], rows)?;
    a.json(&ctx.meta, "fom.json", rep)?;
    Ok(a)
}

pub fn fom(ctx: &Ctx) -> Out {
    fom_artifacts(ctx, &fom_report(ctx)?)
}

struct BeamOut {
    rows: Vec<ScanRow>,
    s_max_h: f64,
    s_max_v: f64,
}

fn beam_scan(ctx: &Ctx) -> Result<BeamOut, CliError> {
    let o = ctx.v.config.optics.as_ref().ok_or_else(|| CliError::Config("no optics section".into()))?;
    let (bh, bv) = ctx.v.beams.expect("validated with optics");
    let zs = linspace(o.scan.start, o.scan.stop, o.scan.points);
    Ok(BeamOut {
        rows: scan_detector_plane(&bh, &bv, &o.horizontal, &o.vertical, &zs, ctx.exec)?,
        s_max_h: s_max(&bh, &o.horizontal)?,
        s_max_v: s_max(&bv, &o.vertical)?,
    })
}

fn beam_artifacts(ctx: &Ctx, b: &BeamOut) -> Out {
    let mut a = Artifacts::default();
    let rows = b.rows.iter().map(|r| {
        [r.z, r.w_h, r.w_v, r.s_h, r.s_v, r.centroid_h, r.centroid_v]
            .iter()
            .map(|x| num(*x))
            .collect()
    });
    a.csv(
        &ctx.meta,
        "beam_scan.csv",
        &["z_m", "w_h_m", "w_v_m", "s_h", "s_v", "centroid_h_m_per_rad", "centroid_v_m_per_rad"],
        rows,
    )?;
    let best = |pick: fn(&ScanRow) -> f64| {
        b.rows.iter().max_by(|x, y| pick(x).total_cmp(&pick(y))).map(|r| (r.z, pick(r)))
    };
    let label = ctx.v.config.optics.as_ref().map(|o| o.label.clone()).unwrap_or_default();
    a.json(
        &ctx.meta,
        "beam.json",
        json!({
            "label": label,
            "s_max_h": b.s_max_h,
            "s_max_v": b.s_max_v,
            "best_h": best(|r| r.s_h).map(|(z, s)| json!({"z_m": z, "s": s})),
            "best_v": best(|r| r.s_v).map(|(z, s)| json!({"z_m": z, "s": s})),
        }),
    )?;
    Ok(a)
}

pub fn beam(ctx: &Ctx) -> Out {
    beam_artifacts(ctx, &beam_scan(ctx)?)
}

const GEOMETRIES: [Geometry; 3] = [Geometry::G1D, Geometry::G2D, Geometry::G3D];

#[derive(Debug, Clone, Serialize)]
struct OracleRow {
    a: f64,
    geometry: Geometry,
    closed_form: f64,
    brute_force: f64,
    rel_delta: f64,
    rel_error_estimate: f64,
}

fn geometry_tables(ctx: &Ctx) -> Result<(Vec<[f64; 4]>, Vec<OracleRow>), CliError> {
    let g = &ctx.v.config.geometry;
    let grid = logspace(g.a_min, g.a_max, g.points);
    let table = ctx.exec.try_map(&grid, |&a| -> Result<[f64; 4], CliError> {
        Ok([
            a,
            geometry_factor(a, Geometry::G1D)?,
            geometry_factor(a, Geometry::G2D)?,
            geometry_factor(a, Geometry::G3D)?,
        ])
    })?;
    let cases: Vec<(f64, Geometry)> = g.oracle_a.iter().flat_map(|&a| GEOMETRIES.map(|k| (a, k))).collect();
    // Unit mass and length: the brute-force gradient is 2G·f(a).
    let two_g = 2.0 * PhysicalConstants::CODATA.g;
    let oracle = ctx.exec.try_map(&cases, |&(a, k)| -> Result<OracleRow, CliError> {
        let cf = geometry_factor(a, k)?;
        let bf = brute_force_gradient(1.0, 1.0, a, k, g.oracle_resolution)?;
        let f_bf = bf.gradient / two_g;
        Ok(OracleRow {
            a,
            geometry: k,
            closed_form: cf,
            brute_force: f_bf,
            rel_delta: f_bf / cf - 1.0,
            rel_error_estimate: bf.error_estimate / bf.gradient,
        })
    })?;
    Ok((table, oracle))
}

fn geometry_artifacts(ctx: &Ctx, table: &[[f64; 4]], oracle: &[OracleRow]) -> Out {
    let mut a = Artifacts::default();
    a.csv(
        &ctx.meta,
        "geometry.csv",
        &["a", "f_1d", "f_2d", "f_3d"],
        table.iter().map(|r| r.iter().map(|x| num(*x)).collect()),
    )?;
    a.csv(
        &ctx.meta,
        "geometry_oracle.csv",
        &["a", "geometry", "closed_form", "brute_force", "rel_delta", "rel_error_estimate"],
        oracle.iter().map(|r| {
            vec![
                num(r.a),
                r.geometry.to_string(),
                num(r.closed_form),
                num(r.brute_force),
                num(r.rel_delta),
                num(r.rel_error_estimate),
            ]
        }),
    )?;
    Ok(a)
}

pub fn geometry(ctx: &Ctx) -> Out {
    let (t, o) = geometry_tables(ctx)?;
    geometry_artifacts(ctx, &t, &o)
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    expected: String,
    pass: bool,
}

fn within(name: &'static str, value: f64, target: f64, rel: f64) -> Check {
    Check {
        name,
        value,
        expected: format!("{target:e} ± {}%", rel * 100.0),
        pass: ((value - target) / target).abs() <= rel,
    }
}

fn holds(name: &'static str, value: f64, expected: &str, pass: bool) -> Check {
    Check {
        name,
        value,
        expected: expected.to_string(),
        pass,
    }
}

#[derive(Debug, Serialize)]
struct LadderRow {
    q_target: f64,
    q_eff_model: f64,
    t_eff: f64,
    occupation: f64,
}

/// Everything above in one bundle, plus the damping ladder, the free
/// ring-down, the torque-referred floor and a list of reference checks.
pub fn report(ctx: &Ctx) -> Out {
    let v = &ctx.v;
    let p = v.config.oscillator;
    let fb = &v.config.feedback;
    let (f1, f2) = v.band();
    let m = &ctx.meta;
    let mut out = Artifacts::default();
    let mut checks = Vec::new();

    // Loop run, analysis and coherence.
    let r = run_loop(ctx)?;
    out.extend(simulate_artifacts(ctx, &r)?.nest("simulate"));
    let an = analysis(ctx, &r)?;
    let co = coherence_of(ctx, &an)?;
    let free = derive_all(&p, p.f0, fb.q_eff)?;
    checks.push(within("free_occupation", free.n_th, 9.2e11, 0.02));
    checks.push(within("equipartition_angle_rad", free.equipartition_angle, 2.6e-6, 0.05));
    checks.push(within("theta_zp_rad", an.derived.theta_zp, 1.2e-12, 0.05));
    checks.push(within("q_app", an.derived.q_app, 6.1e5, 0.02));
    checks.push(within("gamma_app_over_2pi_hz", an.derived.gamma_app / (2.0 * PI), 29e-6, 0.05));
    checks.push(within("t_eff_k", an.temperature.t_eff, 238e-6, 0.15));
    checks.push(within("occupation", an.temperature.occupation, 2.8e5, 0.15));
    checks.push(within("xi_theta_rad", co.feedback.xi_theta, 1.2e-15, 0.25));
    checks.push(within("xi_m", co.xi_m, 1.2e-18, 0.25));
    checks.push(holds("suppression_s", co.feedback.s, "≥ 0.8", co.feedback.s >= 0.8));
    let mut ana = Artifacts::default();
    ana.json(m, "analysis.json", &an)?;
    ana.json(m, "coherence.json", &co)?;
    out.extend(ana.nest("analyze"));

    // Narrow-band equipartition capture over 10 apparent linewidths.
    let hw = an.derived.gamma_app / (4.0 * PI);
    let width = 20.0 * hw;
    let captured = integrate_band(
        |f| apparent_angle_psd(f, &p, &v.damping, fb.f_eff).unwrap_or(f64::NAN),
        fb.f_eff - width / 2.0,
        fb.f_eff + width / 2.0,
        fb.f_eff,
        hw,
    )?;
    let capture = captured / (K_B * p.t0 / (p.inertia * an.derived.omega_eff.powi(2)));
    checks.push(holds("equipartition_capture", capture, "≥ 0.94", capture >= 0.94));

    // Damping ladder.
    let ladder = ctx.exec.try_map(&v.ladder, |(q, filter)| -> Result<LadderRow, CliError> {
        let run = simulate_closed_loop(&p, filter, &v.damping, &v.config.noise, &v.plan)?;
        let s = &v.config.sim;
        let w = welch_psd_with(&run.theta, s.welch_segment_s, s.welch_overlap, Execution::Sequential)?;
        let t = effective_temperature(&w, &p, &v.damping, fb.f_eff, f1, f2)?;
        Ok(LadderRow {
            q_target: *q,
            q_eff_model: filter.q_eff(&p, &v.damping)?,
            t_eff: t.t_eff,
            occupation: t.occupation,
        })
    })?;
    if !ladder.is_empty() {
        let falling = ladder.windows(2).all(|w| w[1].t_eff < w[0].t_eff);
        let last = ladder.last().map(|r| r.t_eff).unwrap_or(f64::NAN);
        checks.push(holds("ladder_t_eff_decreasing", last, "monotone decrease", falling));
    }
    out.csv(
        m,
        "ladder.csv",
        &["q_target", "q_eff_model", "t_eff_k", "occupation"],
        ladder
            .iter()
            .map(|r| vec![num(r.q_target), num(r.q_eff_model), num(r.t_eff), num(r.occupation)]),
    )?;

    // Noise-free ring-down.
    let rd = ringdown(&p, 1e-4, 3000.0, &RingdownOptions { rate: None, thermal_seed: None })?;
    checks.push(within("ringdown_tau_s", rd.tau, p.ringdown_tau(), 0.01));
    checks.push(within("ringdown_q", rd.q, p.q0, 0.01));

    // Torque-referred floor of the free pendulum.
    let freqs = logspace(1.0, 100.0, 2001);
    let ang = SpectrumRecord::from_fn(&freqs, "rad^2/Hz", |f| free_running_angle_psd(f, &p, &v.damping, &v.config.noise))?;
    let tq = torque_referred_psd(&ang, &p, &v.damping)?;
    let (imin, min) = tq.psd.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
    let f_min = freqs[imin];
    checks.push(holds("torque_floor_freq_hz", f_min, "10–30 Hz", (10.0..=30.0).contains(&f_min)));
    let amp = min.sqrt();
    checks.push(holds(
        "torque_floor_nm_per_rthz",
        amp,
        "1.2e-18 within ×1.5",
        (1.2e-18 / 1.5..=1.2e-18 * 1.5).contains(&amp),
    ));
    out.spectrum(m, "torque_floor.csv", &tq)?;

    // Figure-of-merit table.
    if v.platforms.is_some() {
        let rep = fom_report(ctx)?;
        if let Some(row) = rep.rows.iter().find(|r| r.label == "This") {
            let eta = row.fom.map(|f| f.eta).unwrap_or(f64::NAN);
            checks.push(holds("eta_this", eta, "5e-6 within ×1.4", (5e-6 / 1.4..=5e-6 * 1.4).contains(&eta)));
            let rank = rep.rank_of("This").unwrap_or(0) as f64;
            checks.push(holds("eta_rank_this", rank, "2", rank == 2.0));
        }
        out.extend(fom_artifacts(ctx, &rep)?.nest("fom"));
    }

    // Optics.
    if v.config.optics.is_some() {
        let b = beam_scan(ctx)?;
        let peak = b.rows.iter().fold(0.0f64, |a, r| a.max(r.s_h / b.s_max_h).max(r.s_v / b.s_max_v));
        checks.push(holds("s_over_s_max", peak, "≤ 1", peak <= 1.0 + 1e-12));
        out.extend(beam_artifacts(ctx, &b)?.nest("beam"));
    }

    // Geometry factors.
    let (table, oracle) = geometry_tables(ctx)?;
    let worst = oracle.iter().fold(0.0f64, |a, r| a.max(r.rel_delta.abs()));
    checks.push(holds("geometry_oracle_max_rel_delta", worst, "< 1%", worst < 0.01));
    let far = table.last().expect("points ≥ 2");
    let far_dev = (1..4).map(|k| (far[k] * far[0].powi(3) - 1.0).abs()).fold(0.0, f64::max);
    checks.push(holds("geometry_point_limit_at_a_max", far_dev, "< 1%", far_dev < 0.01));
    out.extend(geometry_artifacts(ctx, &table, &oracle)?.nest("geometry"));

    let passed = checks.iter().filter(|c| c.pass).count();
    let files: Vec<String> = out.names().map(|p| p.to_string_lossy().into_owned()).collect();
    out.json(
        m,
        "report.json",
        json!({
            "checks": checks,
            "passed": passed,
            "total": checks.len(),
            "files": files,
        }),
    )?;
    Ok(out)
}
