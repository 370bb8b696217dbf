mod common;

use std::f64::consts::PI;

use common::{loglog_slope, rel};
use proptest::prelude::*;
use torsionlab::constants::K_B;
use torsionlab::numerics::linspace;
use torsionlab::response::*;
use torsionlab::specan::*;
use torsionlab::timesim::*;
use torsionlab::{Execution, OscillatorParams, SpectrumRecord, TimeSeries};

fn pendulum() -> (OscillatorParams, DampingModel) {
    let p = OscillatorParams::reference();
    (p, DampingModel::from_params(&p))
}

/// Independent resonator magnitude 1/(I·|ω_eff² − ω² + iωω_eff/Q|).
fn resonator(f: f64, fe: f64, q: f64, inertia: f64) -> f64 {
    let (w, we) = (2.0 * PI * f, 2.0 * PI * fe);
    1.0 / (inertia * ((we * we - w * w).powi(2) + (w * we / q).powi(2)).sqrt())
}

/// Grid concentrated around `fc` so a trapezoid resolves a line of
/// half-width `hw`.
fn peaked_grid(f1: f64, f2: f64, fc: f64, hw: f64) -> Vec<f64> {
    let mut g: Vec<f64> = linspace(f1, f2, 20001);
    for k in 0..40000 {
        let off = hw * 1e-3 * (1e7f64).powf(k as f64 / 39999.0);
        for x in [fc - off, fc + off] {
            if x > f1 && x < f2 {
                g.push(x);
            }
        }
    }
    g.push(fc);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

#[test]
fn white_noise_level_and_parseval() {
    let p = OscillatorParams::reference();
    let x = synth_colored_noise(|_| 2e-3, &SimPlan::new(600.0, 1000.0, 1, &p)).unwrap();
    let var = x.variance();
    let y = TimeSeries::new(1000.0, x.samples.iter().map(|v| v / var.sqrt()).collect(), 1, "w", "arb").unwrap();
    let w = welch_psd(&y, 1.0, 0.5).unwrap();
    let mean = w.psd.iter().sum::<f64>() / w.len() as f64;
    assert!(rel(mean, 2e-3) < 0.01, "{mean}");
    let total = band_integral(&w, w.freqs[0], w.freqs[w.len() - 1]).unwrap();
    // Excluded DC bin and half the first bin are within the 1% budget.
    assert!(rel(total, y.variance()) < 0.01, "{total}");
    assert!((w.freqs[1] - w.freqs[0] - 1.0).abs() < 1e-12);
}

#[test]
fn tone_power_is_half_amplitude_squared() {
    let a = 3e-6;
    let rate = 500.0;
    let s: Vec<f64> = (0..(rate as usize * 200)).map(|i| a * (2.0 * PI * 37.3 * i as f64 / rate).sin()).collect();
    let x = TimeSeries::new(rate, s, 0, "tone", "rad").unwrap();
    let w = welch_psd(&x, 4.0, 0.5).unwrap();
    let p = band_integral(&w, 35.0, 40.0).unwrap();
    assert!(rel(p, a * a / 2.0) < 0.01, "{p}");
}

#[test]
fn welch_rejects_short_or_bad_input() {
    let x = TimeSeries::new(100.0, vec![0.0; 100], 0, "x", "arb").unwrap();
    assert!(welch_psd(&x, 2.0, 0.5).is_err());
    assert!(welch_psd(&x, 0.1, 0.5).is_err());
    assert!(welch_psd(&x, 0.5, 1.0).is_err());
}

#[test]
fn welch_is_unbiased_over_seeds() {
    let p = OscillatorParams::reference();
    let seeds: Vec<u64> = (0..100).collect();
    let specs = Execution::default()
        .try_map(&seeds, |&s| {
            let x = synth_colored_noise(|_| 1.0, &SimPlan::new(200.0, 100.0, s, &p))?;
            welch_psd(&x, 1.0, 0.5)
        })
        .unwrap();
    // Bin 1 is excluded: per-segment mean removal takes out the part of it
    // that the Hann kernel shares with DC.
    for i in specs[0].band_indices(2.0, 49.0) {
        let m = specs.iter().map(|s| s.psd[i]).sum::<f64>() / specs.len() as f64;
        assert!(rel(m, 1.0) < 0.02, "bin {} {m}", specs[0].freqs[i]);
    }
}

#[test]
fn recovered_structural_slope() {
    let (p, d) = pendulum();
    let x = synth_colored_noise(|f| thermal_torque_psd(f, &p, &d).unwrap(), &SimPlan::new(600.0, 200.0, 9, &p)).unwrap();
    let w = welch_psd(&x, 10.0, 0.5).unwrap();
    let idx = w.band_indices(0.5, 50.0);
    assert!((loglog_slope(&w.freqs[idx.clone()], &w.psd[idx]) + 1.0).abs() < 0.1);
}

#[test]
fn apparent_spectrum_returns_bath_temperature() {
    let (p, d) = pendulum();
    let hw = d.gamma_at(2.0 * PI * 18.0).unwrap() / (4.0 * PI);
    let g = peaked_grid(8.0, 28.0, 18.0, hw);
    let s = SpectrumRecord::from_fn(&g, "rad^2/Hz", |f| apparent_angle_psd(f, &p, &d, 18.0)).unwrap();
    let t = effective_temperature(&s, &p, &d, 18.0, 8.0, 28.0).unwrap();
    assert!(rel(t.t_eff, p.t0) < 1e-6, "{}", t.t_eff);
    let n = K_B * t.t_eff / (torsionlab::constants::HBAR * 2.0 * PI * 18.0);
    assert!(rel(t.occupation, n) < 1e-12);
}

#[test]
fn narrow_band_capture_of_apparent_variance() {
    let (p, d) = pendulum();
    let dq = torsionlab::derive_all(&p, 18.0, 0.58).unwrap();
    let width = 10.0 * dq.gamma_app / (2.0 * PI);
    assert!(rel(width, 0.29e-3) < 0.02);
    let hw = dq.gamma_app / (4.0 * PI);
    let captured = integrate_band(
        |f| apparent_angle_psd(f, &p, &d, 18.0).unwrap(),
        18.0 - width / 2.0,
        18.0 + width / 2.0,
        18.0,
        hw,
    )
    .unwrap();
    let full = K_B * p.t0 / (p.inertia * dq.omega_eff.powi(2));
    // Lorentzian within ±10 half-widths: (2/π)·atan(10).
    let lorentz = 2.0 / PI * 10f64.atan();
    assert!((captured / full - lorentz).abs() < 1e-3, "{}", captured / full);
}

#[test]
fn temperature_scales_with_spectrum() {
    let (p, d) = pendulum();
    let f = LoopFilter::for_target(&p, 18.0, 0.58, DEFAULT_OMEGA_LAG).unwrap();
    let b = NoiseBudget::calibrated();
    let run = simulate_closed_loop(&p, &f, &d, &b, &SimPlan::new(100.0, 200.0, 4, &p)).unwrap();
    let w = welch_psd(&run.theta, 10.0, 0.5).unwrap();
    let t1 = effective_temperature(&w, &p, &d, 18.0, 8.0, 28.0).unwrap().t_eff;
    for k in [0.1, 3.0, 17.0] {
        let t2 = effective_temperature(&w.scaled(k * k), &p, &d, 18.0, 8.0, 28.0).unwrap().t_eff;
        assert!(rel(t2, k * k * t1) < 1e-12);
    }
}

#[test]
fn ladder_temperatures_fall_with_damping() {
    let (p, d) = pendulum();
    let b = NoiseBudget::calibrated();
    let mut last = f64::INFINITY;
    for q in [25.0, 10.0, 4.0, 1.5, 0.58] {
        let f = LoopFilter::for_target(&p, 18.0, q, DEFAULT_OMEGA_LAG).unwrap();
        let run = simulate_closed_loop(&p, &f, &d, &b, &SimPlan::new(600.0, 200.0, 31, &p)).unwrap();
        let w = welch_psd(&run.theta, 10.0, 0.5).unwrap();
        let t = effective_temperature(&w, &p, &d, 18.0, 8.0, 28.0).unwrap().t_eff;
        assert!(t < last, "q={q}: {t} ≥ {last}");
        last = t;
    }
}

#[test]
fn noiseless_susceptibility_round_trip() {
    let p = OscillatorParams::reference();
    let drive = 1e-34;
    let freqs = linspace(0.1, 100.0, 1000);
    let s = SpectrumRecord::from_fn(&freqs, "rad^2/Hz", |f| Ok(resonator(f, 18.0, 10.0, p.inertia).powi(2) * drive)).unwrap();
    let fit = fit_susceptibility(&s, drive, &p, (8.0, 28.0)).unwrap();
    let (fe, q) = (fit.f_eff.unwrap(), fit.q_eff.unwrap());
    assert!((fe - 18.0).abs() < 5e-4, "{fe}");
    assert!((q - 10.0).abs() < 5e-4, "{q}");
    assert!(fit.residual < 1e-10);
}

#[test]
fn susceptibility_fit_monte_carlo() {
    let p = OscillatorParams::reference();
    let drive = 1e-34;
    let seeds: Vec<u64> = (100..120).collect();
    let fits = Execution::default()
        .try_map(&seeds, |&s| {
            let x = synth_colored_noise(
                |f| resonator(f, 18.0, 10.0, p.inertia).powi(2) * drive,
                &SimPlan::new(600.0, 200.0, s, &p),
            )?;
            fit_susceptibility(&welch_psd(&x, 10.0, 0.5)?, drive, &p, (8.0, 28.0))
        })
        .unwrap();
    for r in &fits {
        assert!(rel(r.f_eff.unwrap(), 18.0) < 5e-3);
        assert!(rel(r.q_eff.unwrap(), 10.0) < 0.05, "{}", r.q_eff.unwrap());
        for c in &r.confidence {
            assert!(c.lo <= c.value && c.value <= c.hi);
        }
        assert!(r.residual >= 0.0);
    }
}

/// Each configuration's 95% intervals cover the true (f_eff, Q_eff) in at
/// least 17 of 20 seeds; a binomial(20, 0.95) falls below that 1.6% of the
/// time.
#[test]
fn ladder_configurations_recovered_within_confidence() {
    let (p, d) = pendulum();
    let drive = 1e-34;
    let budget = NoiseBudget {
        vibration_white_torque: drive,
        ..NoiseBudget::thermal_only()
    };
    for (i, q) in [25.0, 10.0, 4.0, 1.5, 0.58].into_iter().enumerate() {
        let f = LoopFilter::for_target(&p, 18.0, q, DEFAULT_OMEGA_LAG).unwrap().lead_only();
        let q_true = f.q_eff(&p, &d).unwrap();
        let seeds: Vec<u64> = (0..20).map(|s| 500 + 100 * i as u64 + s).collect();
        let fits = Execution::default()
            .try_map(&seeds, |&s| {
                let run = simulate_closed_loop(&p, &f, &d, &budget, &SimPlan::new(600.0, 200.0, s, &p))?;
                fit_susceptibility(&welch_psd(&run.theta, 10.0, 0.5)?, drive, &p, (8.0, 28.0))
            })
            .unwrap();
        let covered = |name: &str, truth: f64| {
            fits.iter()
                .filter(|r| {
                    let c = r.param(name).unwrap();
                    c.lo <= truth && truth <= c.hi
                })
                .count()
        };
        assert!(covered("f_eff", 18.0) >= 17, "q={q}: f_eff {}", covered("f_eff", 18.0));
        assert!(covered("q_eff", q_true) >= 17, "q={q}: q_eff {}", covered("q_eff", q_true));
    }
}

#[test]
fn susceptibility_fit_is_scale_invariant() {
    let p = OscillatorParams::reference();
    let x = synth_colored_noise(
        |f| resonator(f, 18.0, 4.0, p.inertia).powi(2) * 1e-34,
        &SimPlan::new(300.0, 200.0, 7, &p),
    )
    .unwrap();
    let w = welch_psd(&x, 10.0, 0.5).unwrap();
    let a = fit_susceptibility(&w, 1e-34, &p, (8.0, 28.0)).unwrap();
    let b = fit_susceptibility(&w.scaled(37.0), 37e-34, &p, (8.0, 28.0)).unwrap();
    assert!(rel(a.f_eff.unwrap(), b.f_eff.unwrap()) < 1e-8);
    assert!(rel(a.q_eff.unwrap(), b.q_eff.unwrap()) < 1e-6);
}

fn budget_run(v: f64, seed: u64) -> torsionlab::Result<FitResult> {
    let (p, d) = pendulum();
    let f = LoopFilter::for_target(&p, 18.0, 0.58, DEFAULT_OMEGA_LAG)?;
    let b = NoiseBudget {
        vibration_white_torque: v,
        ..NoiseBudget::calibrated()
    };
    let run = simulate_closed_loop(&p, &f, &d, &b, &SimPlan::new(600.0, 200.0, seed, &p))?;
    fit_noise_budget(&welch_psd(&run.theta, 10.0, 0.5)?, &f, &p, &d, &b, (8.0, 28.0))
}

#[test]
fn noise_budget_interval_coverage() {
    let v = NoiseBudget::calibrated().vibration_white_torque;
    let seeds: Vec<u64> = (1000..1050).collect();
    let fits = Execution::default().try_map(&seeds, |&s| budget_run(v, s)).unwrap();
    let covered = fits
        .iter()
        .filter(|r| {
            let c = r.param("vibration_white_torque").unwrap();
            c.lo <= v && v <= c.hi
        })
        .count();
    assert!(covered >= 45, "coverage {covered}/50");
    for r in &fits {
        assert!(r.residual < 2.0, "χ²/dof {}", r.residual);
    }
}

#[test]
fn noise_budget_null_case() {
    let r = budget_run(0.0, 77).unwrap();
    let c = r.param("vibration_white_torque").unwrap();
    assert!(c.lo <= 0.0 && 0.0 <= c.hi, "{c:?}");
}

#[test]
fn feedback_noise_fraction_properties() {
    let (p, d) = pendulum();
    let f = LoopFilter::for_target(&p, 18.0, 0.58, DEFAULT_OMEGA_LAG).unwrap();
    let quiet = NoiseBudget {
        detection_white: 0.0,
        ..NoiseBudget::calibrated()
    };
    assert_eq!(fb_noise_fraction(&f, &p, &d, &quiet, 8.0, 28.0).unwrap(), 0.0);
    let b = NoiseBudget::calibrated();
    let r1 = fb_noise_fraction(&f, &p, &d, &b, 8.0, 28.0).unwrap();
    let doubled = NoiseBudget {
        detection_white: 2.0 * b.detection_white,
        ..b.clone()
    };
    let r2 = fb_noise_fraction(&f, &p, &d, &doubled, 8.0, 28.0).unwrap();
    assert!(r2 > r1 && r1 > 0.0 && r2 < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn feedback_fraction_in_unit_interval(q in 0.3f64..30.0, det in 0.0f64..1e-17, knee in 0.0f64..20.0) {
        let (p, d) = pendulum();
        let f = LoopFilter::for_target(&p, 18.0, q, DEFAULT_OMEGA_LAG).unwrap();
        let b = NoiseBudget { detection_white: det, detection_pink_knee: knee, ..NoiseBudget::calibrated() };
        let r = fb_noise_fraction(&f, &p, &d, &b, 8.0, 28.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn welch_scales_quadratically(k in 1e-6f64..1e6) {
        let p = OscillatorParams::reference();
        let x = synth_colored_noise(|f| 1.0 / f, &SimPlan::new(20.0, 100.0, 3, &p)).unwrap();
        let y = TimeSeries::new(x.rate, x.samples.iter().map(|v| k * v).collect(), 3, "y", "arb").unwrap();
        let a = welch_psd(&x, 2.0, 0.5).unwrap();
        let b = welch_psd(&y, 2.0, 0.5).unwrap();
        for (u, v) in a.psd.iter().zip(&b.psd) {
            prop_assert!(rel(*v, k * k * u) < 1e-12);
        }
    }
}
