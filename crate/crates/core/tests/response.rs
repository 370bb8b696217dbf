use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use torsionlab::constants::K_B;
use torsionlab::numerics::{integrate_with_breakpoints, logspace, QuadTol};
use torsionlab::response::*;
use torsionlab::{DampingLaw, OscillatorParams, SpectrumRecord};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn pendulum() -> (OscillatorParams, DampingModel) {
    let p = OscillatorParams::reference();
    (p, DampingModel::from_params(&p))
}

fn viscous() -> (OscillatorParams, DampingModel) {
    let mut p = OscillatorParams::reference();
    p.damping_law = DampingLaw::Viscous;
    (p, DampingModel::from_params(&p))
}

/// Independent susceptibility: 1/(I(ω0² − ω² + iωγ)).
fn chi_ref(f: f64, p: &OscillatorParams, gamma: f64) -> Complex64 {
    let w = 2.0 * PI * f;
    let w0 = 2.0 * PI * p.f0;
    Complex64::new(1.0, 0.0) / (p.inertia * Complex64::new(w0 * w0 - w * w, w * gamma))
}

#[test]
fn susceptibility_limits() {
    let (p, v) = viscous();
    let dc = chi_mech(0.0, &p, &v).unwrap().norm();
    assert!(rel(dc, 1.70e9) < 0.01, "{dc}");
    let peak = chi_mech(p.f0, &p, &v).unwrap().norm();
    assert!(rel(peak, p.q0 / (p.inertia * p.omega0().powi(2))) < 1e-12);
    assert!(rel(peak, 1.46e14) < 0.01);
    // Dense scan locates the maximum at f0.
    let grid: Vec<f64> = (0..20001).map(|i| 6.71 + i as f64 * 1e-6).collect();
    let best = grid
        .iter()
        .max_by(|a, b| chi_mech(**a, &p, &v).unwrap().norm().total_cmp(&chi_mech(**b, &p, &v).unwrap().norm()))
        .unwrap();
    assert!((best - p.f0).abs() < 1e-5);
    let (_, s) = pendulum();
    assert_eq!(chi_mech(p.f0, &p, &s).unwrap(), chi_mech(p.f0, &p, &v).unwrap());
    assert!((chi_mech(3.0, &p, &s).unwrap() - chi_ref(3.0, &p, p.gamma0() * p.f0 / 3.0)).norm() < 1e-10 * dc);
}

#[test]
fn viscous_equipartition_by_quadrature() {
    let (p, v) = viscous();
    let hw = p.gamma0() / (4.0 * PI);
    let mut pts = vec![0.0, 1e4];
    for k in [1.0, 10.0, 100.0, 1e3] {
        pts.push(p.f0 - k * hw);
        pts.push(p.f0 + k * hw);
    }
    pts.push(p.f0);
    pts.sort_by(f64::total_cmp);
    let var = integrate_with_breakpoints(
        |f| chi_mech(f, &p, &v).unwrap().norm_sqr() * thermal_torque_psd(f, &p, &v).unwrap(),
        &pts,
        QuadTol::rel(1e-10),
    )
    .unwrap()
    .value;
    let expect = K_B * p.t0 / (p.inertia * p.omega0().powi(2));
    // The tail above 10 kHz falls as f⁻⁴ and is negligible.
    assert!(rel(var, expect) < 5e-3, "{var} vs {expect}");
}

#[test]
fn zero_point_spectrum() {
    let (p, s) = pendulum();
    for f in [1.0, 6.0, 18.0, 50.0] {
        let r = thermal_angle_psd(f, &p, &s).unwrap() / zp_angle_psd(f, &p, &s).unwrap();
        assert!(rel(r, 1.84e12) < 0.02, "{r}");
    }
    let mut cold = p;
    cold.t0 = 0.0;
    // With T0 = 0 both spectra vanish identically.
    assert_eq!(zp_angle_psd(5.0, &cold, &s).unwrap(), thermal_angle_psd(5.0, &cold, &s).unwrap());

    // Viscous: ∫S_zp df = θ_zp² at ω0 (high-Q limit).
    let (p, v) = viscous();
    let hw = p.gamma0() / (4.0 * PI);
    let mut pts = vec![0.0, 1e4, p.f0];
    for k in [1.0, 10.0, 100.0, 1e3] {
        pts.push(p.f0 - k * hw);
        pts.push(p.f0 + k * hw);
    }
    pts.sort_by(f64::total_cmp);
    let zp = integrate_with_breakpoints(|f| zp_angle_psd(f, &p, &v).unwrap(), &pts, QuadTol::rel(1e-10))
        .unwrap()
        .value;
    let n = p.occupation_at(p.omega0());
    let theta_zp_sq = theta_zp_sq_bare(&p);
    // ∫S_zp = k_BT/(Iω0²)/(2n+1) = θ_zp²·2n/(2n+1).
    assert!(rel(zp, theta_zp_sq * 2.0 * n / (2.0 * n + 1.0)) < 5e-3);
}

#[test]
fn thermal_torque_amplitude_and_slope() {
    let (p, s) = pendulum();
    let amp = thermal_torque_psd(20.0, &p, &s).unwrap().sqrt();
    assert!(amp > 1.2e-18 / 1.5 && amp < 1.2e-18 * 1.5, "{amp}");
    let (a, b) = (thermal_torque_psd(1.0, &p, &s).unwrap(), thermal_torque_psd(100.0, &p, &s).unwrap());
    let slope = (b / a).log10() / 2.0;
    assert!((slope + 1.0).abs() < 1e-12);
}

#[test]
fn exact_and_lead_only_filters_agree_in_band() {
    let (p, _) = pendulum();
    let f = LoopFilter::for_target(&p, 18.0, 0.58, DEFAULT_OMEGA_LAG).unwrap();
    for fr in logspace(0.1, 28.0, 200) {
        let e = loop_filter_g(fr, &f, &p).norm();
        let a = loop_filter_g(fr, &f.lead_only(), &p).norm();
        assert!(rel(e, a) < 0.01);
    }
}

#[test]
fn closed_loop_peak_sits_at_shifted_resonance() {
    let (p, s) = pendulum();
    let f = LoopFilter::for_target(&p, 18.0, 10.0, DEFAULT_OMEGA_LAG).unwrap();
    assert!(rel(f.g, 6.18) < 1e-3);
    let grid: Vec<f64> = (0..40001).map(|i| 16.0 + i as f64 * 1e-4).collect();
    let best = grid
        .iter()
        .copied()
        .max_by(|a, b| chi_eff(*a, &f, &p, &s).unwrap().norm().total_cmp(&chi_eff(*b, &f, &p, &s).unwrap().norm()))
        .unwrap();
    // Peak of |χ_eff| for Q = 10 lies at f_eff·√(1 − 1/(2Q²)) ≈ 17.955 Hz.
    assert!((best - 18.0 * (1.0 - 1.0 / 200.0f64).sqrt()).abs() < 0.02, "{best}");
}

/// First-order lag-pole deviation:
/// g·ω0²·|1 + iω/ω_lead|·(ω/ω_lag)/|ω_eff² − ω² + iωγ_eff|.
fn lag_deviation_bound(f: f64, flt: &LoopFilter, p: &OscillatorParams, s: &DampingModel) -> f64 {
    let w = 2.0 * PI * f;
    let we = flt.omega_eff(p);
    let ge = flt.gamma_fb(p) + s.gamma_at(w).unwrap();
    let d = Complex64::new(we * we - w * w, w * ge).norm();
    let lead = Complex64::new(1.0, w / flt.omega_lead).norm();
    flt.g * p.omega0().powi(2) * lead * (w / flt.omega_lag) / d
}

#[test]
fn composed_and_closed_form_agree_for_wide_lag() {
    let (p, s) = pendulum();
    for q in [25.0, 10.0, 4.0, 1.5, 0.58] {
        let f = LoopFilter::for_target(&p, 18.0, q, 2.0 * PI * 1e4).unwrap();
        for fr in logspace(1.0, 100.0, 300) {
            let a = chi_eff(fr, &f, &p, &s).unwrap();
            let b = chi_eff_closed_form(fr, &f, &p, &s).unwrap();
            let dev = ((a - b) / b).norm();
            assert!(dev < 2.0 * lag_deviation_bound(fr, &f, &p, &s), "q={q} f={fr} {dev}");
            if lag_deviation_bound(fr, &f, &p, &s) < 2.5e-3 {
                assert!(rel(a.norm(), b.norm()) < 5e-3, "q={q} f={fr}");
                assert!((a.arg() - b.arg()).abs() < 5e-3 * PI);
            }
        }
    }
}

#[test]
fn lag_pole_deviation_scales_with_frequency_over_lag() {
    // At the default 1.5 kHz lag corner the composed response departs from
    // the resonator form by O(ω/ω_lag).
    let (p, s) = pendulum();
    let f = LoopFilter::for_target(&p, 18.0, 0.58, DEFAULT_OMEGA_LAG).unwrap();
    for fr in [8.0, 18.0, 28.0] {
        let a = chi_eff(fr, &f, &p, &s).unwrap();
        let b = chi_eff_closed_form(fr, &f, &p, &s).unwrap();
        let dev = ((a - b) / b).norm();
        let w = 2.0 * PI * fr;
        assert!(dev < 2.0 * w / f.omega_lag * 2.0 && dev > 0.1 * w / f.omega_lag, "{fr}: {dev}");
    }
}

#[test]
fn imprecision_transfer_forms() {
    let (p, s) = pendulum();
    let f = LoopFilter::for_target(&p, 18.0, 0.58, DEFAULT_OMEGA_LAG).unwrap();
    let we = f.omega_eff(&p);
    let w0 = p.omega0();
    let ge = f.gamma_fb(&p) + s.gamma_at(we).unwrap();
    let at_res = chi_imp(18.0, &f, &p).unwrap().norm();
    let formula = Complex64::new(we * we - w0 * w0, we * ge).norm() / (we * ge);
    assert!(rel(at_res, formula) < 1e-12);
    let composed = (loop_filter_g(18.0, &f.lead_only(), &p) * chi_eff(18.0, &f.lead_only(), &p, &s).unwrap()).norm();
    assert!(rel(at_res, composed) < 1e-4);
    assert!(chi_imp(1e7, &f, &p).unwrap().norm() < 1e-5);

    // No spring: pure damping form.
    let mut g0 = f;
    g0.g = 0.0;
    let w = 2.0 * PI * 10.0;
    let gam = s.gamma_at(w).unwrap();
    let expect = Complex64::new(0.0, w * gam) / Complex64::new(w0 * w0 - w * w, w * gam);
    assert!((chi_imp(10.0, &g0, &p).unwrap() - expect).norm() < 1e-15);
}

#[test]
fn open_loop_thermal_limit() {
    let (p, s) = pendulum();
    let f = LoopFilter::open_loop();
    let b = closed_loop_angle_psd(12.0, &f, &p, &s, &NoiseBudget::thermal_only()).unwrap();
    assert_eq!(b.total, thermal_angle_psd(12.0, &p, &s).unwrap());
}

#[test]
fn thermal_dominates_every_paper_configuration() {
    let (p, s) = pendulum();
    let budget = NoiseBudget::calibrated();
    for q in [25.0, 10.0, 4.0, 1.5, 0.58] {
        let f = LoopFilter::for_target(&p, 18.0, q, DEFAULT_OMEGA_LAG).unwrap();
        for fr in torsionlab::numerics::linspace(8.0, 28.0, 401) {
            let b = closed_loop_angle_psd(fr, &f, &p, &s, &budget).unwrap();
            assert!(b.thermal >= b.imprinted && b.thermal >= b.vibration, "q={q} f={fr} {b:?}");
        }
    }
}

#[test]
fn stability_of_configurations() {
    let (p, s) = pendulum();
    for q in [25.0, 10.0, 4.0, 1.5, 0.58] {
        let f = LoopFilter::for_target(&p, 18.0, q, DEFAULT_OMEGA_LAG).unwrap();
        let r = stability_margin(&f, &p, &s).unwrap();
        assert!(r.stable, "q={q}: {r:?}");
        assert!(r.unity_gain_hz.is_some());
    }
    let open = stability_margin(&LoopFilter::open_loop(), &p, &s).unwrap();
    assert!(open.unity_gain_hz.is_none() && open.diagnostic.is_some());
    let mut f = LoopFilter::for_target(&p, 18.0, 0.58, DEFAULT_OMEGA_LAG).unwrap();
    f.omega_lag = 2.0 * PI * 15.0;
    assert!(!stability_margin(&f, &p, &s).unwrap().stable);
    assert!(require_stable(&f, &p, &s).is_err());
}

#[test]
fn torque_referral_round_trip() {
    let (p, s) = pendulum();
    let freqs = logspace(1.0, 100.0, 50);
    let th = SpectrumRecord::from_fn(&freqs, "rad^2/Hz", |f| thermal_angle_psd(f, &p, &s)).unwrap();
    let tq = torque_referred_psd(&th, &p, &s).unwrap();
    for (f, v) in tq.freqs.iter().zip(&tq.psd) {
        assert!(rel(*v, thermal_torque_psd(*f, &p, &s).unwrap()) < 1e-12);
    }
    let bad = SpectrumRecord::new(vec![1.0, 2.0], vec![1.0, 1.0], "x", 1).unwrap();
    let mut mismatched = bad.clone();
    mismatched.psd.pop();
    assert!(torque_referred_psd(&mismatched, &p, &s).is_err());
}

#[test]
fn model_torque_floor() {
    let (p, s) = pendulum();
    let b = NoiseBudget::calibrated();
    let freqs = logspace(1.0, 100.0, 2001);
    let ang = SpectrumRecord::from_fn(&freqs, "rad^2/Hz", |f| free_running_angle_psd(f, &p, &s, &b)).unwrap();
    let tq = torque_referred_psd(&ang, &p, &s).unwrap();
    let (i, m) = tq.psd.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    assert!(freqs[i] > 10.0 && freqs[i] < 30.0);
    assert!(m.sqrt() > 1.2e-18 / 1.5 && m.sqrt() < 1.2e-18 * 1.5);
}

proptest! {
    #[test]
    fn psds_nonnegative(f in 0.01f64..1e3, q in 0.3f64..50.0) {
        let (p, s) = pendulum();
        let flt = LoopFilter::for_target(&p, 18.0, q, DEFAULT_OMEGA_LAG).unwrap();
        let b = closed_loop_angle_psd(f, &flt, &p, &s, &NoiseBudget::calibrated()).unwrap();
        prop_assert!(b.thermal >= 0.0 && b.imprinted >= 0.0 && b.vibration >= 0.0 && b.radiation >= 0.0);
        let sum = b.thermal + b.imprinted + b.vibration + b.radiation;
        prop_assert_eq!(sum, b.total);
        prop_assert!(thermal_torque_psd(f, &p, &s).unwrap() > 0.0);
        prop_assert!(zp_angle_psd(f, &p, &s).unwrap() > 0.0);
    }

    #[test]
    fn composed_matches_closed_form_with_lag_far_above_lead(q in 0.5f64..30.0, f in 1.0f64..100.0) {
        let (p, s) = pendulum();
        let mut flt = LoopFilter::for_target(&p, 18.0, q, DEFAULT_OMEGA_LAG).unwrap();
        // Ratio ω_lag/ω_lead ≥ 50 and lag well above the band.
        flt.omega_lag = (50.0 * flt.omega_lead).max(2.0 * PI * 3e4);
        let a = chi_eff(f, &flt, &p, &s).unwrap();
        let b = chi_eff_closed_form(f, &flt, &p, &s).unwrap();
        let bound = lag_deviation_bound(f, &flt, &p, &s);
        prop_assert!(((a - b) / b).norm() < 2.0 * bound);
        if bound < 2.5e-3 {
            prop_assert!(rel(a.norm(), b.norm()) < 5e-3);
        }
    }

    #[test]
    fn chi_imp_dc_identity(ratio in 1.01f64..5.0, q in 0.3f64..30.0) {
        let (mut p, _) = viscous();
        p.damping_law = DampingLaw::Viscous;
        let flt = LoopFilter::for_target(&p, p.f0 * ratio, q, DEFAULT_OMEGA_LAG).unwrap();
        let c = chi_imp(0.0, &flt, &p).unwrap();
        let we2 = flt.omega_eff(&p).powi(2);
        prop_assert!((c.re - (we2 - p.omega0().powi(2)) / we2).abs() < 1e-12);
    }
}
