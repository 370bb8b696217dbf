//! Sequential and parallel execution must produce bit-identical output.

use torsionlab::beamlever::*;
use torsionlab::gravfom::{platform_table, PlatformRecord};
use torsionlab::numerics::{linspace, logspace};
use torsionlab::quantum::{coherence_numerical_oracle_with, Frame, GaussianState};
use torsionlab::response::*;
use torsionlab::specan::welch_psd_with;
use torsionlab::timesim::{late_time_rms, synth_colored_noise, SimPlan};
use torsionlab::{Execution, OscillatorParams, PhysicalConstants};

const BOTH: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

#[test]
fn frequency_grid() {
    let p = OscillatorParams::reference();
    let d = DampingModel::from_params(&p);
    let f = LoopFilter::for_target(&p, 18.0, 0.58, DEFAULT_OMEGA_LAG).unwrap();
    let grid = logspace(0.1, 1000.0, 5000);
    let [a, b] = BOTH.map(|e| closed_loop_spectrum(&grid, &f, &p, &d, &NoiseBudget::calibrated(), e).unwrap());
    assert_eq!(a, b);
}

#[test]
fn welch_segments() {
    let p = OscillatorParams::reference();
    let x = synth_colored_noise(|f| 1.0 / f, &SimPlan::new(300.0, 200.0, 1, &p)).unwrap();
    let [a, b] = BOTH.map(|e| welch_psd_with(&x, 2.0, 0.5, e).unwrap());
    assert_eq!(a, b);
}

#[test]
fn seed_batch() {
    let p = OscillatorParams::reference();
    let tau = p.ringdown_tau();
    let seeds: Vec<u64> = (0..4).collect();
    let [a, b] = BOTH.map(|e| late_time_rms(&p, 2e-5, 2.0 * tau, tau, &seeds, e).unwrap());
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn platform_rows() {
    let recs: Vec<PlatformRecord> = serde_json::from_str(include_str!("../../../data/platforms.json")).unwrap();
    let [a, b] = BOTH.map(|e| platform_table(&recs, &PhysicalConstants::CODATA, e));
    assert_eq!(a, b);
}

#[test]
fn optical_scan_and_oracles() {
    let bh = BeamState {
        wavelength: 780e-9,
        waist: 100e-6,
        waist_position: 0.0,
        gouy_accumulated: 0.0,
        axis: Axis::Horizontal,
    };
    let bv = BeamState { axis: Axis::Vertical, ..bh };
    let pr = OpticalPrescription {
        elements: vec![
            Element::FreeSpace { length: 0.3 },
            Element::ThinLens { focal_length: 0.1 },
            Element::FreeSpace { length: 0.9 },
        ],
        pendulum_position: 0.0,
    };
    let zs = linspace(0.0, 1.2, 500);
    let [a, b] = BOTH.map(|e| scan_detector_plane(&bh, &bv, &pr, &pr, &zs, e).unwrap());
    assert_eq!(a, b);
    let s = GaussianState::thermal(1e-12, 10.0, 5.0, Frame::Angular).unwrap();
    let [x, y] = BOTH.map(|e| coherence_numerical_oracle_with(&s, 10.0, 300, e).unwrap());
    assert_eq!(x.to_bits(), y.to_bits());
}
