//! Simulation and analysis toolkit for a feedback-cooled, milligram-scale
//! torsional oscillator.
//!
//! The crate is organised by subsystem:
//!
//! * [`physcore`] holds the oscillator parameters and derived quantities.
//! * [`response`] has the analytic frequency-domain models: susceptibilities,
//!   thermal and zero-point spectra, the lead-lag loop filter and the
//!   closed-loop noise budget.
//! * [`timesim`] synthesises colored noise and runs closed-loop and ring-down
//!   simulations in the time domain.
//! * [`specan`] estimates spectra (Welch) and infers effective temperatures,
//!   susceptibilities and noise-budget parameters from them.
//! * [`quantum`] computes coherence lengths of thermal and feedback-damped
//!   Gaussian states.
//! * [`gravfom`] evaluates gravitational force gradients, the entanglement
//!   figure-of-merit and the platform comparison table.
//! * [`beamlever`] models the Gaussian-beam optical lever.
//!
//! Data-parallel loops (frequency grids, seed batches, table rows, z scans)
//! go through [`exec::Execution`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iterators otherwise.

pub mod beamlever;
pub mod constants;
pub mod error;
pub mod exec;
pub mod gravfom;
pub mod numerics;
pub mod physcore;
pub mod quantum;
pub mod response;
pub mod specan;
pub mod spectrum;
pub mod timesim;

pub use constants::PhysicalConstants;
pub use error::{Error, Result};
pub use exec::Execution;
pub use physcore::{derive_all, DampingLaw, DerivedQuantities, OscillatorParams};
pub use spectrum::SpectrumRecord;
pub use timesim::TimeSeries;

/// Default analysis band, Hz.
pub const DEFAULT_BAND: (f64, f64) = (8.0, 28.0);
