use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided power spectral density on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    pub unit: String,
    /// Number of averaged segments (1 for model spectra).
    pub segments: usize,
    /// Equivalent χ² degrees of freedom per bin, when the spectrum is an
    /// estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
}

impl SpectrumRecord {
    pub fn new(freqs: Vec<f64>, psd: Vec<f64>, unit: impl Into<String>, segments: usize) -> Result<Self> {
        let s = SpectrumRecord {
            freqs,
            psd,
            unit: unit.into(),
            segments,
            dof: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// Model spectrum `psd(f)` sampled on `freqs`.
    pub fn from_fn(freqs: &[f64], unit: &str, psd: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let values = freqs.iter().map(|&f| psd(f)).collect::<Result<Vec<_>>>()?;
        Self::new(freqs.to_vec(), values, unit, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() != self.psd.len() {
            return Err(Error::GridMismatch(format!(
                "{} frequencies vs {} PSD values",
                self.freqs.len(),
                self.psd.len()
            )));
        }
        if self.freqs.is_empty() {
            return Err(Error::invalid("freqs", "empty spectrum"));
        }
        if self.freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("freqs", "must be strictly increasing"));
        }
        if self.freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("freqs", "non-finite frequency"));
        }
        if self.psd.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("psd", "values must be finite and >= 0"));
        }
        if self.segments == 0 {
            return Err(Error::invalid("segments", "must be >= 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Indices of bins with `f1 <= f <= f2`.
    pub fn band_indices(&self, f1: f64, f2: f64) -> std::ops::Range<usize> {
        let lo = self.freqs.partition_point(|&f| f < f1);
        let hi = self.freqs.partition_point(|&f| f <= f2);
        lo..hi
    }

    pub fn same_grid(&self, other: &SpectrumRecord) -> bool {
        self.freqs == other.freqs
    }

    /// Scales every PSD value by `k`.
    pub fn scaled(&self, k: f64) -> SpectrumRecord {
        SpectrumRecord {
            psd: self.psd.iter().map(|p| p * k).collect(),
            ..self.clone()
        }
    }
}
