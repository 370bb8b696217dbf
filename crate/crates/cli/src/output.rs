//! Output files: provenance header, CSV and JSON encoders, and the
//! all-or-marker write step.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use torsionlab::{SpectrumRecord, TimeSeries};

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const FAILURE_MARKER: &str = "FAILED.json";

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(subcommand: &str, config: &RunConfig) -> Self {
        // The hash covers the effective config, overrides included.
        let bytes = serde_json::to_vec(config).expect("config serialises");
        let digest = Sha256::digest(&bytes);
        Meta {
            tool: "torsionlab",
            version: VERSION,
            subcommand: subcommand.to_string(),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed: config.sim.seed,
        }
    }

    fn header(&self) -> String {
        format!(
            "# {} {} subcommand={} config_sha256={} seed={}\n",
            self.tool, self.version, self.subcommand, self.config_sha256, self.seed
        )
    }
}

/// Shortest round-trip representation in exponent form.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Files produced by a run, held in memory until everything has been
/// computed.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    pub fn csv<I>(&mut self, meta: &Meta, name: impl AsRef<Path>, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut buf = meta.header().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
        }
        self.files.push((name.as_ref().to_path_buf(), buf));
        Ok(())
    }

    /// Writes `body` (an object) with a leading `meta` entry.
    pub fn json(&mut self, meta: &Meta, name: impl AsRef<Path>, body: impl Serialize) -> Result<(), CliError> {
        let mut obj = Map::new();
        obj.insert("meta".into(), serde_json::to_value(meta)?);
        match serde_json::to_value(body)? {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("value".into(), other);
            }
        }
        let mut bytes = serde_json::to_vec_pretty(&Value::Object(obj))?;
        bytes.push(b'\n');
        self.files.push((name.as_ref().to_path_buf(), bytes));
        Ok(())
    }

    pub fn spectrum(&mut self, meta: &Meta, name: impl AsRef<Path>, s: &SpectrumRecord) -> Result<(), CliError> {
        let rows = s.freqs.iter().zip(&s.psd).map(|(f, p)| vec![num(*f), num(*p), s.unit.clone()]);
        self.csv(meta, name, &["f_hz", "psd", "unit"], rows)
    }

    /// `stem.csv` with t_s,value plus a `stem.json` sidecar.
    pub fn time_series(&mut self, meta: &Meta, stem: &str, ts: &TimeSeries, extra: Value) -> Result<(), CliError> {
        let rows = ts
            .samples
            .iter()
            .enumerate()
            .map(|(i, v)| vec![num(i as f64 / ts.rate), num(*v)]);
        self.csv(meta, format!("{stem}.csv"), &["t_s", "value"], rows)?;
        let mut side = serde_json::json!({
            "rate_hz": ts.rate,
            "seed": ts.seed,
            "label": ts.label,
            "units": {"t": "s", "value": ts.unit},
            "samples": ts.len(),
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut side, extra) {
            m.extend(e);
        }
        self.json(meta, format!("{stem}.json"), side)
    }

    pub fn names(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    /// Moves every file under `prefix`.
    pub fn nest(mut self, prefix: &str) -> Self {
        for (p, _) in &mut self.files {
            *p = Path::new(prefix).join(&*p);
        }
        self
    }

    pub fn extend(&mut self, other: Artifacts) {
        self.files.extend(other.files);
    }

    /// Writes all files under `dir` and clears a stale failure marker.
    pub fn write_all(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        let marker = dir.join(FAILURE_MARKER);
        if marker.exists() {
            std::fs::remove_file(&marker)?;
        }
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }
}

/// Best-effort failure marker; the error itself is already on stderr.
pub fn write_failure_marker(dir: &Path, error_json: &Value) {
    let _ = std::fs::create_dir_all(dir);
    if let Ok(mut bytes) = serde_json::to_vec_pretty(error_json) {
        bytes.push(b'\n');
        let _ = std::fs::write(dir.join(FAILURE_MARKER), bytes);
    }
}
