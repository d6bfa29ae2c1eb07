//! Deterministic artifact writing: CSV tables with fixed schemas and a
//! JSON manifest that, together with the seed, reproduces every number.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use proxem::tomography::DetectionStrategy;

use crate::config::{Preset, RunConfig};
use crate::CliError;

/// A CSV value: numbers print in shortest round-trip form so re-parsing
/// recovers the exact f64; reruns are byte-identical by determinism of
/// the computation.
pub enum Field {
    Str(String),
    Num(f64),
    Int(u64),
    Bool(bool),
    Empty,
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field::Str(s) => write!(f, "{s}"),
            Field::Num(x) => write!(f, "{x:e}"),
            Field::Int(n) => write!(f, "{n}"),
            Field::Bool(b) => write!(f, "{b}"),
            Field::Empty => Ok(()),
        }
    }
}

pub struct CsvTable {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<Field>>,
}

impl CsvTable {
    pub fn new(header: &'static [&'static str]) -> Self {
        CsvTable {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|f| f.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Manifest: resolved config, preset, seed, and versions. No
/// timestamps or absolute paths, so a rerun is byte-identical.
pub fn manifest_json(cfg: &RunConfig, preset: Option<Preset>) -> String {
    let doc = serde_json::json!({
        "config": cfg,
        "preset": preset,
        "library-version": proxem::VERSION,
        "cli-version": env!("CARGO_PKG_VERSION"),
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("manifest serialization");
    s.push('\n');
    s
}

/// Flat CSV-friendly name for a detection strategy.
pub fn detection_name(s: &DetectionStrategy) -> String {
    match s {
        DetectionStrategy::None => "none".into(),
        DetectionStrategy::TotalNumber => "total-number".into(),
        DetectionStrategy::NumberModPerMode { modulus } => {
            format!("number-mod-per-mode-{modulus}")
        }
        DetectionStrategy::NumberModTotal { modulus } => format!("number-mod-total-{modulus}"),
        DetectionStrategy::ModeParity => "mode-parity".into(),
        DetectionStrategy::CodeProjector => "code-projector".into(),
    }
}

/// Mean and standard error (sample std over sqrt(n)); (x, 0) for n < 2.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
