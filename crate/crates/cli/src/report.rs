//! Deterministic report writers: CSV for tabular data, JSON for nested
//! reports. Every file starts with the config hash and seed so identical
//! runs are byte-identical and mismatched artifacts are detectable.

use anyhow::Context;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub struct RunStamp {
    pub config_hash: String,
    pub seed: u64,
}

impl RunStamp {
    pub fn csv_header(&self) -> String {
        format!("# config-hash={} seed={}\n", self.config_hash, self.seed)
    }
}

/// Writes a CSV with a stamped comment header. Floats use the shortest
/// round-trip representation, which is platform-stable.
pub fn write_csv(
    path: &Path,
    stamp: &RunStamp,
    columns: &[&str],
    rows: &[Vec<String>],
) -> anyhow::Result<()> {
    let mut text = stamp.csv_header();
    let _ = writeln!(text, "{}", columns.join(","));
    for row in rows {
        let _ = writeln!(text, "{}", row.join(","));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing report")?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
