use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};

use super::RunConfig;

pub(crate) fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

/// `"mean (std)"`, empty when there is nothing to summarize.
pub(crate) fn fmt_mean_std((mean, std): (f64, f64)) -> String {
    if mean.is_finite() {
        format!("{mean:.4} ({std:.4})")
    } else {
        String::new()
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `rows` under `header` and returns the file body.
pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8(bytes).expect("CSV fields are UTF-8"))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Metadata<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    created_unix_seconds: u64,
    config: &'a RunConfig,
    details: T,
}

/// Run information that varies between otherwise identical runs lives here,
/// never in the CSV outputs.
pub(crate) fn write_metadata<T: Serialize>(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    details: T,
) -> Result<()> {
    let created_unix_seconds = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = Metadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        created_unix_seconds,
        config,
        details,
    };
    write_json(&dir.join(format!("{command}_metadata.json")), &meta)
}
