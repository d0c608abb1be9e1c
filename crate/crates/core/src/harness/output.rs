//! Per-round CSV and the JSON sidecar.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::runtime::RoundRecord;

pub const CSV_HEADER: [&str; 8] = [
    "t",
    "loss",
    "grad_sq",
    "test_acc",
    "cohort",
    "delta_max",
    "noise_var",
    "wall_ms",
];

/// 17 significant digits: enough to round-trip any f64.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// One row per record; absent metrics are empty cells.
pub fn write_round_csv(history: &[RoundRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if history.is_empty() {
        return Err(Error::InvalidParams("refusing to write an empty history".into()));
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CSV_HEADER)?;
    for r in history {
        w.write_record([
            r.t.to_string(),
            fmt_opt(r.loss),
            fmt_opt(r.grad_sq),
            fmt_opt(r.test_acc),
            r.cohort.to_string(),
            fmt_opt(r.delta_max),
            fmt_opt(r.noise_var),
            fmt_f64(r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parse a file written by [`write_round_csv`].
pub fn read_round_csv(path: impl AsRef<Path>) -> Result<Vec<RoundRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidParams(format!(
            "{}: unexpected CSV header",
            path.display()
        )));
    }
    let bad = |what: &str, row: usize| Error::InvalidParams(format!("{}: bad {what} in row {row}", path.display()));
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let opt = |k: usize| -> Result<Option<f64>> {
            match rec.get(k) {
                Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| bad(CSV_HEADER[k], i)),
                None => Err(bad(CSV_HEADER[k], i)),
            }
        };
        out.push(RoundRecord {
            t: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("t", i))?,
            loss: opt(1)?,
            grad_sq: opt(2)?,
            test_acc: opt(3)?,
            cohort: rec
                .get(4)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("cohort", i))?,
            delta_max: opt(5)?,
            noise_var: opt(6)?,
            wall_ms: opt(7)?.ok_or_else(|| bad("wall_ms", i))?,
        });
    }
    Ok(out)
}

/// CSV text with the wall-clock column removed, for reproducibility checks.
pub fn csv_without_wall_clock(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n"))
}

pub fn write_json(value: &impl Serialize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}
