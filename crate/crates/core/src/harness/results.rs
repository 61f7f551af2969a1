//! Result rows and their CSV / JSON files.

use std::cmp::Ordering;
use std::path::Path;

use serde::Serialize;

use super::config::Method;
use crate::error::{Error, Result};

/// A numbered test slot (from 1) or the summary over the whole stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Slot {
    Index(usize),
    Final,
}

impl std::fmt::Display for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Slot::Index(i) => write!(f, "{i}"),
            Slot::Final => write!(f, "final"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub snr_db: f64,
    pub seed: u64,
    pub slot: Slot,
    pub wsr_mean: f64,
    pub wsr_std: f64,
    pub samples: usize,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    method: &'a str,
    snr_db: f64,
    seed: u64,
    slot: String,
    wsr_mean: f64,
    wsr_std: f64,
    samples: usize,
}

pub const CSV_HEADER: &str = "method,snr_db,seed,slot,wsr_mean,wsr_std,samples";

/// Report order: method, SNR, seed, then slots with the summary last.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.snr_db.partial_cmp(&b.snr_db).unwrap_or(Ordering::Equal))
            .then(a.seed.cmp(&b.seed))
            .then(a.slot.cmp(&b.slot))
    });
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method.as_str(),
            r.snr_db,
            r.seed,
            r.slot,
            r.wsr_mean,
            r.wsr_std,
            r.samples
        ));
    }
    out
}

pub fn to_json(rows: &[ResultRow]) -> String {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let json: Vec<JsonRow> = rows
        .iter()
        .map(|r| JsonRow {
            method: r.method.as_str(),
            snr_db: r.snr_db,
            seed: r.seed,
            slot: r.slot.to_string(),
            wsr_mean: r.wsr_mean,
            wsr_std: r.wsr_std,
            samples: r.samples,
        })
        .collect();
    serde_json::to_string_pretty(&json).expect("rows serialize") + "\n"
}

/// Writes the CSV and, when `json` is set, a `.json` mirror beside it.
pub fn emit_results(rows: &[ResultRow], path: &Path, json: bool) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Argument("no result rows to emit".into()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_csv(rows)).map_err(|e| Error::io(path, e))?;
    if json {
        let jpath = path.with_extension("json");
        std::fs::write(&jpath, to_json(rows)).map_err(|e| Error::io(&jpath, e))?;
    }
    Ok(())
}

/// Parses a results CSV back into rows.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format {
            offset: 0,
            msg: "unexpected results header".into(),
        });
    }
    let bad = |line: usize| Error::Format {
        offset: line as u64,
        msg: format!("malformed results row on line {}", line + 1),
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(i + 1));
            }
            Ok(ResultRow {
                method: Method::parse(f[0]).map_err(|_| bad(i + 1))?,
                snr_db: f[1].parse().map_err(|_| bad(i + 1))?,
                seed: f[2].parse().map_err(|_| bad(i + 1))?,
                slot: match f[3] {
                    "final" => Slot::Final,
                    s => Slot::Index(s.parse().map_err(|_| bad(i + 1))?),
                },
                wsr_mean: f[4].parse().map_err(|_| bad(i + 1))?,
                wsr_std: f[5].parse().map_err(|_| bad(i + 1))?,
                samples: f[6].parse().map_err(|_| bad(i + 1))?,
            })
        })
        .collect()
}
