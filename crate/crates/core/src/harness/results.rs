use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the results CSV.
pub const CSV_HEADER: &str = "method,K,p,m,capacity,seed,target,top1,wallclock_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    /// Configured cluster count of the run that produced the row.
    #[serde(rename = "K")]
    pub k: usize,
    pub p: f64,
    /// Size of the pre-training label space.
    pub m: usize,
    pub capacity: f64,
    pub seed: u64,
    pub target: String,
    pub top1: f64,
    pub wallclock_s: f64,
}

impl ResultRow {
    /// Everything except the wall-clock time.
    pub fn same_result(&self, other: &ResultRow) -> bool {
        ResultRow {
            wallclock_s: 0.0,
            ..self.clone()
        } == ResultRow {
            wallclock_s: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    /// The configuration that produced the rows; written beside the CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ResultsTable {
    pub fn extend(&mut self, other: ResultsTable) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{:.3}",
                r.method, r.k, r.p, r.m, r.capacity, r.seed, r.target, r.top1, r.wallclock_s
            )
            .unwrap();
        }
        out
    }

    /// Writes the CSV and, when a config is attached, `<path>.config.json`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        if let Some(cfg) = &self.config {
            let side = config_sidecar(path);
            fs::write(&side, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }

    /// Rows matching `method` and `target`.
    pub fn select<'a>(
        &'a self,
        method: &'a str,
        target: &'a str,
    ) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.method == method && r.target == target)
    }

    /// Mean top-1 of rows passing `filter`; `None` when nothing matches.
    pub fn mean_top1(&self, filter: impl Fn(&ResultRow) -> bool) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter(|r| filter(r)).map(|r| r.top1).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn config_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, top1: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            k: 400,
            p: 0.25,
            m: 20,
            capacity: 1.0,
            seed: 3,
            target: "fine".into(),
            top1,
            wallclock_s: 1.5,
        }
    }

    #[test]
    fn csv_layout() {
        let mut t = ResultsTable::default();
        t.rows.push(row("npre", 0.5));
        t.rows.push(row("cf", 0.75));
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "npre,400,0.25,20,1,3,fine,0.500000,1.500");
        assert_eq!(lines[2], "cf,400,0.25,20,1,3,fine,0.750000,1.500");
    }

    #[test]
    fn means_and_comparison() {
        let mut t = ResultsTable::default();
        t.rows.extend([row("cf", 0.5), row("cf", 0.7), row("npre", 0.1)]);
        let m = t.mean_top1(|r| r.method == "cf").unwrap();
        assert!((m - 0.6).abs() < 1e-12);
        assert!(t.mean_top1(|r| r.method == "x").is_none());
        let mut other = row("cf", 0.5);
        other.wallclock_s = 99.0;
        assert!(row("cf", 0.5).same_result(&other));
    }
}
