//! report.json, config.json and the per-table CSV files.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::Value;
use uturnlab::lab::{ExperimentReport, Table};

use crate::config::RunConfig;

/// Write everything a run produces into `dir`, creating it if needed.
///
/// `wall_clock_seconds` is the only field of report.json that changes between
/// identical runs.
pub fn write_all(dir: &Path, report: &ExperimentReport, echo: &RunConfig, elapsed: f64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut json = serde_json::to_value(report)?;
    if let Value::Object(m) = &mut json {
        m.insert("wall_clock_seconds".into(), elapsed.into());
    }
    write_json(&dir.join("report.json"), &json)?;
    write_json(&dir.join("config.json"), &serde_json::to_value(echo)?)?;
    for t in &report.tables {
        write_table(&dir.join(format!("{}.csv", t.name)), t)?;
    }
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn write_table(path: &Path, t: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(&t.columns)?;
    for row in &t.rows {
        w.write_record(row.iter().map(|c| c.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `x` with `digits` significant digits and no trailing zeros.
pub fn significant(x: f64, digits: i32) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let decimals = (digits - 1 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use uturnlab::lab::Cell;

    #[test]
    fn significant_digits() {
        assert_eq!(significant(0.0940023, 4), "0.094");
        assert_eq!(significant(3.30199, 4), "3.302");
        assert_eq!(significant(1234.6, 4), "1235");
        assert_eq!(significant(0.0, 4), "0");
    }

    #[test]
    fn csv_layout() -> Result<()> {
        let dir = tempfile::tempdir()?;
        let mut t = Table::new("demo", &["seed", "x", "label"]);
        t.push(vec![Cell::from(7u64), Cell::from(0.5), Cell::from("a,b")]);
        let p = dir.path().join("demo.csv");
        write_table(&p, &t)?;
        assert_eq!(fs::read_to_string(p)?, "seed,x,label\n7,0.5,\"a,b\"\n");
        Ok(())
    }
}
