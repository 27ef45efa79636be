//! Result persistence.
//!
//! `results.csv` columns (schema version 1):
//!
//! | column    | meaning                                                        |
//! |-----------|----------------------------------------------------------------|
//! | series    | observable name, e.g. `m`, `tension`, `crossing`               |
//! | x         | abscissa: scale `L` or `ell`, `p`, `h`, or radius              |
//! | replica   | replica index; empty for disorder averages                     |
//! | seed      | seed regenerating the row (replica seed, or base seed)         |
//! | value     | observable value                                               |
//! | std_error | standard error; `0` for exact per-replica values               |
//!
//! Floats are written with 17 significant digits.

use std::path::Path;

use rfim_core::estimators::Verdict;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "series,x,replica,seed,value,std_error";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub series: String,
    pub x: f64,
    pub replica: Option<u64>,
    pub seed: u64,
    pub value: f64,
    pub std_error: f64,
}

impl Row {
    pub fn aggregate(series: &str, x: f64, seed: u64, value: f64, std_error: f64) -> Row {
        Row { series: series.into(), x, replica: None, seed, value, std_error }
    }

    pub fn replica(series: &str, x: f64, replica: u64, seed: u64, value: f64) -> Row {
        Row { series: series.into(), x, replica: Some(replica), seed, value, std_error: 0.0 }
    }
}

/// An inequality or identity check with its margin (`bound - estimate`, or worst slack).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictRow {
    pub check: String,
    pub verdict: Verdict,
    pub margin: f64,
    pub detail: String,
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn csv_body(rows: &[Row]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.series);
        out.push(',');
        out.push_str(&fmt_f64(r.x));
        out.push(',');
        if let Some(i) = r.replica {
            out.push_str(&i.to_string());
        }
        out.push(',');
        out.push_str(&r.seed.to_string());
        out.push(',');
        out.push_str(&fmt_f64(r.value));
        out.push(',');
        out.push_str(&fmt_f64(r.std_error));
        out.push('\n');
    }
    out
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            assert_eq!(s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
    }

    #[test]
    fn csv_rows_have_six_fields() {
        let body = csv_body(&[Row::aggregate("m", 2.0, 7, 0.5, 0.01), Row::replica("d", 1.0, 3, 99, 4.0)]);
        for line in body.lines() {
            assert_eq!(line.split(',').count(), 6);
        }
        assert!(body.lines().nth(1).unwrap().contains(",,7,"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a").join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
