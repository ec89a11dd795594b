//! Plain CSV tables with a leading metadata comment.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shortest decimal that round-trips to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// Run-level facts written as `# key=value` before the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub config_sha256: String,
    pub seed: u64,
    pub flags: Vec<(String, String)>,
}

impl Metadata {
    pub fn line(&self) -> String {
        let mut s = format!("# tool=mppi-bounds version={TOOL_VERSION} config_sha256={} seed={}", self.config_sha256, self.seed);
        for (k, v) in &self.flags {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem, e.g. `uav_summary`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of one column parsed as `f64`.
    pub fn floats(&self, name: &str) -> Vec<f64> {
        let i = self.column(name).unwrap_or_else(|| panic!("no column {name} in {}", self.name));
        self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect()
    }

    pub fn to_csv(&self, meta: &Metadata) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        writeln!(out, "{}", meta.line())?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let io = |e: csv::Error| Error::Internal(format!("csv: {e}"));
            w.write_record(&self.header).map_err(io)?;
            for r in &self.rows {
                w.write_record(r).map_err(io)?;
            }
            w.flush()?;
        }
        Ok(out)
    }

    pub fn write(&self, dir: &Path, meta: &Metadata) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.csv", self.name));
        std::fs::write(&path, self.to_csv(meta)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 12345.678, -0.0, 8.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(8.0), "8.0");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn csv_has_metadata_and_header() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec!["1".into(), fmt_f64(0.5)]);
        let meta = Metadata { config_sha256: "ab".into(), seed: 3, flags: vec![("delta_mode".into(), "folded".into())] };
        let text = String::from_utf8(t.to_csv(&meta).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# tool=mppi-bounds"));
        assert!(lines[0].contains("seed=3") && lines[0].contains("delta_mode=folded"));
        assert_eq!(lines[1], "a,b");
        assert_eq!(lines[2], "1,0.5");
        assert_eq!(t.floats("b"), vec![0.5]);
    }
}
