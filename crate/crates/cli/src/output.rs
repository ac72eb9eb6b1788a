//! CSV and sidecar emission.

use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const SIDECAR: &str = "run.json";

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Comma-separated table with a header row. Cells must not contain commas.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: header.join(",") + "\n",
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width");
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// Fails when any target exists and `force` is off.
pub fn check_targets(dir: &Path, names: &[String], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    let existing: Vec<String> = names
        .iter()
        .filter(|n| dir.join(n).exists())
        .map(|n| dir.join(n).display().to_string())
        .collect();
    if existing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Io(format!(
            "refusing to overwrite {} (use --force)",
            existing.join(", ")
        )))
    }
}

pub fn write_files(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    files
        .iter()
        .map(|(name, bytes)| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(path.display(), e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.484845375016811,
            1e-300,
            5e-324,
            1e21,
            0.0,
        ] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(1.0), "1.0");
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(&[num(0.5), "x".into()]);
        assert_eq!(String::from_utf8(c.into_bytes()).unwrap(), "a,b\n0.5,x\n");
    }

    #[test]
    fn refuses_existing() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("x.csv"), "").unwrap();
        assert!(check_targets(d.path(), &["x.csv".into()], false).is_err());
        assert!(check_targets(d.path(), &["x.csv".into()], true).is_ok());
        assert!(check_targets(d.path(), &["y.csv".into()], false).is_ok());
    }
}
