use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    /// Which result the file holds.
    pub describes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// Writes report files into one directory and records them in a manifest.
#[derive(Debug)]
pub struct ReportWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl ReportWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ReportWriter {
            dir: dir.to_path_buf(),
            manifest: Manifest { files: Vec::new() },
        })
    }

    pub fn write(&mut self, file: &str, describes: &str, contents: &str) -> Result<PathBuf> {
        if file == MANIFEST_FILE || self.manifest.files.iter().any(|e| e.file == file) {
            return Err(Error::Precondition(format!("report file {file} written twice")));
        }
        let path = self.dir.join(file);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.manifest.files.push(ManifestEntry {
            file: file.to_string(),
            describes: describes.to_string(),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, describes: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(file, describes, &text)
    }

    /// Writes the manifest and returns it.
    pub fn finish(self) -> Result<Manifest> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub const METRIC_COLUMNS: [&str; 5] = ["r2", "rmse", "mae", "mape", "max_e"];

/// One row per model with the five metric columns.
pub fn metrics_table_csv(rows: &[(&str, Metrics)]) -> String {
    let mut out = format!("model,{}\n", METRIC_COLUMNS.join(","));
    for (name, m) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            name, m.r2, m.rmse, m.mae, m.mape, m.max_e
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ReportWriter::create(dir.path()).unwrap();
        w.write("a.csv", "first", "x\n1\n").unwrap();
        w.write_json("b.json", "second", &vec![1, 2]).unwrap();
        assert!(w.write("a.csv", "again", "").is_err());
        let m = w.finish().unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        for e in &m.files {
            assert!(dir.path().join(&e.file).exists());
        }
        assert_eq!(m.files.len(), 2);
    }

    #[test]
    fn table_has_five_metric_columns() {
        let m = Metrics {
            r2: 0.9,
            rmse: 2.0,
            mae: 1.0,
            mape: 3.0,
            max_e: 5.0,
        };
        let csv = metrics_table_csv(&[("linear", m), ("analytical", m)]);
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        assert_eq!(header, ["model", "r2", "rmse", "mae", "mape", "max_e"]);
        assert_eq!(csv.lines().count(), 3);
    }
}
