//! Output directory handling: atomic file writes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// One row-oriented CSV table.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Shortest round-trip text for a float, with an exponent for very small or large values.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

impl Table {
    /// Column names carry their unit in brackets, e.g. `t [kicks]`.
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Floats print with the shortest representation that round-trips.
    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| num(v)).collect());
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub argv: &'a [String],
    pub config: &'a serde_json::Value,
    pub artifacts: &'a [ArtifactEntry],
    pub code_version: &'static str,
    pub wall_time_s: f64,
    pub seeds: &'a [u64],
    pub threads: Option<usize>,
    /// Scale reductions relative to the full-scale runs, if any.
    pub reductions: &'a [String],
}

/// Writes artifacts into one directory. Each file goes to a temporary name
/// first and is renamed into place; the manifest is written last.
pub struct ArtifactDir {
    root: PathBuf,
    written: Vec<ArtifactEntry>,
    started: Instant,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(ArtifactDir { root: root.to_path_buf(), written: Vec::new(), started: Instant::now() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.root.join(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target).with_context(|| format!("renaming into {}", target.display()))?;
        self.written.push(ArtifactEntry { path: name.to_string(), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        let bytes = table.to_bytes()?;
        self.write_bytes(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn artifacts(&self) -> &[ArtifactEntry] {
        &self.written
    }

    /// Write `manifest.json`; consumes the directory handle.
    pub fn finish(
        mut self,
        command: &str,
        argv: &[String],
        config: &serde_json::Value,
        seeds: &[u64],
        threads: Option<usize>,
        reductions: &[String],
    ) -> Result<PathBuf> {
        let artifacts = self.written.clone();
        let manifest = Manifest {
            command,
            argv,
            config,
            artifacts: &artifacts,
            code_version: env!("CARGO_PKG_VERSION"),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            seeds,
            threads,
            reductions,
        };
        self.json("manifest.json", &manifest)?;
        Ok(self.root.join("manifest.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_round_trip_floats() {
        let mut t = Table::new(["t [kicks]", "p2 [kbar^2 (m+beta)^2]"]);
        t.push_f64(&[1.0, 0.1 + 0.2]);
        t.push_f64(&[2.0, 1.5e-32]);
        let text = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert_eq!(text, "t [kicks],p2 [kbar^2 (m+beta)^2]\n1.0,0.30000000000000004\n2.0,1.5e-32\n");
    }

    #[test]
    fn files_are_listed_and_manifest_is_last() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ArtifactDir::create(&dir.path().join("run")).unwrap();
        a.json("x.json", &[1, 2]).unwrap();
        let root = a.root().to_path_buf();
        let m = a.finish("test", &[], &serde_json::Value::Null, &[7], None, &[]).unwrap();
        let text = fs::read_to_string(m).unwrap();
        assert!(text.contains("\"x.json\""));
        let names: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        assert!(names.iter().all(|n| !n.ends_with(".tmp")));
        assert_eq!(names.len(), 2);
    }
}
