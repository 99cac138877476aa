//! Output directory bookkeeping: CSV files, config echo and the MANIFEST.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tangent_core::pde::fmt17;

use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the artifact root, `/`-separated.
    pub file: String,
    pub study: String,
    /// Data rows for CSV files, values for parameter blobs, 1 for JSON.
    pub rows: usize,
}

/// Artifact directory being filled; [`ArtifactDir::finish`] writes the MANIFEST.
#[derive(Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "MANIFEST";
pub const MANIFEST_HEADER: &str = "file,study,rows";

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn register(&mut self, rel: &str, study: &str, rows: usize) {
        self.entries.retain(|e| e.file != rel);
        self.entries.push(ManifestEntry { file: rel.to_string(), study: study.to_string(), rows });
    }

    /// Writes a CSV with a single header row; each row is already joined.
    pub fn csv(&mut self, rel: &str, study: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
        let path = self.path(rel)?;
        let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        self.register(rel, study, rows.len());
        Ok(path)
    }

    /// Writes through `fill`, then counts the data rows that were written.
    pub fn csv_with(&mut self, rel: &str, study: &str, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.path(rel)?;
        let mut buf = Vec::new();
        fill(&mut buf)?;
        fs::write(&path, &buf)?;
        let lines = buf.iter().filter(|&&b| b == b'\n').count();
        self.register(rel, study, lines.saturating_sub(1));
        Ok(path)
    }

    pub fn json(&mut self, rel: &str, study: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
        let path = self.path(rel)?;
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        self.register(rel, study, 1);
        Ok(path)
    }

    pub fn params(&mut self, rel_stem: &str, params: &tangent_core::net::MlpParams) -> Result<()> {
        let stem = self.path(rel_stem)?;
        params.save(&stem)?;
        self.register(&format!("{rel_stem}.bin"), "params", params.n_params());
        self.register(&format!("{rel_stem}.json"), "params", 1);
        Ok(())
    }

    /// Writes the MANIFEST (sorted by file name).
    pub fn finish(mut self) -> Result<Vec<ManifestEntry>> {
        self.entries.sort_by(|a, b| a.file.cmp(&b.file));
        let mut text = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            text.push_str(&format!("{},{},{}\n", e.file, e.study, e.rows));
        }
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(self.entries)
    }
}

/// Reads a MANIFEST back.
pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(root.join(MANIFEST))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(crate::KitError::Manifest(format!("line {}: expected 3 fields", i + 1)));
        }
        let rows = parts[2].parse().map_err(|_| crate::KitError::Manifest(format!("line {}: bad row count", i + 1)))?;
        out.push(ManifestEntry { file: parts[0].into(), study: parts[1].into(), rows });
    }
    Ok(out)
}

/// Joins formatted fields with commas.
pub fn row(fields: &[String]) -> String {
    fields.join(",")
}

pub fn f(v: f64) -> String {
    fmt17(v)
}
