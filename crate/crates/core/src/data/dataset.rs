//! Dataset directories: `.csib` files plus a `manifest.csv` with columns
//! `path,label,user,location,orientation` (paths relative to the directory).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{read_csib, write_csib, ClassId, CsiRecord, DomainTag};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: ClassId,
    pub domain: DomainTag,
}

impl ManifestEntry {
    pub fn for_record(path: impl Into<String>, rec: &CsiRecord) -> Self {
        ManifestEntry {
            path: path.into(),
            label: rec.label,
            domain: rec.domain,
        }
    }

    pub fn resolve(&self, dir: &Path) -> PathBuf {
        dir.join(&self.path)
    }

    pub fn load(&self, dir: &Path) -> Result<CsiRecord> {
        let file = File::open(self.resolve(dir))?;
        read_csib(BufReader::new(file))
    }
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(MANIFEST_FILE))?;
    w.write_record(["path", "label", "user", "location", "orientation"])?;
    for e in entries {
        w.write_record([
            e.path.clone(),
            e.label.to_string(),
            e.domain.user.to_string(),
            e.domain.location.to_string(),
            e.domain.orientation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let field = |j: usize| -> Result<u32> {
            row.get(j).and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
                Error::format("manifest", format!("row {}: bad column {}", i + 1, j))
            })
        };
        let path = row
            .get(0)
            .ok_or_else(|| Error::format("manifest", format!("row {}: missing path", i + 1)))?
            .to_string();
        out.push(ManifestEntry {
            path,
            label: field(1)?,
            domain: DomainTag {
                user: field(2)?,
                location: field(3)?,
                orientation: field(4)?,
            },
        });
    }
    Ok(out)
}

/// Writes one record into `dir` under `name` and returns its manifest row.
pub fn write_record(dir: &Path, name: &str, rec: &CsiRecord) -> Result<ManifestEntry> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    write_csib(rec, &mut w)?;
    w.flush()?;
    Ok(ManifestEntry::for_record(name, rec))
}
