use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::cdx::{normalize_url, SnapshotRef};
use crate::fsutil;

/// Offline page set: a directory with `manifest.csv`
/// (`original_url,timestamp,file`) and the referenced HTML files.
#[derive(Clone, Debug)]
pub struct FixtureSet {
    dir: PathBuf,
    files: HashMap<(String, String), PathBuf>,
}

impl FixtureSet {
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let mut rdr = csv::Reader::from_reader(File::open(dir.join("manifest.csv"))?);
        let mut files = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(std::io::Error::other)?;
            if rec.len() < 3 {
                continue;
            }
            files.insert(
                (normalize_url(&rec[0]), rec[1].trim().to_string()),
                dir.join(rec[2].trim()),
            );
        }
        Ok(FixtureSet { dir, files })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn body(&self, r: &SnapshotRef) -> Result<Vec<u8>, String> {
        let key = (normalize_url(&r.original_url), r.timestamp.as_str().to_string());
        let path = self
            .files
            .get(&key)
            .ok_or_else(|| format!("no fixture for {} at {}", r.original_url, r.timestamp))?;
        fsutil::read_maybe_gz(path).map_err(|e| format!("{}: {e}", path.display()))
    }
}
