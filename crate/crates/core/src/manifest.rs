//! JSON Lines dataset manifests. Paths are stored relative to the
//! manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub img_a: String,
    pub img_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colored_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colored_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corr: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            records: Vec::new(),
        }
    }

    /// Parses a manifest. Blank lines are skipped; a malformed line is
    /// reported with its 1-based number.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::format(format!("{}: line {}: {e}", path.display(), i + 1))
            })?;
            records.push(rec);
        }
        Ok(Self { root, records })
    }

    /// Serialized form: one compact JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_bytes(path, self.to_jsonl().as_bytes())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Resolves an optional field, naming it in the error when absent.
    pub fn require(&self, index: usize, field: &str, value: &Option<String>) -> Result<PathBuf> {
        value
            .as_deref()
            .map(|v| self.resolve(v))
            .ok_or_else(|| Error::format(format!("manifest record {index} has no `{field}`")))
    }

    /// Checks that every referenced file exists.
    pub fn check_files(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let fields = [
                Some(&r.img_a),
                Some(&r.img_b),
                r.colored_a.as_ref(),
                r.colored_b.as_ref(),
                r.regions_a.as_ref(),
                r.regions_b.as_ref(),
                r.corr.as_ref(),
            ];
            for f in fields.into_iter().flatten() {
                let p = self.resolve(f);
                if !p.exists() {
                    return Err(Error::format(format!(
                        "manifest record {i} references missing file {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }
}
