//! Dataset manifests: one `image <TAB> flow_1 <TAB> … flow_k` record per line.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: PathBuf,
    /// Flow fields averaged into the label, or one per step for sequences.
    pub flows: Vec<PathBuf>,
}

/// Parses a manifest. Relative paths are resolved against the manifest's
/// directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields: Vec<&str> = line.split('\t').filter(|s| !s.is_empty()).collect();
        if fields.len() == 2 && fields[1].contains(' ') {
            let rest = fields.pop().unwrap_or_default();
            fields.extend(rest.split_whitespace());
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "expected an image path and at least one flow path".into(),
            });
        }
        let resolve = |s: &str| base.join(s.trim());
        out.push(ManifestRecord {
            image: resolve(fields[0]),
            flows: fields[1..].iter().map(|s| resolve(s)).collect(),
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.image.to_string_lossy());
        for f in &r.flows {
            text.push('\t');
            text.push_str(&f.to_string_lossy());
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
