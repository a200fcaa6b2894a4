use std::io::BufRead;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const DEFAULT_CLASSES: [&str; 5] = ["boxing", "jack", "jump", "squats", "walk"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// Reads `path<TAB>label` lines. Labels are class indices or class names;
/// relative paths resolve against `base`.
pub fn parse_manifest(reader: impl BufRead, base: &Path, classes: &[String]) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((path, label)) = line.split_once('\t') else {
            return Err(Error::Parse { line: i + 1, msg: "expected path<TAB>label".into() });
        };
        let label = label.trim();
        let idx = match label.parse::<usize>() {
            Ok(v) => v,
            Err(_) => classes
                .iter()
                .position(|c| c.eq_ignore_ascii_case(label))
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("unknown class {label:?}") })?,
        };
        if idx >= classes.len() {
            return Err(Error::Parse { line: i + 1, msg: format!("label {idx} outside {} classes", classes.len()) });
        }
        let p = PathBuf::from(path.trim());
        out.push(ManifestEntry { path: if p.is_absolute() { p } else { base.join(p) }, label: idx });
    }
    Ok(out)
}
