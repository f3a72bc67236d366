//! JSON-Lines clip manifests: `{"path": ..., "labels": [...], "split": ...}`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AudioError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(format!(
                "unknown split {s:?} (expected train, valid or test)"
            )),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    path: String,
    labels: Vec<String>,
    split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipRecord {
    /// Resolved against the manifest's directory when relative.
    pub path: PathBuf,
    /// Sorted, deduplicated vocabulary indices.
    pub labels: Vec<usize>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
    /// Index → label string, sorted.
    pub vocabulary: Vec<String>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, AudioError> {
    let text = std::fs::read_to_string(path).map_err(|e| AudioError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base)
}

/// Parses manifest text; blank lines are ignored.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest, AudioError> {
    let mut raw = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(line).map_err(|e| AudioError::Manifest {
            line: line_no,
            reason: e.to_string(),
        })?;
        if rec.path.is_empty() {
            return Err(AudioError::Manifest {
                line: line_no,
                reason: "empty path".into(),
            });
        }
        if let Some(&first) = seen.get(&rec.path) {
            return Err(AudioError::DuplicateClip {
                path: rec.path,
                first,
                line: line_no,
            });
        }
        seen.insert(rec.path.clone(), line_no);
        raw.push(rec);
    }
    if raw.is_empty() {
        return Err(AudioError::EmptyManifest);
    }
    let vocabulary: Vec<String> = raw
        .iter()
        .flat_map(|r| r.labels.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let records = raw
        .iter()
        .map(|r| {
            let labels: BTreeSet<usize> = r.labels.iter().map(|l| index[l.as_str()]).collect();
            ClipRecord {
                path: base.join(&r.path),
                labels: labels.into_iter().collect(),
                split: r.split,
            }
        })
        .collect();
    Ok(Manifest {
        records,
        vocabulary,
    })
}
