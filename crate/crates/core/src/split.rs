//! Seeded train/val/test assignment and the dataset manifest.
//!
//! Per class, `test_per_class` images are drawn uniformly for testing; a
//! class with that many images or fewer goes to test entirely. A
//! `val_fraction` share of what remains becomes validation and the rest is
//! training data. Each class draws from its own named sub-seed, so adding a
//! class does not reshuffle the others.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::catalog::ClassLabel;
use crate::error::{Error, Result};
use crate::ident::rng_for;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub test_per_class: usize,
    pub val_fraction: f64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy {
            test_per_class: 2500,
            val_fraction: 0.1,
        }
    }
}

/// Identifies one image before it is encoded: the class-stream chunk it will
/// be built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageKey {
    pub label: ClassLabel,
    /// Sequence number within the class, across all input files.
    pub chunk_index: u64,
    pub file_id: u32,
    /// Chunk number within that file's class stream.
    pub file_chunk: u64,
}

impl ImageKey {
    /// `<split>/<Ck>/<chunk_index>.png`, relative to the output root.
    pub fn relative_path(&self, split: Split) -> String {
        format!(
            "{}/{}/{:06}.png",
            split,
            self.label.tag(),
            self.chunk_index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: ClassLabel,
    pub split: Split,
    pub file_id: u32,
    pub file_chunk: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub stats_ref: String,
    pub seed: u64,
    pub fingerprint: String,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn count(&self, label: ClassLabel, split: Split) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == label && e.split == split)
            .count()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Manifest entry for a key, if the key was split.
    pub fn lookup(&self) -> BTreeMap<(ClassLabel, u32, u64), &ManifestEntry> {
        self.entries
            .iter()
            .map(|e| ((e.label, e.file_id, e.file_chunk), e))
            .collect()
    }

    /// Writes the manifest as delimited text: `#` metadata lines followed by
    /// a CSV table `path,class_id,split,file_id,file_chunk`.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# flowpix-manifest v{MANIFEST_VERSION}")?;
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# fingerprint={}", self.fingerprint)?;
        writeln!(out, "# stats={}", self.stats_ref)?;
        for w in &self.warnings {
            writeln!(out, "# warning={w}")?;
        }
        writeln!(out, "path,class_id,split,file_id,file_chunk")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.path,
                e.label.id(),
                e.split,
                e.file_id,
                e.file_chunk
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    pub fn read_from(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Config {
            path: origin.to_path_buf(),
            message,
        };
        let mut manifest = DatasetManifest {
            entries: Vec::new(),
            stats_ref: String::new(),
            seed: 0,
            fingerprint: String::new(),
            warnings: Vec::new(),
        };
        let mut saw_version = false;
        let mut saw_columns = false;
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(v) = meta.strip_prefix("flowpix-manifest v") {
                    if v != MANIFEST_VERSION.to_string() {
                        return Err(bad(format!("unsupported manifest version {v}")));
                    }
                    saw_version = true;
                } else if let Some((key, value)) = meta.split_once('=') {
                    match key {
                        "seed" => {
                            manifest.seed = value.parse().map_err(|_| bad("bad seed".into()))?
                        }
                        "fingerprint" => manifest.fingerprint = value.to_string(),
                        "stats" => manifest.stats_ref = value.to_string(),
                        "warning" => manifest.warnings.push(value.to_string()),
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_columns {
                if line != "path,class_id,split,file_id,file_chunk" {
                    return Err(bad(format!("unexpected column header {line:?}")));
                }
                saw_columns = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse_err = || bad(format!("malformed manifest line {}", n + 1));
            let [path, class_id, split, file_id, file_chunk] = fields[..] else {
                return Err(parse_err());
            };
            let class_id: u8 = class_id.parse().map_err(|_| parse_err())?;
            manifest.entries.push(ManifestEntry {
                path: path.to_string(),
                label: ClassLabel::new(class_id).ok_or_else(parse_err)?,
                split: split.parse().map_err(|_| parse_err())?,
                file_id: file_id.parse().map_err(|_| parse_err())?,
                file_chunk: file_chunk.parse().map_err(|_| parse_err())?,
            });
        }
        if !saw_version {
            return Err(bad("missing manifest version line".into()));
        }
        Ok(manifest)
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Assigns every image key to a split. Keys keep their per-class order in
/// the manifest; classes appear in id order.
pub fn split_dataset(
    images: &BTreeMap<ClassLabel, Vec<ImageKey>>,
    seed: u64,
    policy: SplitPolicy,
) -> DatasetManifest {
    let mut entries = Vec::new();
    let mut warnings = Vec::new();

    for (&label, keys) in images {
        let n = keys.len();
        if n == 0 {
            continue;
        }
        let mut rng = rng_for(seed, &format!("split/{}", label.tag()));
        let mut assignment = vec![Split::Train; n];

        if n > policy.test_per_class {
            for i in index::sample(&mut rng, n, policy.test_per_class) {
                assignment[i] = Split::Test;
            }
        } else {
            assignment.fill(Split::Test);
        }

        let rest: Vec<usize> = (0..n).filter(|&i| assignment[i] != Split::Test).collect();
        let val = ((rest.len() as f64) * policy.val_fraction).round() as usize;
        let val = val.min(rest.len());
        for i in index::sample(&mut rng, rest.len(), val) {
            assignment[rest[i]] = Split::Val;
        }

        if !assignment.contains(&Split::Train) {
            let w = format!("class {} has no training images", label.tag());
            log::warn!("{w}");
            warnings.push(w);
        }

        for (key, split) in keys.iter().zip(assignment) {
            entries.push(ManifestEntry {
                path: key.relative_path(split),
                label,
                split,
                file_id: key.file_id,
                file_chunk: key.file_chunk,
            });
        }
    }

    DatasetManifest {
        entries,
        stats_ref: String::new(),
        seed,
        fingerprint: String::new(),
        warnings,
    }
}
