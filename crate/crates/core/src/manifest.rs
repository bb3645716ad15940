//! Recording index: which file belongs to which subject, and its label.
//!
//! CSV header: `path,recording_id,subject_id,label,source`. Relative paths
//! resolve against the manifest's own directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dsp::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Bracets,
    Kauh,
    Synth,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Bracets => "BRACETS",
            Source::Kauh => "KAUH",
            Source::Synth => "SYNTH",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BRACETS" => Ok(Source::Bracets),
            "KAUH" => Ok(Source::Kauh),
            "SYNTH" => Ok(Source::Synth),
            other => Err(Error::Manifest(format!("unknown source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub recording_id: String,
    pub subject_id: String,
    pub label: Label,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

const COLUMNS: [&str; 5] = ["path", "recording_id", "subject_id", "label", "source"];

impl Manifest {
    /// Rejects duplicate recording ids, empty ids and subjects that carry
    /// both labels.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut subject_label: BTreeMap<&str, Label> = BTreeMap::new();
        for e in &entries {
            if e.recording_id.is_empty() || e.subject_id.is_empty() {
                return Err(Error::Manifest("empty recording_id or subject_id".into()));
            }
            if !seen.insert(e.recording_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate recording_id {}",
                    e.recording_id
                )));
            }
            if let Some(prev) = subject_label.insert(&e.subject_id, e.label) {
                if prev != e.label {
                    return Err(Error::Manifest(format!(
                        "subject {} has recordings labelled both {prev} and {}",
                        e.subject_id, e.label
                    )));
                }
            }
        }
        Ok(Manifest { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Subject id to label, sorted by id.
    pub fn subjects(&self) -> BTreeMap<String, Label> {
        self.entries
            .iter()
            .map(|e| (e.subject_id.clone(), e.label))
            .collect()
    }

    /// Keeps the entries whose subject is in `subjects`, preserving order.
    pub fn filter_subjects(&self, subjects: &HashSet<String>) -> Manifest {
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|e| subjects.contains(&e.subject_id))
                .cloned()
                .collect(),
        }
    }

    pub fn parse_csv(text: &str, base_dir: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Manifest(e.to_string()))?
            .clone();
        let mut idx = [0usize; 5];
        for (slot, name) in idx.iter_mut().zip(COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Manifest(format!("missing column {name}")))?;
        }
        let mut entries = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Manifest(e.to_string()))?;
            let field = |i: usize| record.get(idx[i]).unwrap_or("");
            let raw_path = PathBuf::from(field(0));
            let path = if raw_path.is_absolute() {
                raw_path
            } else {
                base_dir.join(raw_path)
            };
            let label = field(3)
                .parse()
                .map_err(|e| Error::Manifest(format!("row {}: {e}", line + 2)))?;
            let source = field(4)
                .parse()
                .map_err(|e| Error::Manifest(format!("row {}: {e}", line + 2)))?;
            entries.push(ManifestEntry {
                path,
                recording_id: field(1).to_string(),
                subject_id: field(2).to_string(),
                label,
                source,
            });
        }
        Manifest::new(entries)
    }

    /// With `strict`, every referenced file must exist.
    pub fn load(path: &Path, strict: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse_csv(&text, base)?;
        if strict {
            if let Some(e) = m.entries.iter().find(|e| !e.path.is_file()) {
                return Err(Error::Manifest(format!(
                    "recording {} refers to missing file {}",
                    e.recording_id,
                    e.path.display()
                )));
            }
        }
        Ok(m)
    }

    /// Paths under `base_dir` are written relative to it.
    pub fn to_csv(&self, base_dir: &Path) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS).expect("in-memory write");
        for e in &self.entries {
            let p = e.path.strip_prefix(base_dir).unwrap_or(&e.path);
            w.write_record([
                p.to_string_lossy().as_ref(),
                &e.recording_id,
                &e.subject_id,
                &e.label.to_string(),
                &e.source.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        crate::io::write_atomic(path, self.to_csv(base).as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_ROWS: &str = "path,recording_id,subject_id,label,source\n\
        a.wav,r1,s1,ILD,SYNTH\n\
        /abs/b.wav,r2,s2,healthy,bracets\n";

    #[test]
    fn parses_rows_and_resolves_paths() {
        let m = Manifest::parse_csv(TWO_ROWS, Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries()[0].path, PathBuf::from("/data/a.wav"));
        assert_eq!(m.entries()[1].path, PathBuf::from("/abs/b.wav"));
        assert_eq!(m.entries()[1].label, Label::Healthy);
        assert_eq!(m.entries()[1].source, Source::Bracets);
    }

    #[test]
    fn duplicate_ids_are_named() {
        let text = "path,recording_id,subject_id,label,source\na,r1,s1,ILD,SYNTH\nb,r1,s2,ILD,SYNTH\n";
        let err = Manifest::parse_csv(text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("r1"), "{err}");
    }

    #[test]
    fn bad_tokens_and_columns() {
        let text = "path,recording_id,subject_id,label,source\na,r1,s1,COPD,SYNTH\n";
        assert!(Manifest::parse_csv(text, Path::new(".")).is_err());
        let text = "path,recording_id,label,source\na,r1,ILD,SYNTH\n";
        assert!(Manifest::parse_csv(text, Path::new(".")).is_err());
        let text = "path,recording_id,subject_id,label,source\na,r1,s1,ILD,SYNTH\nb,r2,s1,Healthy,SYNTH\n";
        assert!(Manifest::parse_csv(text, Path::new(".")).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = Manifest::parse_csv(TWO_ROWS, Path::new("/data")).unwrap();
        let text = m.to_csv(Path::new("/data"));
        assert!(text.starts_with("path,recording_id,subject_id,label,source\na.wav,r1,s1,ILD,SYNTH"));
        assert_eq!(Manifest::parse_csv(&text, Path::new("/data")).unwrap(), m);
    }

    #[test]
    fn strict_load_checks_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, TWO_ROWS).unwrap();
        assert!(Manifest::load(&path, false).is_ok());
        assert!(Manifest::load(&path, true).is_err());
    }
}
