//! JSON-lines manifest: one object per utterance.
//!
//! ```json
//! {"id": "...", "path": "...", "class": "genuine|fully_fake|partially_fake",
//!  "segments": [[start, end], ...], "boundaries": [s1, s2, ...],
//!  "provenance": [...]}
//! ```
//!
//! Positions are sample indices. `provenance` is present only on spliced
//! utterances and records how each splice was built.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    AnnotatedUtterance, AudioSource, ProvenanceEntry, SpliceAnnotation, UtteranceClass,
    UtteranceRecord, WordSegment,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub class: UtteranceClass,
    pub segments: Vec<[usize; 2]>,
    pub boundaries: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<ProvenanceEntry>,
}

impl ManifestEntry {
    pub fn from_utterance(u: &AnnotatedUtterance, path: impl Into<String>) -> Self {
        ManifestEntry {
            id: u.record.id.clone(),
            path: path.into(),
            class: u.record.class,
            segments: u.record.segments.iter().map(|s| [s.start, s.end]).collect(),
            boundaries: u.annotation.boundaries.clone(),
            provenance: u.annotation.provenance.clone(),
        }
    }

    /// Rebuilds the in-memory form; `base_dir` resolves relative paths.
    pub fn into_utterance(self, base_dir: &Path) -> AnnotatedUtterance {
        let path = base_dir.join(&self.path);
        AnnotatedUtterance {
            record: UtteranceRecord {
                id: self.id,
                audio: AudioSource::File(path),
                segments: self
                    .segments
                    .iter()
                    .map(|&[s, e]| WordSegment::new(s, e))
                    .collect(),
                class: self.class,
            },
            annotation: SpliceAnnotation {
                boundaries: self.boundaries,
                provenance: self.provenance,
            },
        }
    }
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for e in entries {
        serde_json::to_writer(&mut file, e)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut out = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::format(format!(
                "{}:{}: invalid manifest entry: {e}",
                path.as_ref().display(),
                lineno + 1
            ))
        })?;
        out.push(entry);
    }
    Ok(out)
}
