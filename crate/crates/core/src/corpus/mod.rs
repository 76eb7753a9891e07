//! Corpus construction: toy utterance synthesis with known word segments,
//! the three word-level splice strategies with exact boundary ground truth,
//! frame-label generation, and training-chunk sampling.

mod labels;
mod manifest;
mod splice;
mod synth;

pub use labels::{
    labels_from_annotation, labels_from_boundaries, sample_training_chunk, FrameLabels,
    FrameSpec, TrainingChunk, TrainingPool,
};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use splice::{build_training_pool, splice_repeat, splice_replace, SpliceResult};
pub use synth::{derive_utterance_seed, generate_toy_corpus, ToyCorpusConfig, ToyFamily};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Half-width of the boundary label smear: the boundary frame and its 4
/// nearest neighbours (2 on each side) are labeled positive.
pub const LABEL_SMEAR_HALF_WIDTH: usize = 2;

/// A word extent in samples, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSegment {
    pub start: usize,
    pub end: usize,
}

impl WordSegment {
    pub fn new(start: usize, end: usize) -> Self {
        WordSegment { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceClass {
    Genuine,
    FullyFake,
    PartiallyFake,
}

/// Where an utterance's audio lives.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    Memory(Waveform),
    File(PathBuf),
}

impl AudioSource {
    pub fn load(&self) -> Result<Waveform> {
        match self {
            AudioSource::Memory(w) => Ok(w.clone()),
            AudioSource::File(p) => crate::audio::read_wav(p),
        }
    }
}

/// An utterance, its word segments, and its class.
#[derive(Debug, Clone)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio: AudioSource,
    pub segments: Vec<WordSegment>,
    pub class: UtteranceClass,
}

impl UtteranceRecord {
    /// Checks segment ordering against a known audio length.
    pub fn validate_segments(&self, audio_len: usize) -> Result<()> {
        let mut prev_end = 0usize;
        for (i, s) in self.segments.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::argument(format!(
                    "{}: segment {i} is empty or inverted",
                    self.id
                )));
            }
            if s.start < prev_end {
                return Err(Error::argument(format!(
                    "{}: segment {i} overlaps or is unsorted",
                    self.id
                )));
            }
            if s.end > audio_len {
                return Err(Error::argument(format!(
                    "{}: segment {i} ends at {} beyond audio length {audio_len}",
                    self.id, s.end
                )));
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

/// Which splice strategy produced a provenance entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpliceStrategy {
    ReplaceGenuine,
    ReplaceFake,
    Repeat,
}

/// One splice event: which target segment was touched, where the inserted
/// material came from, and where it landed in the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub strategy: SpliceStrategy,
    pub donor_id: String,
    /// Extent of the inserted material in the donor's sample coordinates.
    pub donor_segment: WordSegment,
    /// Index of the replaced/repeated segment in the original target.
    pub target_segment_index: usize,
    /// Output sample position where the inserted material begins.
    pub insert_at: usize,
}

/// Exact splice ground truth for one utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpliceAnnotation {
    /// Sample positions of concatenation seams, strictly increasing, each in
    /// `(0, len)` of the spliced audio.
    pub boundaries: Vec<usize>,
    pub provenance: Vec<ProvenanceEntry>,
}

impl SpliceAnnotation {
    pub fn empty() -> Self {
        SpliceAnnotation::default()
    }

    pub fn validate(&self, audio_len: usize) -> Result<()> {
        for pair in self.boundaries.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::argument("boundaries must be strictly increasing"));
            }
        }
        if let Some(&b) = self.boundaries.first() {
            if b == 0 {
                return Err(Error::argument("boundary at sample 0"));
            }
        }
        if let Some(&b) = self.boundaries.last() {
            if b >= audio_len {
                return Err(Error::argument(format!(
                    "boundary {b} at or beyond audio length {audio_len}"
                )));
            }
        }
        Ok(())
    }
}

/// An utterance record together with its splice ground truth (empty for
/// genuine and fully fake utterances).
#[derive(Debug, Clone)]
pub struct AnnotatedUtterance {
    pub record: UtteranceRecord,
    pub annotation: SpliceAnnotation,
}

impl AnnotatedUtterance {
    pub fn unannotated(record: UtteranceRecord) -> Self {
        AnnotatedUtterance {
            record,
            annotation: SpliceAnnotation::empty(),
        }
    }

    pub fn load_audio(&self) -> Result<Waveform> {
        self.record.audio.load()
    }
}
