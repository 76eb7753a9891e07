//! Frame labels from splice annotations and fixed-length training chunks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;
use crate::corpus::{AnnotatedUtterance, SpliceAnnotation, UtteranceClass, LABEL_SMEAR_HALF_WIDTH};
use crate::error::{Error, Result};

/// Per-frame binary labels; 1 marks a (smeared) splice boundary frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub y: Vec<u8>,
    /// Frame shift in seconds.
    pub frame_shift: f64,
}

impl FrameLabels {
    pub fn num_positive(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_all_zero(&self) -> bool {
        self.y.iter().all(|&v| v == 0)
    }
}

/// Frame geometry used to translate sample positions into frame indices.
#[derive(Debug, Clone, Copy)]
pub struct FrameSpec {
    /// Analysis window length in seconds.
    pub frame_len: f64,
    /// Frame shift in seconds.
    pub frame_shift: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            frame_len: 0.025,
            frame_shift: 0.010,
        }
    }
}

impl FrameSpec {
    pub fn frame_len_samples(&self, rate: u32) -> usize {
        (self.frame_len * rate as f64).round() as usize
    }

    pub fn shift_samples(&self, rate: u32) -> usize {
        (self.frame_shift * rate as f64).round() as usize
    }

    /// `T = 1 + floor((n - frame_len) / shift)`.
    pub fn num_frames(&self, n: usize, rate: u32) -> Result<usize> {
        let flen = self.frame_len_samples(rate);
        let shift = self.shift_samples(rate);
        if flen == 0 || shift == 0 {
            return Err(Error::config("frame length and shift must be positive"));
        }
        if n < flen {
            return Err(Error::argument(format!(
                "{n} samples shorter than one frame ({flen})"
            )));
        }
        Ok(1 + (n - flen) / shift)
    }
}

/// Labels from raw boundary sample positions. Each boundary maps to frame
/// `b = floor(s / shift_samples)`; that frame and its 4 nearest neighbours
/// (2 per side, clipped to `[0, T-1]`) are set to 1.
///
/// Boundaries at or beyond `T * shift_samples` are rejected; use windowing
/// code to drop out-of-horizon boundaries before calling.
pub fn labels_from_boundaries(
    boundaries: &[usize],
    frame_shift: f64,
    sample_rate: u32,
    num_frames: usize,
) -> Result<FrameLabels> {
    if num_frames == 0 {
        return Err(Error::argument("num_frames must be >= 1"));
    }
    let shift_samples = (frame_shift * sample_rate as f64).round() as usize;
    if shift_samples == 0 {
        return Err(Error::argument("frame_shift must be positive"));
    }
    let mut y = vec![0u8; num_frames];
    for &s in boundaries {
        let frame = s / shift_samples;
        if frame >= num_frames {
            return Err(Error::argument(format!(
                "boundary at sample {s} maps to frame {frame}, beyond T = {num_frames}"
            )));
        }
        let lo = frame.saturating_sub(LABEL_SMEAR_HALF_WIDTH);
        let hi = (frame + LABEL_SMEAR_HALF_WIDTH).min(num_frames - 1);
        for v in &mut y[lo..=hi] {
            *v = 1;
        }
    }
    Ok(FrameLabels { y, frame_shift })
}

/// Labels for a whole utterance from its annotation.
pub fn labels_from_annotation(
    ann: &SpliceAnnotation,
    frame_shift: f64,
    sample_rate: u32,
    num_frames: usize,
) -> Result<FrameLabels> {
    labels_from_boundaries(&ann.boundaries, frame_shift, sample_rate, num_frames)
}

/// Training pool with materialized audio, split by class. Fully fake
/// utterances are donors only and are not sampled from.
pub struct TrainingPool {
    genuine: Vec<(AnnotatedUtterance, Waveform)>,
    fake: Vec<(AnnotatedUtterance, Waveform)>,
    sample_rate: u32,
}

impl TrainingPool {
    pub fn from_utterances(utts: impl IntoIterator<Item = AnnotatedUtterance>) -> Result<Self> {
        let mut genuine = Vec::new();
        let mut fake = Vec::new();
        let mut sample_rate = None;
        for u in utts {
            let audio = u.load_audio()?;
            match sample_rate {
                None => sample_rate = Some(audio.sample_rate),
                Some(r) if r != audio.sample_rate => {
                    return Err(Error::argument(format!(
                        "{}: sample rate {} differs from pool rate {r} (resampling is unsupported)",
                        u.record.id, audio.sample_rate
                    )))
                }
                _ => {}
            }
            match u.record.class {
                UtteranceClass::Genuine => genuine.push((u, audio)),
                UtteranceClass::PartiallyFake => fake.push((u, audio)),
                UtteranceClass::FullyFake => {}
            }
        }
        let sample_rate =
            sample_rate.ok_or_else(|| Error::argument("empty training pool"))?;
        Ok(TrainingPool {
            genuine,
            fake,
            sample_rate,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn genuine_count(&self) -> usize {
        self.genuine.len()
    }

    pub fn fake_count(&self) -> usize {
        self.fake.len()
    }
}

/// One sampled training example.
#[derive(Debug, Clone)]
pub struct TrainingChunk {
    pub audio: Waveform,
    pub labels: FrameLabels,
    pub genuine: bool,
    pub source_id: String,
}

/// Draws a fixed-length chunk: with probability `p_genuine` from the genuine
/// pool (all-zero labels by construction), otherwise from the partially fake
/// pool. A uniformly random window is cut; utterances shorter than the chunk
/// are extended by wrap-around repetition with no label at the wrap seam.
/// Boundary labels are translated into chunk-local frame coordinates and
/// out-of-window boundaries are dropped.
pub fn sample_training_chunk(
    pool: &TrainingPool,
    chunk_len: f64,
    p_genuine: f64,
    framing: &FrameSpec,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingChunk> {
    if !(0.0..=1.0).contains(&p_genuine) {
        return Err(Error::argument("p_genuine must be in [0, 1]"));
    }
    if chunk_len <= 0.0 {
        return Err(Error::argument("chunk_len must be positive"));
    }
    let rate = pool.sample_rate;
    let chunk_samples = (chunk_len * rate as f64).round() as usize;
    let num_frames = framing.num_frames(chunk_samples, rate)?;
    let shift = framing.shift_samples(rate);
    let label_horizon = num_frames * shift; // samples covered by some frame

    let draw_genuine = rng.gen::<f64>() < p_genuine;
    let bucket = if draw_genuine { &pool.genuine } else { &pool.fake };
    if bucket.is_empty() {
        return Err(Error::argument(format!(
            "cannot draw a {} chunk from an empty pool",
            if draw_genuine { "genuine" } else { "partially fake" }
        )));
    }
    let (utt, audio) = &bucket[rng.gen_range(0..bucket.len())];

    let n = audio.len();
    if n == 0 {
        return Err(Error::argument(format!("{}: empty audio", utt.record.id)));
    }

    let mut local_boundaries: Vec<usize> = Vec::new();
    let samples: Vec<f32> = if n >= chunk_samples {
        let start = rng.gen_range(0..=n - chunk_samples);
        for &b in &utt.annotation.boundaries {
            if b >= start && b < start + chunk_samples {
                let local = b - start;
                if local < label_horizon {
                    local_boundaries.push(local);
                }
            }
        }
        audio.samples[start..start + chunk_samples].to_vec()
    } else {
        // Wrap-around padding; splice boundaries recur in each copy, the
        // wrap seams themselves are not labeled.
        let mut s = Vec::with_capacity(chunk_samples);
        for i in 0..chunk_samples {
            s.push(audio.samples[i % n]);
        }
        let copies = chunk_samples.div_ceil(n);
        for k in 0..copies {
            for &b in &utt.annotation.boundaries {
                let pos = k * n + b;
                if pos < chunk_samples && pos < label_horizon {
                    local_boundaries.push(pos);
                }
            }
        }
        local_boundaries.sort_unstable();
        s
    };

    let labels = labels_from_boundaries(&local_boundaries, framing.frame_shift, rate, num_frames)?;
    Ok(TrainingChunk {
        audio: Waveform::new(samples, rate),
        labels,
        genuine: draw_genuine,
        source_id: utt.record.id.clone(),
    })
}
