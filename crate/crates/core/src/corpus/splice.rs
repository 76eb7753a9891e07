//! The three splice strategies: replace word segments with genuine donors,
//! replace with fake donors, and repeat segments in place.
//!
//! Cuts are made at sample precision with no crossfade; every concatenation
//! seam is recorded in the annotation, including seams that happen to be
//! acoustically invisible (labels are defined by construction).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;
use crate::corpus::{
    AnnotatedUtterance, AudioSource, ProvenanceEntry, SpliceAnnotation, SpliceStrategy,
    UtteranceClass, UtteranceRecord, WordSegment,
};
use crate::error::{Error, Result};

/// Output of one splice operation.
#[derive(Debug, Clone)]
pub struct SpliceResult {
    pub audio: Waveform,
    pub annotation: SpliceAnnotation,
    pub segments: Vec<WordSegment>,
}

/// Replaces `n` distinct word segments of a genuine target with uniformly
/// chosen donor word segments. The strategy tag records whether the donor
/// pool is genuine (strategy 1) or fake (strategy 2).
pub fn splice_replace(
    target: &UtteranceRecord,
    target_audio: &Waveform,
    donors: &[(&UtteranceRecord, &Waveform)],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SpliceResult> {
    if target.class != UtteranceClass::Genuine {
        return Err(Error::argument("splice_replace: target must be genuine"));
    }
    if n == 0 || n > target.segments.len() {
        return Err(Error::argument(format!(
            "splice_replace: n = {n} outside [1, {}]",
            target.segments.len()
        )));
    }
    if donors.is_empty() {
        return Err(Error::argument("splice_replace: empty donor pool"));
    }
    // Flatten donor words; every (utterance, segment) pair is equally likely.
    let mut donor_words: Vec<(usize, usize)> = Vec::new();
    for (di, (rec, _)) in donors.iter().enumerate() {
        for si in 0..rec.segments.len() {
            donor_words.push((di, si));
        }
    }
    if donor_words.is_empty() {
        return Err(Error::argument("splice_replace: donors have no word segments"));
    }
    let strategy = match donors[0].0.class {
        UtteranceClass::Genuine => SpliceStrategy::ReplaceGenuine,
        _ => SpliceStrategy::ReplaceFake,
    };

    let selected = choose_distinct(target.segments.len(), n, rng);

    let mut out: Vec<f32> = Vec::with_capacity(target_audio.len());
    let mut annotation = SpliceAnnotation::empty();
    let mut segments = Vec::with_capacity(target.segments.len());
    let mut seam_candidates: Vec<usize> = Vec::new();
    let mut cursor = 0usize;

    for (i, seg) in target.segments.iter().enumerate() {
        out.extend_from_slice(&target_audio.samples[cursor..seg.start]);
        if selected.contains(&i) {
            let (di, si) = donor_words[rng.gen_range(0..donor_words.len())];
            let (donor_rec, donor_audio) = donors[di];
            let dseg = donor_rec.segments[si];
            let insert_at = out.len();
            out.extend_from_slice(&donor_audio.samples[dseg.start..dseg.end]);
            seam_candidates.push(insert_at);
            seam_candidates.push(out.len());
            segments.push(WordSegment::new(insert_at, out.len()));
            annotation.provenance.push(ProvenanceEntry {
                strategy,
                donor_id: donor_rec.id.clone(),
                donor_segment: dseg,
                target_segment_index: i,
                insert_at,
            });
        } else {
            let start = out.len();
            out.extend_from_slice(&target_audio.samples[seg.start..seg.end]);
            segments.push(WordSegment::new(start, out.len()));
        }
        cursor = seg.end;
    }
    out.extend_from_slice(&target_audio.samples[cursor..]);

    annotation.boundaries = finalize_seams(seam_candidates, out.len());
    Ok(SpliceResult {
        audio: Waveform::new(out, target_audio.sample_rate),
        annotation,
        segments,
    })
}

/// Repeats `n` distinct word segments in place (each copy inserted right
/// after its original). Legal only when `floor(segments / 3) >= 1`, with
/// `n` in `[1, floor(segments / 3)]`.
pub fn splice_repeat(
    target: &UtteranceRecord,
    target_audio: &Waveform,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SpliceResult> {
    if target.class != UtteranceClass::Genuine {
        return Err(Error::argument("splice_repeat: target must be genuine"));
    }
    let max_n = target.segments.len() / 3;
    if max_n == 0 {
        return Err(Error::argument(format!(
            "splice_repeat: {} segments leave no valid repeat count",
            target.segments.len()
        )));
    }
    if n == 0 || n > max_n {
        return Err(Error::argument(format!(
            "splice_repeat: n = {n} outside [1, {max_n}]"
        )));
    }

    let selected = choose_distinct(target.segments.len(), n, rng);

    let mut out: Vec<f32> = Vec::with_capacity(target_audio.len());
    let mut annotation = SpliceAnnotation::empty();
    let mut segments = Vec::new();
    let mut seam_candidates: Vec<usize> = Vec::new();
    let mut cursor = 0usize;

    for (i, seg) in target.segments.iter().enumerate() {
        out.extend_from_slice(&target_audio.samples[cursor..seg.start]);
        let start = out.len();
        out.extend_from_slice(&target_audio.samples[seg.start..seg.end]);
        segments.push(WordSegment::new(start, out.len()));
        if selected.contains(&i) {
            let insert_at = out.len();
            out.extend_from_slice(&target_audio.samples[seg.start..seg.end]);
            seam_candidates.push(insert_at);
            seam_candidates.push(out.len());
            segments.push(WordSegment::new(insert_at, out.len()));
            annotation.provenance.push(ProvenanceEntry {
                strategy: SpliceStrategy::Repeat,
                donor_id: target.id.clone(),
                donor_segment: *seg,
                target_segment_index: i,
                insert_at,
            });
        }
        cursor = seg.end;
    }
    out.extend_from_slice(&target_audio.samples[cursor..]);

    annotation.boundaries = finalize_seams(seam_candidates, out.len());
    Ok(SpliceResult {
        audio: Waveform::new(out, target_audio.sample_rate),
        annotation,
        segments,
    })
}

/// Applies each strategy `reps_per_strategy` times to every genuine
/// utterance, skipping inapplicable cases (too few segments for a repeat).
/// Replacement counts follow the paper's ranges: `n` uniform in {1,2,3}
/// (clamped to the segment count) for replacements, `n` uniform in
/// `[1, floor(N/3)]` for repeats.
pub fn build_training_pool(
    genuine: &[AnnotatedUtterance],
    fake: &[AnnotatedUtterance],
    reps_per_strategy: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AnnotatedUtterance>> {
    if genuine.is_empty() {
        return Err(Error::argument("build_training_pool: empty genuine pool"));
    }
    // Materialize audio once.
    let genuine_audio: Vec<Waveform> = genuine
        .iter()
        .map(|u| u.load_audio())
        .collect::<Result<_>>()?;
    let fake_audio: Vec<Waveform> = fake
        .iter()
        .map(|u| u.load_audio())
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (ti, target) in genuine.iter().enumerate() {
        let target_audio = &genuine_audio[ti];
        let segs = target.record.segments.len();
        if segs == 0 {
            continue;
        }
        let mut counter = 0usize;
        for _ in 0..reps_per_strategy {
            // Strategy 1: replace with genuine donor words (other utterances).
            let donor_pool: Vec<(&UtteranceRecord, &Waveform)> = genuine
                .iter()
                .zip(genuine_audio.iter())
                .enumerate()
                .filter(|(di, _)| *di != ti)
                .map(|(_, (u, w))| (&u.record, w))
                .collect();
            if !donor_pool.is_empty() {
                let n = rng.gen_range(1..=3usize).min(segs);
                let r = splice_replace(&target.record, target_audio, &donor_pool, n, rng)?;
                out.push(to_partially_fake(&target.record.id, &mut counter, r));
            }
            // Strategy 2: replace with fake donor words.
            if !fake.is_empty() {
                let donor_pool: Vec<(&UtteranceRecord, &Waveform)> = fake
                    .iter()
                    .zip(fake_audio.iter())
                    .map(|(u, w)| (&u.record, w))
                    .collect();
                let n = rng.gen_range(1..=3usize).min(segs);
                let r = splice_replace(&target.record, target_audio, &donor_pool, n, rng)?;
                out.push(to_partially_fake(&target.record.id, &mut counter, r));
            }
            // Strategy 3: repeat segments.
            let max_n = segs / 3;
            if max_n >= 1 {
                let n = rng.gen_range(1..=max_n);
                let r = splice_repeat(&target.record, target_audio, n, rng)?;
                out.push(to_partially_fake(&target.record.id, &mut counter, r));
            }
        }
    }
    Ok(out)
}

fn to_partially_fake(source_id: &str, counter: &mut usize, r: SpliceResult) -> AnnotatedUtterance {
    let id = format!("{source_id}-pf{counter:02}");
    *counter += 1;
    AnnotatedUtterance {
        record: UtteranceRecord {
            id,
            audio: AudioSource::Memory(r.audio),
            segments: r.segments,
            class: UtteranceClass::PartiallyFake,
        },
        annotation: r.annotation,
    }
}

/// `n` distinct indices from `0..len`, uniformly without replacement,
/// returned sorted ascending.
fn choose_distinct(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Drops seams at the utterance edges, sorts, and deduplicates coincident
/// seams (adjacent replacements share one).
fn finalize_seams(mut seams: Vec<usize>, total_len: usize) -> Vec<usize> {
    seams.retain(|&s| s > 0 && s < total_len);
    seams.sort_unstable();
    seams.dedup();
    seams
}
