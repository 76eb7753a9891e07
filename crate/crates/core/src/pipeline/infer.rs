//! Chunked-overlap inference: chunk planning, probability merging, boundary
//! extraction, and utterance scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FbankConfig;

/// Inference-time settings. `threshold: None` means "use the EER-crossing
/// threshold of the evaluated set".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    /// Chunk length in seconds; matches the training chunk length.
    pub chunk_len: f64,
    pub overlap_fraction: f64,
    /// Utterance score = mean of the `top_n` largest frame probabilities.
    pub top_n: usize,
    pub threshold: Option<f64>,
    /// Localization match tolerance in frames.
    pub tolerance_frames: usize,
    pub fbank: FbankConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            chunk_len: 1.28,
            overlap_fraction: 0.5,
            top_n: 4,
            threshold: None,
            tolerance_frames: 5,
            fbank: FbankConfig::default(),
        }
    }
}

/// Chunk starts (sample offsets) for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPlan {
    pub starts: Vec<usize>,
    pub chunk_len: usize,
    pub overlap_fraction: f64,
}

/// Evenly strided chunk starts with a tail chunk aligned to the utterance
/// end. Inputs shorter than one chunk yield a single (padded) chunk.
pub fn plan_chunks(num_samples: usize, chunk_len: usize, overlap_fraction: f64) -> Result<ChunkPlan> {
    if chunk_len == 0 {
        return Err(Error::argument("plan_chunks: chunk_len must be >= 1"));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::argument(
            "plan_chunks: overlap_fraction must be in [0, 1)",
        ));
    }
    let mut starts = Vec::new();
    if num_samples <= chunk_len {
        starts.push(0);
    } else {
        let stride = ((chunk_len as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
        let mut s = 0usize;
        while s + chunk_len <= num_samples {
            starts.push(s);
            s += stride;
        }
        let tail = num_samples - chunk_len;
        if *starts.last().expect("at least one start") < tail {
            starts.push(tail);
        }
    }
    Ok(ChunkPlan {
        starts,
        chunk_len,
        overlap_fraction,
    })
}

/// Averages overlapping chunk outputs onto the utterance frame grid.
///
/// Chunk frame `t` of the chunk starting at sample `s` lands on global frame
/// `round(s / shift_samples) + t`. Frames beyond `total_frames` (padded
/// tails) are discarded. Accumulation is `f64`.
pub fn merge_chunk_probs(
    chunk_probs: &[Vec<f32>],
    plan: &ChunkPlan,
    shift_samples: usize,
    total_frames: usize,
) -> Result<Vec<f64>> {
    if chunk_probs.len() != plan.starts.len() {
        return Err(Error::shape(format!(
            "merge: {} chunk outputs for {} planned chunks",
            chunk_probs.len(),
            plan.starts.len()
        )));
    }
    if shift_samples == 0 {
        return Err(Error::argument("merge: shift_samples must be positive"));
    }
    let mut sums = vec![0.0f64; total_frames];
    let mut counts = vec![0u32; total_frames];
    for (probs, &start) in chunk_probs.iter().zip(plan.starts.iter()) {
        let offset = (start as f64 / shift_samples as f64).round() as usize;
        for (t, &p) in probs.iter().enumerate() {
            let Some(g) = offset.checked_add(t) else {
                return Err(Error::internal("merge: frame index overflow"));
            };
            if g < total_frames {
                sums[g] += f64::from(p);
                counts[g] += 1;
            }
        }
    }
    if let Some(idx) = counts.iter().position(|&c| c == 0) {
        return Err(Error::internal(format!(
            "merge: frame {idx} not covered by any chunk"
        )));
    }
    Ok(sums
        .iter()
        .zip(counts.iter())
        .map(|(&s, &c)| s / f64::from(c))
        .collect())
}

/// Frames whose probability exceeds the threshold, collapsed so each maximal
/// run of super-threshold frames reports its argmax (ties break to the
/// lowest index).
pub fn detect_boundaries(probs: &[f64], threshold: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=probs.len() {
        let above = i < probs.len() && probs[i] > threshold;
        match (above, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                let mut best = s;
                for j in s..i {
                    if probs[j] > probs[best] {
                        best = j;
                    }
                }
                out.push(best);
                run_start = None;
            }
            _ => {}
        }
    }
    out
}

/// Mean of the `n` largest probabilities (all of them when `T < n`).
pub fn utterance_score(probs: &[f64], n: usize) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::argument("utterance_score: empty probabilities"));
    }
    if n == 0 {
        return Err(Error::argument("utterance_score: n must be >= 1"));
    }
    let k = n.min(probs.len());
    let mut sorted = probs.to_vec();
    sorted.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite probabilities"));
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}
