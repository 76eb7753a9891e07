//! Corpus evaluation: chunked inference per utterance, utterance scores,
//! EER, localization metrics, and the serialized score report.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::corpus::{AnnotatedUtterance, UtteranceClass};
use crate::error::{Error, Result};
use crate::features::{fbank240, FeatureMatrix};
use crate::model::{detector_probs, DetectorConfig};
use crate::nn::ParamStore;
use crate::pipeline::infer::{
    detect_boundaries, merge_chunk_probs, plan_chunks, utterance_score, InferConfig,
};
use crate::pipeline::metrics::{
    compute_eer, localization_metrics, match_boundaries, LocalizationCounts, LocalizationMetrics,
};

/// One utterance prepared for evaluation: input signal (or precomputed
/// features) plus ground truth in frame coordinates.
#[derive(Debug, Clone)]
pub struct EvalUtterance {
    pub id: String,
    pub class: UtteranceClass,
    pub input: EvalInput,
    /// True boundary frames (empty for genuine utterances).
    pub boundary_frames: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum EvalInput {
    Audio(Waveform),
    Features(FeatureMatrix),
}

impl EvalUtterance {
    /// Loads audio and maps annotation boundaries onto the frame grid.
    pub fn from_annotated(u: &AnnotatedUtterance, infer: &InferConfig) -> Result<Self> {
        let audio = u.load_audio()?;
        let shift = infer.fbank.frame_shift_samples(audio.sample_rate).max(1);
        let boundary_frames = u.annotation.boundaries.iter().map(|&b| b / shift).collect();
        Ok(EvalUtterance {
            id: u.record.id.clone(),
            class: u.record.class,
            input: EvalInput::Audio(audio),
            boundary_frames,
        })
    }
}

/// Merged per-frame probabilities for one utterance under chunked-overlap
/// inference.
pub fn score_utterance(
    params: &ParamStore<f32>,
    model_cfg: &DetectorConfig,
    input: &EvalInput,
    infer: &InferConfig,
) -> Result<Vec<f64>> {
    match input {
        EvalInput::Audio(w) => {
            let rate = w.sample_rate;
            let chunk_samples = (infer.chunk_len * rate as f64).round() as usize;
            let total_frames = infer.fbank.num_frames(w.len(), rate)?;
            let shift = infer.fbank.frame_shift_samples(rate);
            let plan = plan_chunks(w.len(), chunk_samples, infer.overlap_fraction)?;
            let chunk_probs: Vec<Vec<f32>> = plan
                .starts
                .iter()
                .map(|&s| {
                    let samples: Vec<f32> = if w.len() >= s + chunk_samples {
                        w.samples[s..s + chunk_samples].to_vec()
                    } else {
                        // Single padded chunk: wrap-around repetition.
                        (0..chunk_samples).map(|i| w.samples[i % w.len()]).collect()
                    };
                    let feats = fbank240(&Waveform::new(samples, rate), &infer.fbank)?;
                    detector_probs(params, model_cfg, &feats)
                })
                .collect::<Result<_>>()?;
            merge_chunk_probs(&chunk_probs, &plan, shift, total_frames)
        }
        EvalInput::Features(f) => {
            let total_frames = f.num_frames();
            if total_frames == 0 {
                return Err(Error::argument("empty feature matrix"));
            }
            let chunk_frames = ((infer.chunk_len / f.frame_shift).round() as usize).max(1);
            let plan = plan_chunks(total_frames, chunk_frames, infer.overlap_fraction)?;
            let d = f.dim();
            let chunk_probs: Vec<Vec<f32>> = plan
                .starts
                .iter()
                .map(|&s| {
                    let mut rows = Vec::with_capacity(chunk_frames * d);
                    for t in 0..chunk_frames {
                        let src = if s + t < total_frames { s + t } else { (s + t) % total_frames };
                        rows.extend_from_slice(f.values.row(src));
                    }
                    let chunk = FeatureMatrix {
                        values: crate::nn::Tensor::from_vec(&[chunk_frames, d], rows)?,
                        frame_shift: f.frame_shift,
                        kind: f.kind,
                    };
                    detector_probs(params, model_cfg, &chunk)
                })
                .collect::<Result<_>>()?;
            // In the feature domain a "sample" is one frame: shift is 1.
            merge_chunk_probs(&chunk_probs, &plan, 1, total_frames)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Supplied by the caller (typically from the validation EER crossing).
    Provided,
    /// Derived from this report's own EER crossing.
    SelfEer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSettings {
    pub chunk_len: f64,
    pub overlap_fraction: f64,
    pub top_n: usize,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub tolerance_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
    /// Full run configuration echoed for provenance.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config_echo: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub class: UtteranceClass,
    pub score: f64,
    pub boundary_frames: Vec<usize>,
    pub true_boundary_frames: Vec<usize>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub eer: f64,
    pub eer_threshold: f64,
    pub localization: LocalizationMetrics,
    pub num_genuine: usize,
    pub num_fake: usize,
}

/// Per-utterance scores and corpus-level metrics, serializable to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub settings: ReportSettings,
    pub utterances: Vec<UtteranceResult>,
    pub metrics: CorpusMetrics,
}

impl ScoreReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path.as_ref())?)
    }

    pub fn genuine_scores(&self) -> Vec<f64> {
        self.utterances
            .iter()
            .filter(|u| u.class == UtteranceClass::Genuine)
            .map(|u| u.score)
            .collect()
    }

    pub fn fake_scores(&self) -> Vec<f64> {
        self.utterances
            .iter()
            .filter(|u| u.class != UtteranceClass::Genuine)
            .map(|u| u.score)
            .collect()
    }
}

/// Full evaluation with the trained detector.
pub fn evaluate(
    params: &ParamStore<f32>,
    model_cfg: &DetectorConfig,
    utterances: &[EvalUtterance],
    infer: &InferConfig,
    workers: usize,
    checkpoint_hash: Option<String>,
    config_echo: serde_json::Value,
) -> Result<ScoreReport> {
    evaluate_with_scorer(
        utterances,
        infer,
        workers,
        checkpoint_hash,
        config_echo,
        |u| score_utterance(params, model_cfg, &u.input, infer),
    )
}

/// Evaluation driver over an arbitrary frame-probability scorer. Tests use
/// this with oracle stubs; [`evaluate`] passes the real detector.
pub fn evaluate_with_scorer<F>(
    utterances: &[EvalUtterance],
    infer: &InferConfig,
    workers: usize,
    checkpoint_hash: Option<String>,
    config_echo: serde_json::Value,
    scorer: F,
) -> Result<ScoreReport>
where
    F: Fn(&EvalUtterance) -> Result<Vec<f64>> + Sync,
{
    if utterances.is_empty() {
        return Err(Error::argument("evaluate: no utterances"));
    }
    let run = |u: &EvalUtterance| -> Result<(Vec<f64>, f64)> {
        let probs = scorer(u)?;
        let score = utterance_score(&probs, infer.top_n)?;
        Ok((probs, score))
    };
    let scored: Vec<(Vec<f64>, f64)> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::internal(format!("thread pool: {e}")))?;
        pool.install(|| utterances.par_iter().map(run).collect::<Result<_>>())?
    } else {
        utterances.iter().map(run).collect::<Result<_>>()?
    };

    let genuine: Vec<f64> = utterances
        .iter()
        .zip(scored.iter())
        .filter(|(u, _)| u.class == UtteranceClass::Genuine)
        .map(|(_, (_, s))| *s)
        .collect();
    let fake: Vec<f64> = utterances
        .iter()
        .zip(scored.iter())
        .filter(|(u, _)| u.class != UtteranceClass::Genuine)
        .map(|(_, (_, s))| *s)
        .collect();
    let eer = compute_eer(&genuine, &fake)?;
    let (threshold, threshold_source) = match infer.threshold {
        Some(t) => (t, ThresholdSource::Provided),
        None => (eer.threshold, ThresholdSource::SelfEer),
    };

    let mut results = Vec::with_capacity(utterances.len());
    let mut loc_counts = LocalizationCounts::default();
    for (u, (probs, score)) in utterances.iter().zip(scored.into_iter()) {
        let detected = detect_boundaries(&probs, threshold);
        if u.class == UtteranceClass::PartiallyFake {
            loc_counts.accumulate(match_boundaries(
                &detected,
                &u.boundary_frames,
                infer.tolerance_frames,
            ));
        }
        results.push(UtteranceResult {
            id: u.id.clone(),
            class: u.class,
            score,
            boundary_frames: detected,
            true_boundary_frames: u.boundary_frames.clone(),
            probs,
        });
    }

    Ok(ScoreReport {
        settings: ReportSettings {
            chunk_len: infer.chunk_len,
            overlap_fraction: infer.overlap_fraction,
            top_n: infer.top_n,
            threshold,
            threshold_source,
            tolerance_frames: infer.tolerance_frames,
            checkpoint_hash,
            config_echo,
        },
        utterances: results,
        metrics: CorpusMetrics {
            eer: eer.eer,
            eer_threshold: eer.threshold,
            localization: LocalizationMetrics::from_counts(loc_counts),
            num_genuine: genuine.len(),
            num_fake: fake.len(),
        },
    })
}

/// Writes DET curve points as CSV: `threshold,far,frr`.
pub fn write_det_csv(points: &[(f64, f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("threshold,far,frr\n");
    for (t, far, frr) in points {
        out.push_str(&format!("{t},{far},{frr}\n"));
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}
