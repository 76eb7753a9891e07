//! Toy corpus generator.
//!
//! Each utterance is a sequence of "words" separated by low-level noise
//! gaps. The timbre (harmonic profile or noise band) is fixed per utterance,
//! so a word spliced in from another utterance carries a detectable timbre
//! mismatch while genuine word onsets stay smooth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::corpus::{AnnotatedUtterance, AudioSource, UtteranceClass, UtteranceRecord, WordSegment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyFamily {
    /// Harmonic tones with a per-utterance fundamental and overtone profile.
    Tone,
    /// Band-filtered noise with a per-utterance center frequency.
    FilteredNoise,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCorpusConfig {
    pub num_utterances: usize,
    /// Inclusive range of words per utterance.
    pub words_per_utterance: (usize, usize),
    /// Word duration range in seconds.
    pub word_dur: (f64, f64),
    /// Gap duration range in seconds.
    pub gap_dur: (f64, f64),
    pub sample_rate: u32,
    pub family: ToyFamily,
    pub class: UtteranceClass,
    pub id_prefix: String,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            num_utterances: 10,
            words_per_utterance: (3, 6),
            word_dur: (0.12, 0.28),
            gap_dur: (0.04, 0.12),
            sample_rate: 16_000,
            family: ToyFamily::Tone,
            class: UtteranceClass::Genuine,
            id_prefix: "utt".to_string(),
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_utterances == 0 {
            return Err(Error::config("num_utterances must be >= 1"));
        }
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be positive"));
        }
        let (wmin, wmax) = self.words_per_utterance;
        if wmin == 0 || wmin > wmax {
            return Err(Error::config(format!(
                "degenerate words_per_utterance range ({wmin}, {wmax})"
            )));
        }
        for (name, (lo, hi)) in [("word_dur", self.word_dur), ("gap_dur", self.gap_dur)] {
            if lo <= 0.0 || lo > hi {
                return Err(Error::config(format!("degenerate {name} range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

/// Stable per-utterance seed: FNV-1a over the id, mixed with the master seed.
pub fn derive_utterance_seed(master: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalize over the combination
    let mut z = h ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GAP_NOISE_LEVEL: f32 = 0.004;

/// Generates `num_utterances` toy utterances with exact word segments.
/// Deterministic for a fixed seed.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig, seed: u64) -> Result<Vec<AnnotatedUtterance>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.num_utterances);
    for i in 0..cfg.num_utterances {
        let id = format!("{}-{i:05}", cfg.id_prefix);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_utterance_seed(seed, &id));
        let (samples, segments) = synth_utterance(cfg, &mut rng);
        let record = UtteranceRecord {
            id,
            audio: AudioSource::Memory(Waveform::new(samples, cfg.sample_rate)),
            segments,
            class: cfg.class,
        };
        out.push(AnnotatedUtterance::unannotated(record));
    }
    Ok(out)
}

struct Timbre {
    family: ToyFamily,
    f0: f64,
    harmonic_amps: Vec<f64>,
    noise_fc: f64,
    noise_q: f64,
}

fn synth_utterance(cfg: &ToyCorpusConfig, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<WordSegment>) {
    let rate = cfg.sample_rate as f64;
    let num_words = rng.gen_range(cfg.words_per_utterance.0..=cfg.words_per_utterance.1);

    let timbre = Timbre {
        family: cfg.family,
        f0: rng.gen_range(90.0..280.0),
        harmonic_amps: {
            let raw: Vec<f64> = (0..5)
                .map(|k| rng.gen_range(0.2..1.0) / (k + 1) as f64)
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|a| a / total).collect()
        },
        noise_fc: rng.gen_range(500.0..3500.0),
        noise_q: rng.gen_range(3.0..8.0),
    };

    let mut samples: Vec<f32> = Vec::new();
    let mut segments = Vec::with_capacity(num_words);
    push_gap(&mut samples, cfg, rng);
    for w in 0..num_words {
        let dur = rng.gen_range(cfg.word_dur.0..=cfg.word_dur.1);
        let len = (dur * rate).round().max(1.0) as usize;
        let amp = rng.gen_range(0.45..0.75);
        let start = samples.len();
        synth_word(&mut samples, &timbre, len, amp, rate, rng);
        segments.push(WordSegment::new(start, samples.len()));
        if w + 1 < num_words {
            push_gap(&mut samples, cfg, rng);
        }
    }
    push_gap(&mut samples, cfg, rng);
    (samples, segments)
}

fn push_gap(samples: &mut Vec<f32>, cfg: &ToyCorpusConfig, rng: &mut ChaCha8Rng) {
    let dur = rng.gen_range(cfg.gap_dur.0..=cfg.gap_dur.1);
    let len = (dur * cfg.sample_rate as f64).round().max(1.0) as usize;
    for _ in 0..len {
        samples.push(rng.gen_range(-1.0f32..1.0) * GAP_NOISE_LEVEL);
    }
}

fn synth_word(
    out: &mut Vec<f32>,
    timbre: &Timbre,
    len: usize,
    amp: f64,
    rate: f64,
    rng: &mut ChaCha8Rng,
) {
    let ramp = ((0.005 * rate) as usize).min(len / 4).max(1);
    let envelope = |i: usize| -> f64 {
        let attack = (i as f64 / ramp as f64).min(1.0);
        let release = ((len - 1 - i) as f64 / ramp as f64).min(1.0);
        attack.min(release)
    };

    match timbre.family {
        ToyFamily::Tone => {
            for i in 0..len {
                let t = i as f64 / rate;
                let mut v = 0.0;
                for (k, a) in timbre.harmonic_amps.iter().enumerate() {
                    v += a * (2.0 * std::f64::consts::PI * timbre.f0 * (k + 1) as f64 * t).sin();
                }
                out.push((v * amp * envelope(i)) as f32);
            }
        }
        ToyFamily::FilteredNoise => {
            let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let filtered = bandpass(&raw, timbre.noise_fc, timbre.noise_q, rate);
            let peak = filtered.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
            for (i, v) in filtered.iter().enumerate() {
                out.push((v / peak * amp * envelope(i)) as f32);
            }
        }
    }
}

/// RBJ biquad bandpass (constant 0 dB peak gain).
fn bandpass(x: &[f64], fc: f64, q: f64, rate: f64) -> Vec<f64> {
    let w0 = 2.0 * std::f64::consts::PI * fc / rate;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b1, b2) = (alpha / a0, 0.0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);

    let mut y = vec![0.0; x.len()];
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for (i, &xi) in x.iter().enumerate() {
        let yi = b0 * xi + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        y[i] = yi;
        x2 = x1;
        x1 = xi;
        y2 = y1;
        y1 = yi;
    }
    y
}
