//! Mono waveform representation and RIFF/WAVE file I/O.
//!
//! Reading accepts PCM 16-bit and IEEE float 32-bit, mono or multichannel
//! (channels are averaged to mono). Writing always produces 16-bit PCM mono.
//! No resampling is performed anywhere in the crate: callers that need a
//! specific rate must reject mismatched inputs.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Default pipeline sample rate in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;

/// A mono audio signal with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Checks the type invariants: finite samples and a positive rate.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::argument("sample rate must be positive"));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::argument(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(())
    }
}

/// Reads a WAV file and converts it to a mono [`Waveform`].
///
/// Multichannel input is averaged across channels. 16-bit samples are scaled
/// by 1/32768; float samples are taken as-is.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let bytes = std::fs::read(path.as_ref())?;
    parse_wav(&bytes)
}

/// Parses WAV bytes. See [`read_wav`].
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(Error::format("WAV file too small for RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::format("missing RIFF header"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::format("missing WAVE marker"));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits

    while pos + 8 <= bytes.len() {
        let chunk_id = &bytes[pos..pos + 4];
        let chunk_size =
            u32::from_le_bytes([bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]])
                as usize;
        let body_start = pos + 8;

        if chunk_id == b"fmt " {
            if body_start + 16 > bytes.len() || chunk_size < 16 {
                return Err(Error::format("fmt chunk truncated"));
            }
            let audio_format = u16::from_le_bytes([bytes[body_start], bytes[body_start + 1]]);
            let channels = u16::from_le_bytes([bytes[body_start + 2], bytes[body_start + 3]]);
            let sample_rate = u32::from_le_bytes([
                bytes[body_start + 4],
                bytes[body_start + 5],
                bytes[body_start + 6],
                bytes[body_start + 7],
            ]);
            let bits = u16::from_le_bytes([bytes[body_start + 14], bytes[body_start + 15]]);
            fmt = Some((audio_format, channels, sample_rate, bits));
        } else if chunk_id == b"data" {
            let (audio_format, channels, sample_rate, bits) =
                fmt.ok_or_else(|| Error::format("data chunk before fmt chunk"))?;
            if channels == 0 {
                return Err(Error::format("zero channels"));
            }
            if sample_rate == 0 {
                return Err(Error::format("zero sample rate"));
            }
            // Tolerate a truncated data chunk: decode the bytes present.
            let body_end = (body_start + chunk_size).min(bytes.len());
            let data = &bytes[body_start..body_end];

            let interleaved: Vec<f32> = match (audio_format, bits) {
                (WAVE_FORMAT_PCM, 16) => data
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect(),
                (WAVE_FORMAT_IEEE_FLOAT, 32) => data
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
                (format, bits) => {
                    return Err(Error::format(format!(
                        "unsupported codec: format {format}, {bits} bits per sample"
                    )))
                }
            };

            let samples = average_to_mono(&interleaved, channels as usize);
            return Ok(Waveform::new(samples, sample_rate));
        }

        pos = body_start + chunk_size;
        // Chunks are padded to even length.
        if chunk_size % 2 == 1 {
            pos += 1;
        }
    }

    Err(Error::format("no data chunk found"))
}

fn average_to_mono(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect()
}

/// Writes a 16-bit PCM mono WAV file, clamping samples to [-1, 1].
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    w.validate()?;
    let bytes = encode_wav(w);
    let mut file = std::fs::File::create(path.as_ref())?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Encodes a waveform as 16-bit PCM mono WAV bytes.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_size = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + w.samples.len() * 2);

    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());

    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &w.samples {
        out.extend_from_slice(&quantize_i16(s).to_le_bytes());
    }
    out
}

/// Symmetric 16-bit quantizer: scale by 32768, round, clamp to i16 range.
/// Keeps the write/read round trip within one quantization step.
fn quantize_i16(x: f32) -> i16 {
    let clamped = x.clamp(-1.0, 1.0);
    let scaled = (f64::from(clamped) * 32768.0).round();
    scaled.clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pcm16_fixture(samples: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let data_size = (samples.len() * 2) as u32;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_size).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_size.to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    #[test]
    fn pcm16_scaling() {
        let bytes = pcm16_fixture(&[0, 16384, -16384], 1, 16000);
        let w = parse_wav(&bytes).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.5, -0.5]);
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn empty_data_chunk() {
        let bytes = pcm16_fixture(&[], 1, 16000);
        let w = parse_wav(&bytes).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn stereo_averages_to_mono() {
        let bytes = pcm16_fixture(&[16384, -16384, 16384, 16384], 2, 8000);
        let w = parse_wav(&bytes).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.5]);
    }

    #[test]
    fn float32_read() {
        let samples = [0.25f32, -0.75];
        let mut out = Vec::new();
        let data_size = (samples.len() * 4) as u32;
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_size).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&3u16.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&44100u32.to_le_bytes());
        out.extend_from_slice(&(44100u32 * 4).to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&32u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_size.to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        let w = parse_wav(&out).unwrap();
        assert_eq!(w.samples, vec![0.25, -0.75]);
    }

    #[test]
    fn unsupported_codec_is_an_error() {
        let mut bytes = pcm16_fixture(&[0], 1, 16000);
        // Flip the format code to something unsupported (ALAW = 6).
        bytes[20] = 6;
        let err = parse_wav(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn truncated_prefixes_never_panic() {
        let bytes = pcm16_fixture(&[100, -100, 3000], 1, 16000);
        for n in 0..bytes.len() {
            let _ = parse_wav(&bytes[..n]);
        }
    }

    #[test]
    fn write_clamps_out_of_range() {
        assert_eq!(quantize_i16(1.5), 32767);
        assert_eq!(quantize_i16(-1.5), -32768);
        assert_eq!(quantize_i16(0.0), 0);
    }

    #[test]
    fn write_single_zero_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.wav");
        write_wav(&Waveform::new(vec![0.0], 16000), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0u8, 0u8]);
        let w = read_wav(&path).unwrap();
        assert_eq!(w.samples, vec![0.0]);
    }

    #[test]
    fn round_trip_within_one_quantization_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dir = tempfile::tempdir().unwrap();
        for case in 0..20 {
            let n = rng.gen_range(1..2000);
            let samples: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
            let w = Waveform::new(samples, 16000);
            let path = dir.path().join(format!("rt{case}.wav"));
            write_wav(&w, &path).unwrap();
            let back = read_wav(&path).unwrap();
            assert_eq!(back.len(), w.len());
            for (a, b) in w.samples.iter().zip(back.samples.iter()) {
                assert!(
                    (a - b).abs() <= 1.0 / 32768.0,
                    "round trip error {} exceeds one LSB",
                    (a - b).abs()
                );
            }
        }
    }

    #[test]
    fn rejects_nonfinite_samples_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new(vec![f32::NAN], 16000);
        assert!(write_wav(&w, dir.path().join("bad.wav")).is_err());
    }
}
