//! Log mel filterbank features with first- and second-order deltas.
//!
//! Per frame: pre-emphasis, window, magnitude-squared DFT, triangular mel
//! filterbank on the HTK mel scale, natural log with a floor. All arithmetic
//! is `f64`.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hamming,
    Povey,
}

/// Filterbank configuration. Defaults are conventional speech settings:
/// 25 ms frames at a 10 ms shift, 512-point FFT, 80 HTK-mel filters from
/// 20 Hz to Nyquist, 0.97 pre-emphasis, Hamming window, energy floor 1e-10.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FbankConfig {
    pub frame_len: f64,
    pub frame_shift: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub preemph: f64,
    pub window: WindowKind,
    pub log_floor: f64,
    pub f_min: f64,
    /// Upper band edge; `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            frame_len: 0.025,
            frame_shift: 0.010,
            n_fft: 512,
            n_mels: 80,
            preemph: 0.97,
            window: WindowKind::Hamming,
            log_floor: 1e-10,
            f_min: 20.0,
            f_max: None,
        }
    }
}

impl FbankConfig {
    pub fn frame_len_samples(&self, sample_rate: u32) -> usize {
        (self.frame_len * sample_rate as f64).round() as usize
    }

    pub fn frame_shift_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift * sample_rate as f64).round() as usize
    }

    /// Frame count for a signal of `n` samples:
    /// `T = 1 + floor((n - frame_len) / shift)`.
    pub fn num_frames(&self, n: usize, sample_rate: u32) -> Result<usize> {
        let flen = self.frame_len_samples(sample_rate);
        let shift = self.frame_shift_samples(sample_rate);
        if flen == 0 || shift == 0 {
            return Err(Error::config("frame length and shift must be positive"));
        }
        if n < flen {
            return Err(Error::argument(format!(
                "waveform of {n} samples is shorter than one frame ({flen})"
            )));
        }
        Ok(1 + (n - flen) / shift)
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        let flen = self.frame_len_samples(sample_rate);
        if self.n_fft < flen {
            return Err(Error::config(format!(
                "n_fft {} smaller than frame length {flen}",
                self.n_fft
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be positive"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let f_max = self.f_max.unwrap_or(nyquist);
        if !(0.0..nyquist + 1e-9).contains(&self.f_min) || f_max <= self.f_min || f_max > nyquist + 1e-9 {
            return Err(Error::config(format!(
                "invalid mel band [{}, {f_max}] at rate {sample_rate}",
                self.f_min
            )));
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

/// Triangular filters on the HTK mel scale, evaluated at FFT bin centers.
/// Returns an `n_mels x (n_fft/2 + 1)` weight matrix.
fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let mel_points: Vec<f64> = (0..n_mels + 2)
        .map(|j| mel_lo + (mel_hi - mel_lo) * j as f64 / (n_mels + 1) as f64)
        .collect();

    let mut weights = vec![vec![0.0; n_bins]; n_mels];
    for (m, row) in weights.iter_mut().enumerate() {
        let (left, center, right) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let mel = hz_to_mel(k as f64 * sample_rate as f64 / n_fft as f64);
            if mel > left && mel < right {
                *w = if mel <= center {
                    (mel - left) / (center - left)
                } else {
                    (right - mel) / (right - center)
                };
            }
        }
    }
    weights
}

fn window_coeffs(kind: WindowKind, len: usize) -> Vec<f64> {
    let denom = (len - 1).max(1) as f64;
    (0..len)
        .map(|n| {
            let c = (2.0 * std::f64::consts::PI * n as f64 / denom).cos();
            match kind {
                WindowKind::Hamming => 0.54 - 0.46 * c,
                WindowKind::Povey => (0.5 - 0.5 * c).powf(0.85),
            }
        })
        .collect()
}

/// 80-dimensional log mel filterbank energies, one row per frame.
pub fn fbank80(w: &Waveform, cfg: &FbankConfig) -> Result<Tensor<f64>> {
    cfg.validate(w.sample_rate)?;
    let flen = cfg.frame_len_samples(w.sample_rate);
    let shift = cfg.frame_shift_samples(w.sample_rate);
    let t_frames = cfg.num_frames(w.len(), w.sample_rate)?;
    let n_bins = cfg.n_fft / 2 + 1;
    let f_max = cfg.f_max.unwrap_or(w.sample_rate as f64 / 2.0);

    let window = window_coeffs(cfg.window, flen);
    let mel = mel_filterbank(cfg.n_mels, cfg.n_fft, w.sample_rate, cfg.f_min, f_max);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut frame = vec![0.0f64; flen];
    let mut power = vec![0.0f64; n_bins];

    let mut out = Tensor::<f64>::zeros(&[t_frames, cfg.n_mels]);
    for t in 0..t_frames {
        let start = t * shift;
        for (i, f) in frame.iter_mut().enumerate() {
            *f = f64::from(w.samples[start + i]);
        }
        // Pre-emphasis within the frame; the first sample is emphasized
        // against itself.
        for i in (1..flen).rev() {
            frame[i] -= cfg.preemph * frame[i - 1];
        }
        frame[0] -= cfg.preemph * frame[0];

        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < flen {
                Complex::new(frame[i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }

        let row = out.row_mut(t);
        for (m, weights) in mel.iter().enumerate() {
            let mut energy = 0.0;
            for (w, p) in weights.iter().zip(power.iter()) {
                energy += w * p;
            }
            row[m] = energy.max(cfg.log_floor).ln();
        }
    }
    Ok(out)
}

/// Appends first- and second-order deltas: `[F | d(F) | d(d(F))]`.
///
/// Deltas use the standard regression formula with half-window `W = 2`,
/// `d_t = sum_k k * (F_{t+k} - F_{t-k}) / (2 * sum_k k^2)`, edge frames
/// replicated.
pub fn add_deltas(feats: &Tensor<f64>) -> Tensor<f64> {
    let (t_frames, d) = (feats.rows(), feats.cols());
    let delta = compute_delta(feats);
    let delta2 = compute_delta(&delta);
    let mut out = Tensor::<f64>::zeros(&[t_frames, 3 * d]);
    for t in 0..t_frames {
        let row = out.row_mut(t);
        row[0..d].copy_from_slice(feats.row(t));
        row[d..2 * d].copy_from_slice(delta.row(t));
        row[2 * d..3 * d].copy_from_slice(delta2.row(t));
    }
    out
}

fn compute_delta(feats: &Tensor<f64>) -> Tensor<f64> {
    const W: isize = 2;
    let norm: f64 = 2.0 * (1..=W).map(|k| (k * k) as f64).sum::<f64>();
    let (t_frames, d) = (feats.rows(), feats.cols());
    let clamp = |t: isize| -> usize { t.clamp(0, t_frames as isize - 1) as usize };
    let mut out = Tensor::<f64>::zeros(&[t_frames, d]);
    for t in 0..t_frames as isize {
        let row = out.row_mut(t as usize);
        for k in 1..=W {
            let ahead = feats.row(clamp(t + k));
            let behind = feats.row(clamp(t - k));
            for (j, r) in row.iter_mut().enumerate() {
                *r += k as f64 * (ahead[j] - behind[j]);
            }
        }
        for r in row.iter_mut() {
            *r /= norm;
        }
    }
    out
}

/// The full 240-d feature stream: 80 filterbank energies plus deltas.
pub fn fbank240(w: &Waveform, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    let base = fbank80(w, cfg)?;
    FeatureMatrix::new(add_deltas(&base), cfg.frame_shift, FeatureKind::Fbank240)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, n: usize, rate: u32) -> Waveform {
        let samples: Vec<f32> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect();
        Waveform::new(samples, rate)
    }

    fn noise(n: usize, rate: u32, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), rate)
    }

    #[test]
    fn frame_count_formula() {
        let cfg = FbankConfig::default();
        // Independent oracle: count sliding windows directly.
        let count_windows = |n: usize| {
            let (flen, shift) = (400usize, 160usize);
            let mut t = 0;
            let mut start = 0;
            while start + flen <= n {
                t += 1;
                start += shift;
            }
            t
        };
        for n in [400usize, 401, 20480, 16000, 559, 560] {
            assert_eq!(cfg.num_frames(n, 16000).unwrap(), count_windows(n), "n={n}");
        }
        assert_eq!(cfg.num_frames(20480, 16000).unwrap(), 126);
        assert!(cfg.num_frames(399, 16000).is_err());
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let cfg = FbankConfig::default();
        let w = Waveform::new(vec![0.0; 1600], 16000);
        let f = fbank80(&w, &cfg).unwrap();
        let expect = 1e-10f64.ln();
        assert!(f.data().iter().all(|&v| v == expect));
    }

    #[test]
    fn sine_peaks_at_the_matching_mel_bin() {
        let cfg = FbankConfig::default();
        let w = tone(1000.0, 16000, 16000);
        let f = fbank80(&w, &cfg).unwrap();

        // Expected bin: the filter whose center frequency is nearest 1 kHz.
        let mel_lo = hz_to_mel(20.0);
        let mel_hi = hz_to_mel(8000.0);
        let center_hz = |m: usize| {
            let mel = mel_lo + (mel_hi - mel_lo) * (m + 1) as f64 / 81.0;
            700.0 * (10f64.powf(mel / 2595.0) - 1.0)
        };
        let expect_bin = (0..80)
            .min_by(|&a, &b| {
                (center_hz(a) - 1000.0)
                    .abs()
                    .partial_cmp(&(center_hz(b) - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();

        for t in 0..f.rows() {
            let row = f.row(t);
            let argmax = (0..80)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert!(
                (argmax as isize - expect_bin as isize).abs() <= 1,
                "frame {t}: argmax {argmax}, expected near {expect_bin}"
            );
        }
        // And constant across frames.
        let first = {
            let row = f.row(0);
            (0..80).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap()
        };
        for t in 1..f.rows() {
            let row = f.row(t);
            let argmax = (0..80).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            assert_eq!(argmax, first);
        }
    }

    #[test]
    fn fft_power_matches_naive_dft() {
        // The FFT inside fbank is the one substituted primitive; verify it
        // against a direct O(N^2) DFT on a windowed random frame.
        let n_fft = 512;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame: Vec<f64> = (0..n_fft).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n_fft);
        let mut buf: Vec<Complex<f64>> =
            frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);

        for k in (0..=n_fft / 2).step_by(17) {
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, &v) in frame.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (k * n) as f64 / n_fft as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            let direct = re * re + im * im;
            assert!(
                (buf[k].norm_sqr() - direct).abs() < 1e-9 * direct.max(1.0),
                "bin {k}"
            );
        }
    }

    #[test]
    fn deltas_of_constant_are_zero() {
        let f = Tensor::from_vec(&[5, 3], vec![2.5; 15]).unwrap();
        let out = add_deltas(&f);
        assert_eq!(out.shape(), &[5, 9]);
        for t in 0..5 {
            assert!(out.row(t)[3..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn deltas_of_linear_ramp() {
        let t_frames = 9;
        let data: Vec<f64> = (0..t_frames).flat_map(|t| vec![t as f64; 2]).collect();
        let f = Tensor::from_vec(&[t_frames, 2], data).unwrap();
        let out = add_deltas(&f);
        for t in 2..t_frames - 2 {
            assert!((out.row(t)[2] - 1.0).abs() < 1e-12, "delta at {t}");
        }
        for t in 4..t_frames - 4 {
            assert!(out.row(t)[4].abs() < 1e-12, "delta-delta at {t}");
        }
    }

    #[test]
    fn deltas_match_direct_regression_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (t_frames, d) = (12, 4);
        let data: Vec<f64> = (0..t_frames * d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let f = Tensor::from_vec(&[t_frames, d], data).unwrap();
        let out = add_deltas(&f);

        let get = |t: isize, j: usize| -> f64 {
            let t = t.clamp(0, t_frames as isize - 1) as usize;
            f.row(t)[j]
        };
        for t in 0..t_frames as isize {
            for j in 0..d {
                let expect = (1.0 * (get(t + 1, j) - get(t - 1, j))
                    + 2.0 * (get(t + 2, j) - get(t - 2, j)))
                    / 10.0;
                assert!((out.row(t as usize)[d + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_by_one_frame_shifts_rows() {
        let cfg = FbankConfig::default();
        let w = noise(3200, 16000, 11);
        let f_full = fbank80(&w, &cfg).unwrap();
        let shifted = Waveform::new(w.samples[160..].to_vec(), 16000);
        let f_shift = fbank80(&shifted, &cfg).unwrap();
        assert_eq!(f_shift.rows(), f_full.rows() - 1);
        for t in 0..f_shift.rows() {
            for j in 0..80 {
                let (a, b) = (f_shift.row(t)[j], f_full.row(t + 1)[j]);
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "frame {t} dim {j}");
            }
        }
    }

    #[test]
    fn scaling_waveform_shifts_log_energy() {
        let cfg = FbankConfig::default();
        let w = noise(1600, 16000, 12);
        let f1 = fbank80(&w, &cfg).unwrap();
        let scaled = Waveform::new(w.samples.iter().map(|&s| s * 0.5).collect(), 16000);
        let f2 = fbank80(&scaled, &cfg).unwrap();
        let shift = 2.0 * 0.5f64.ln();
        let floor = 1e-10f64.ln();
        for (a, b) in f1.data().iter().zip(f2.data().iter()) {
            if *a > floor + 1.0 && *b > floor + 1.0 {
                assert!((b - a - shift).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fbank_is_deterministic() {
        let cfg = FbankConfig::default();
        let w = noise(4000, 16000, 13);
        let a = fbank240(&w, &cfg).unwrap();
        let b = fbank240(&w, &cfg).unwrap();
        assert_eq!(a.values.data(), b.values.data());
    }
}
