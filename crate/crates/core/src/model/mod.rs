//! The boundary detector: ResNet-1D frame embeddings, optional
//! feature-embedding concatenation, Transformer encoder, BiLSTM, and a
//! per-frame sigmoid head.

mod forward;

pub use forward::{build_classifier, build_detector, build_fuse, build_resnet, DetectorForward};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nn::{Checkpoint, Graph, ParamStore, Tensor};

/// Architecture hyperparameters. The paper-scale presets mirror the published
/// network; `toy` shrinks every width for desk-scale experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Input feature dimension (240 for Fbank, 768 for imported embeddings).
    pub feature_dim: usize,
    /// ResNet-1D channel width.
    pub channels: usize,
    /// Number of residual blocks.
    pub res_blocks: usize,
    /// Frame embedding width (also the encoder model dimension).
    pub emb_dim: usize,
    /// Concatenate the acoustic features with the frame embeddings before
    /// the classifier (projected back to `emb_dim`).
    pub concat_features: bool,
    pub enc_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub lstm_hidden: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::paper_fbank()
    }
}

impl DetectorConfig {
    /// Published configuration for the 240-d Fbank front end (the paper's
    /// Fbank scheme excludes the concatenation path).
    pub fn paper_fbank() -> Self {
        DetectorConfig {
            feature_dim: 240,
            channels: 512,
            res_blocks: 12,
            emb_dim: 128,
            concat_features: false,
            enc_layers: 2,
            heads: 4,
            ffn_dim: 1024,
            lstm_hidden: 128,
        }
    }

    /// Published configuration for imported 768-d embeddings.
    pub fn paper_wav2vec() -> Self {
        DetectorConfig {
            feature_dim: 768,
            concat_features: true,
            ..DetectorConfig::paper_fbank()
        }
    }

    /// Desk-scale detector: 2 residual blocks, 16 channels, 16-d embeddings,
    /// 1 encoder layer, LSTM hidden 8.
    pub fn toy(feature_dim: usize) -> Self {
        DetectorConfig {
            feature_dim,
            channels: 16,
            res_blocks: 2,
            emb_dim: 16,
            concat_features: false,
            enc_layers: 1,
            heads: 4,
            ffn_dim: 32,
            lstm_hidden: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.channels == 0
            || self.emb_dim == 0
            || self.ffn_dim == 0
            || self.lstm_hidden == 0
            || self.heads == 0
        {
            return Err(Error::config("detector dimensions must be positive"));
        }
        if self.emb_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "emb_dim {} not divisible by {} heads",
                self.emb_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Analytic parameter count; a pure function of the configuration.
    pub fn param_count(&self) -> usize {
        let d = self.feature_dim;
        let c = self.channels;
        let e = self.emb_dim;
        let h = self.lstm_hidden;
        let mut n = c * d * 5; // entry conv, no bias
        n += self.res_blocks * 2 * c * c; // K=1 convs, no bias
        n += e * c + e; // exit conv with bias
        if self.concat_features {
            n += e * (d + e) + e;
        }
        let per_layer = 4 * (e * e + e)      // attention projections
            + 2 * e                           // ln1
            + self.ffn_dim * e + self.ffn_dim // ffn in
            + e * self.ffn_dim + e            // ffn out
            + 2 * e; // ln2
        n += self.enc_layers * per_layer;
        n += 2 * (4 * h * e + 4 * h * h + 8 * h); // both LSTM directions
        n += 2 * h + 1; // head
        n
    }
}

/// Fresh parameters, deterministically initialized from a seed.
///
/// Convolution and affine weights use uniform fan-in scaling
/// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), biases start at zero, LSTM
/// weights use `U(-1/sqrt(H), 1/sqrt(H))` with the forget-gate bias at +1,
/// and layer-norm gains at 1.
pub fn init_params(cfg: &DetectorConfig, seed: u64) -> Result<ParamStore<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let (d, c, e, h) = (cfg.feature_dim, cfg.channels, cfg.emb_dim, cfg.lstm_hidden);

    let kaiming = |rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize| -> Tensor<f32> {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::from_vec(shape, data).expect("shape/data agree")
    };

    p.add("resnet.entry.weight", kaiming(&mut rng, &[c, d, 5], d * 5))?;
    for b in 0..cfg.res_blocks {
        p.add(
            format!("resnet.block{b}.conv1.weight"),
            kaiming(&mut rng, &[c, c, 1], c),
        )?;
        p.add(
            format!("resnet.block{b}.conv2.weight"),
            kaiming(&mut rng, &[c, c, 1], c),
        )?;
    }
    p.add("resnet.exit.weight", kaiming(&mut rng, &[e, c, 1], c))?;
    p.add("resnet.exit.bias", Tensor::zeros(&[e]))?;

    if cfg.concat_features {
        p.add("fuse.proj.weight", kaiming(&mut rng, &[e, d + e], d + e))?;
        p.add("fuse.proj.bias", Tensor::zeros(&[e]))?;
    }

    for l in 0..cfg.enc_layers {
        for name in ["q", "k", "v", "out"] {
            p.add(
                format!("encoder.layer{l}.attn.{name}.weight"),
                kaiming(&mut rng, &[e, e], e),
            )?;
            p.add(format!("encoder.layer{l}.attn.{name}.bias"), Tensor::zeros(&[e]))?;
        }
        p.add(
            format!("encoder.layer{l}.ln1.gain"),
            Tensor::from_vec(&[e], vec![1.0; e])?,
        )?;
        p.add(format!("encoder.layer{l}.ln1.bias"), Tensor::zeros(&[e]))?;
        p.add(
            format!("encoder.layer{l}.ffn.w1.weight"),
            kaiming(&mut rng, &[cfg.ffn_dim, e], e),
        )?;
        p.add(format!("encoder.layer{l}.ffn.w1.bias"), Tensor::zeros(&[cfg.ffn_dim]))?;
        p.add(
            format!("encoder.layer{l}.ffn.w2.weight"),
            kaiming(&mut rng, &[e, cfg.ffn_dim], cfg.ffn_dim),
        )?;
        p.add(format!("encoder.layer{l}.ffn.w2.bias"), Tensor::zeros(&[e]))?;
        p.add(
            format!("encoder.layer{l}.ln2.gain"),
            Tensor::from_vec(&[e], vec![1.0; e])?,
        )?;
        p.add(format!("encoder.layer{l}.ln2.bias"), Tensor::zeros(&[e]))?;
    }

    let lstm_uniform = |rng: &mut ChaCha8Rng, shape: &[usize]| -> Tensor<f32> {
        let bound = (1.0 / h as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor::from_vec(shape, data).expect("shape/data agree")
    };
    for dir in ["fwd", "bwd"] {
        p.add(format!("bilstm.{dir}.w_ih"), lstm_uniform(&mut rng, &[4 * h, e]))?;
        p.add(format!("bilstm.{dir}.w_hh"), lstm_uniform(&mut rng, &[4 * h, h]))?;
        let mut b_ih = Tensor::zeros(&[4 * h]);
        for j in h..2 * h {
            b_ih.data_mut()[j] = 1.0; // forget-gate bias
        }
        p.add(format!("bilstm.{dir}.b_ih"), b_ih)?;
        p.add(format!("bilstm.{dir}.b_hh"), Tensor::zeros(&[4 * h]))?;
    }

    p.add("head.weight", kaiming(&mut rng, &[1, 2 * h], 2 * h))?;
    p.add("head.bias", Tensor::zeros(&[1]))?;
    Ok(p)
}

/// Element-wise mean of several parameter sets (the checkpoint-averaging
/// mechanism). Accumulates in `f64`.
pub fn average_checkpoints(stores: &[&ParamStore<f32>]) -> Result<ParamStore<f32>> {
    let first = *stores
        .first()
        .ok_or_else(|| Error::argument("average_checkpoints: no checkpoints"))?;
    for s in stores.iter().skip(1) {
        if !first.manifest_matches(s) {
            return Err(Error::argument(
                "average_checkpoints: parameter manifests differ",
            ));
        }
    }
    let mut out = ParamStore::new();
    let k = stores.len() as f64;
    for idx in 0..first.len() {
        let name = first.entry(idx).name.clone();
        let shape = first.entry(idx).value.shape().to_vec();
        let n = first.entry(idx).value.numel();
        let mut acc = vec![0.0f64; n];
        for s in stores {
            for (a, v) in acc.iter_mut().zip(s.entry(idx).value.data()) {
                *a += f64::from(*v);
            }
        }
        let data: Vec<f32> = acc.into_iter().map(|a| (a / k) as f32).collect();
        out.add(name, Tensor::from_vec(&shape, data)?)?;
    }
    Ok(out)
}

/// Probability of a splice boundary for every frame of a feature matrix.
pub fn detector_probs(
    params: &ParamStore<f32>,
    cfg: &DetectorConfig,
    features: &FeatureMatrix,
) -> Result<Vec<f32>> {
    if features.dim() != cfg.feature_dim {
        return Err(Error::shape(format!(
            "feature dim {} does not match detector input {}",
            features.dim(),
            cfg.feature_dim
        )));
    }
    let x = features.values.cast::<f32>();
    let mut g = Graph::<f32>::new();
    let fwd = build_detector(&mut g, params, cfg, &x)?;
    Ok(g.value(fwd.probs).data().to_vec())
}

/// Saves parameters with the configuration embedded in the header.
pub fn save_detector(
    path: impl AsRef<std::path::Path>,
    params: &ParamStore<f32>,
    cfg: &DetectorConfig,
) -> Result<()> {
    let mut ckpt = Checkpoint::new(params.clone());
    ckpt.meta = serde_json::json!({ "detector_config": cfg });
    crate::nn::save_checkpoint(path, &ckpt)
}

/// Loads parameters plus the configuration stored alongside them.
pub fn load_detector(path: impl AsRef<std::path::Path>) -> Result<(ParamStore<f32>, DetectorConfig)> {
    let ckpt = crate::nn::load_checkpoint(path)?;
    let cfg = detector_config_from_meta(&ckpt.meta)?;
    Ok((ckpt.params, cfg))
}

/// Extracts a detector configuration from checkpoint metadata.
pub fn detector_config_from_meta(meta: &serde_json::Value) -> Result<DetectorConfig> {
    let cfg = meta
        .get("detector_config")
        .ok_or_else(|| Error::format("checkpoint metadata lacks detector_config"))?;
    Ok(serde_json::from_value(cfg.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_analytic_formula() {
        for cfg in [
            DetectorConfig::paper_fbank(),
            DetectorConfig::paper_wav2vec(),
            DetectorConfig::toy(240),
            DetectorConfig {
                concat_features: true,
                ..DetectorConfig::toy(12)
            },
        ] {
            let params = init_params(&cfg, 1).unwrap();
            assert_eq!(params.num_scalars(), cfg.param_count(), "{cfg:?}");
        }
    }

    #[test]
    fn paper_scale_parameter_counts_are_pinned() {
        // Documented counts for the published architecture; regression guard.
        assert_eq!(DetectorConfig::paper_fbank().param_count(), 7_895_681);
        assert_eq!(DetectorConfig::paper_wav2vec().param_count(), 9_362_177);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = DetectorConfig::toy(240);
        let a = init_params(&cfg, 5).unwrap();
        let b = init_params(&cfg, 5).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.value.data(), y.value.data());
        }
        let c = init_params(&cfg, 6).unwrap();
        assert_ne!(
            a.entry(0).value.data(),
            c.entry(0).value.data(),
            "different seeds must differ"
        );
    }

    #[test]
    fn heads_must_divide_embedding() {
        let cfg = DetectorConfig {
            emb_dim: 18,
            heads: 4,
            ..DetectorConfig::toy(240)
        };
        assert!(matches!(init_params(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn averaging_one_checkpoint_is_identity() {
        let cfg = DetectorConfig::toy(12);
        let p = init_params(&cfg, 3).unwrap();
        let avg = average_checkpoints(&[&p]).unwrap();
        for (a, b) in p.iter().zip(avg.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn averaging_opposite_checkpoints_is_zero() {
        let cfg = DetectorConfig::toy(12);
        let p = init_params(&cfg, 4).unwrap();
        let mut neg = p.clone();
        for e in neg.iter_mut() {
            for v in e.value.data_mut() {
                *v = -*v;
            }
        }
        let avg = average_checkpoints(&[&p, &neg]).unwrap();
        for e in avg.iter() {
            assert!(e.value.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn averaging_five_matches_f64_mean_oracle() {
        let cfg = DetectorConfig::toy(12);
        let stores: Vec<ParamStore<f32>> =
            (0..5).map(|s| init_params(&cfg, 100 + s).unwrap()).collect();
        let refs: Vec<&ParamStore<f32>> = stores.iter().collect();
        let avg = average_checkpoints(&refs).unwrap();
        for idx in 0..avg.len() {
            for j in 0..avg.entry(idx).value.numel() {
                let mean: f64 = stores
                    .iter()
                    .map(|s| f64::from(s.entry(idx).value.data()[j]))
                    .sum::<f64>()
                    / 5.0;
                let got = f64::from(avg.entry(idx).value.data()[j]);
                assert!((got - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn averaging_rejects_mismatched_manifests() {
        let a = init_params(&DetectorConfig::toy(12), 1).unwrap();
        let b = init_params(&DetectorConfig::toy(16), 1).unwrap();
        assert!(average_checkpoints(&[&a, &b]).is_err());
    }

    #[test]
    fn checkpoint_meta_round_trips_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.ckpt");
        let cfg = DetectorConfig::toy(240);
        let params = init_params(&cfg, 9).unwrap();
        save_detector(&path, &params, &cfg).unwrap();
        let (loaded, loaded_cfg) = load_detector(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        for (a, b) in params.iter().zip(loaded.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }
}
