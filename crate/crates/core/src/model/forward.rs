//! Graph builders for the detector forward pass. Each stage is exposed
//! separately so tests can probe intermediate contracts.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::DetectorConfig;
use crate::nn::{Graph, LstmVars, ParamStore, Scalar, Tensor, Var};

/// Handles produced by [`build_detector`].
pub struct DetectorForward {
    /// Pre-sigmoid logits, `T x 1` (the training path feeds these to the
    /// stable loss).
    pub logits: Var,
    /// Per-frame boundary probabilities, `T x 1`.
    pub probs: Var,
    /// One graph leaf per parameter, in store order; gradients are read back
    /// through these after `backward`.
    pub param_vars: Vec<Var>,
}

/// Parameters bound into a graph, addressable by name.
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn bind<S: Scalar>(g: &mut Graph<S>, params: &ParamStore<S>) -> Self {
        let mut vars = Vec::with_capacity(params.len());
        let mut index = HashMap::new();
        for (i, p) in params.iter().enumerate() {
            vars.push(g.param(p.value.clone()));
            index.insert(p.name.clone(), i);
        }
        BoundParams { vars, index }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::internal(format!("missing parameter: {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// ResNet-1D: entry conv (K=5, pad 2) -> res blocks (two K=1 convs, identity
/// residual, ReLU) -> exit conv to the embedding width. Length-preserving.
pub fn build_resnet<S: Scalar>(
    g: &mut Graph<S>,
    bp: &BoundParams,
    cfg: &DetectorConfig,
    x: Var,
) -> Result<Var> {
    let entry = bp.var("resnet.entry.weight")?;
    let mut h = g.conv1d(x, entry, None, 2, 1)?;
    for b in 0..cfg.res_blocks {
        let w1 = bp.var(&format!("resnet.block{b}.conv1.weight"))?;
        let w2 = bp.var(&format!("resnet.block{b}.conv2.weight"))?;
        let c1 = g.conv1d(h, w1, None, 0, 1)?;
        let a1 = g.relu(c1);
        let c2 = g.conv1d(a1, w2, None, 0, 1)?;
        let sum = g.add(h, c2)?;
        h = g.relu(sum);
    }
    let exit_w = bp.var("resnet.exit.weight")?;
    let exit_b = bp.var("resnet.exit.bias")?;
    g.conv1d(h, exit_w, Some(exit_b), 0, 1)
}

/// Optional concatenation of acoustic features with frame embeddings,
/// projected back to the embedding width. With concatenation disabled the
/// embeddings pass through untouched.
pub fn build_fuse<S: Scalar>(
    g: &mut Graph<S>,
    bp: &BoundParams,
    cfg: &DetectorConfig,
    x: Var,
    s: Var,
) -> Result<Var> {
    if !cfg.concat_features {
        return Ok(s);
    }
    if g.value(x).rows() != g.value(s).rows() {
        return Err(Error::shape("fuse: feature and embedding frame counts differ"));
    }
    let cat = g.concat_cols(&[x, s])?;
    let w = bp.var("fuse.proj.weight")?;
    let b = bp.var("fuse.proj.bias")?;
    g.affine(cat, w, Some(b))
}

/// Sinusoidal absolute positional encodings, added once before the first
/// encoder layer.
fn positional_encoding<S: Scalar>(t_len: usize, d: usize) -> Tensor<S> {
    let mut pe = Tensor::<S>::zeros(&[t_len, d]);
    for t in 0..t_len {
        let row = pe.row_mut(t);
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / d as f64);
            row[i] = S::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

/// Frame-level classifier: positional encodings, post-norm Transformer
/// encoder layers, BiLSTM, ReLU, and the final affine to one logit per frame.
pub fn build_classifier<S: Scalar>(
    g: &mut Graph<S>,
    bp: &BoundParams,
    cfg: &DetectorConfig,
    z: Var,
) -> Result<Var> {
    let t_len = g.value(z).rows();
    let pe = g.input(positional_encoding::<S>(t_len, cfg.emb_dim));
    let mut h = g.add(z, pe)?;

    for l in 0..cfg.enc_layers {
        let name = |part: &str| format!("encoder.layer{l}.{part}");
        let attn = g.multi_head_self_attention(
            h,
            bp.var(&name("attn.q.weight"))?,
            bp.var(&name("attn.q.bias"))?,
            bp.var(&name("attn.k.weight"))?,
            bp.var(&name("attn.k.bias"))?,
            bp.var(&name("attn.v.weight"))?,
            bp.var(&name("attn.v.bias"))?,
            bp.var(&name("attn.out.weight"))?,
            bp.var(&name("attn.out.bias"))?,
            cfg.heads,
        )?;
        let res1 = g.add(h, attn)?;
        let n1 = g.layer_norm(res1, bp.var(&name("ln1.gain"))?, bp.var(&name("ln1.bias"))?)?;

        let f1 = g.affine(n1, bp.var(&name("ffn.w1.weight"))?, Some(bp.var(&name("ffn.w1.bias"))?))?;
        let f1r = g.relu(f1);
        let f2 = g.affine(f1r, bp.var(&name("ffn.w2.weight"))?, Some(bp.var(&name("ffn.w2.bias"))?))?;
        let res2 = g.add(n1, f2)?;
        h = g.layer_norm(res2, bp.var(&name("ln2.gain"))?, bp.var(&name("ln2.bias"))?)?;
    }

    let fwd = LstmVars {
        w_ih: bp.var("bilstm.fwd.w_ih")?,
        w_hh: bp.var("bilstm.fwd.w_hh")?,
        b_ih: bp.var("bilstm.fwd.b_ih")?,
        b_hh: bp.var("bilstm.fwd.b_hh")?,
    };
    let bwd = LstmVars {
        w_ih: bp.var("bilstm.bwd.w_ih")?,
        w_hh: bp.var("bilstm.bwd.w_hh")?,
        b_ih: bp.var("bilstm.bwd.b_ih")?,
        b_hh: bp.var("bilstm.bwd.b_hh")?,
    };
    let lstm_out = g.bilstm(h, fwd, bwd)?;
    let activated = g.relu(lstm_out);
    g.affine(activated, bp.var("head.weight")?, Some(bp.var("head.bias")?))
}

/// Full forward pass over a `T x feature_dim` input.
pub fn build_detector<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore<S>,
    cfg: &DetectorConfig,
    features: &Tensor<S>,
) -> Result<DetectorForward> {
    cfg.validate()?;
    if features.shape().len() != 2 || features.cols() != cfg.feature_dim {
        return Err(Error::shape(format!(
            "detector input {:?}, expected T x {}",
            features.shape(),
            cfg.feature_dim
        )));
    }
    if features.rows() == 0 {
        return Err(Error::shape("detector input has no frames"));
    }
    let bp = BoundParams::bind(g, params);
    let x = g.input(features.clone());
    let s = build_resnet(g, &bp, cfg, x)?;
    let z = build_fuse(g, &bp, cfg, x, s)?;
    let logits = build_classifier(g, &bp, cfg, z)?;
    let probs = g.sigmoid(logits);
    Ok(DetectorForward {
        logits,
        probs,
        param_vars: bp.vars.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[t, d], data).unwrap()
    }

    #[test]
    fn output_shapes_hold_for_any_length() {
        let cfg = DetectorConfig::toy(24);
        let params = init_params(&cfg, 1).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in [1usize, 2, 7, 40] {
            let feats = rand_features(&mut rng, t, 24);
            let mut g = Graph::<f64>::new();
            let fwd = build_detector(&mut g, &params, &cfg, &feats).unwrap();
            assert_eq!(g.value(fwd.probs).shape(), &[t, 1], "T = {t}");
            assert!(g
                .value(fwd.probs)
                .data()
                .iter()
                .all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn resnet_embedding_shape_and_zero_network() {
        let cfg = DetectorConfig::toy(24);
        let params = init_params(&cfg, 1).unwrap();
        let mut zeroed = params.clone();
        for e in zeroed.iter_mut() {
            for v in e.value.data_mut() {
                *v = 0.0;
            }
        }
        let zeroed = zeroed.cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats = rand_features(&mut rng, 9, 24);
        let mut g = Graph::<f64>::new();
        let bp = BoundParams::bind(&mut g, &zeroed);
        let x = g.input(feats);
        let s = build_resnet(&mut g, &bp, &cfg, x).unwrap();
        assert_eq!(g.value(s).shape(), &[9, cfg.emb_dim]);
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_passthrough_without_concat() {
        let cfg = DetectorConfig::toy(24);
        let params = init_params(&cfg, 4).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feats = rand_features(&mut rng, 6, 24);
        let mut g = Graph::<f64>::new();
        let bp = BoundParams::bind(&mut g, &params);
        let x = g.input(feats);
        let s = build_resnet(&mut g, &bp, &cfg, x).unwrap();
        let z = build_fuse(&mut g, &bp, &cfg, x, s).unwrap();
        assert_eq!(g.value(z).data(), g.value(s).data());
    }

    #[test]
    fn fuse_with_identity_projection_recovers_embeddings() {
        let cfg = DetectorConfig {
            concat_features: true,
            ..DetectorConfig::toy(24)
        };
        let mut params = init_params(&cfg, 6).unwrap();
        // Projection = [0 | I]: picks out the embedding block exactly.
        {
            let e = cfg.emb_dim;
            let d = cfg.feature_dim;
            let proj = params.get("fuse.proj.weight").unwrap().value.shape().to_vec();
            assert_eq!(proj, vec![e, d + e]);
            let idx = params
                .iter()
                .position(|p| p.name == "fuse.proj.weight")
                .unwrap();
            let w = &mut params.entry_mut(idx).value;
            for v in w.data_mut() {
                *v = 0.0;
            }
            for r in 0..e {
                w.data_mut()[r * (d + e) + d + r] = 1.0;
            }
        }
        let params = params.cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let feats = rand_features(&mut rng, 5, 24);
        let mut g = Graph::<f64>::new();
        let bp = BoundParams::bind(&mut g, &params);
        let x = g.input(feats);
        let s = build_resnet(&mut g, &bp, &cfg, x).unwrap();
        let z = build_fuse(&mut g, &bp, &cfg, x, s).unwrap();
        let diff = g
            .value(z)
            .data()
            .iter()
            .zip(g.value(s).data().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn concat_projection_width_is_feature_plus_embedding() {
        let cfg = DetectorConfig {
            concat_features: true,
            feature_dim: 240,
            ..DetectorConfig::paper_fbank()
        };
        let params = init_params(&cfg, 8).unwrap();
        assert_eq!(
            params.get("fuse.proj.weight").unwrap().value.shape(),
            &[128, 368]
        );
    }

    #[test]
    fn logits_plus_sigmoid_equals_probability_path() {
        let cfg = DetectorConfig::toy(24);
        let params = init_params(&cfg, 9).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let feats = rand_features(&mut rng, 8, 24);
        let mut g = Graph::<f64>::new();
        let fwd = build_detector(&mut g, &params, &cfg, &feats).unwrap();
        for (z, p) in g
            .value(fwd.logits)
            .data()
            .iter()
            .zip(g.value(fwd.probs).data().iter())
        {
            let manual = 1.0 / (1.0 + (-z).exp());
            assert!((manual - p).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = DetectorConfig::toy(24);
        let params = init_params(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let feats = rand_features(&mut rng, 10, 24).cast::<f32>();
        let run = || {
            let mut g = Graph::<f32>::new();
            let fwd = build_detector(&mut g, &params, &cfg, &feats).unwrap();
            g.value(fwd.probs).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn save_load_forward_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = DetectorConfig::toy(24);
        let params = init_params(&cfg, 13).unwrap();
        crate::model::save_detector(&path, &params, &cfg).unwrap();
        let (loaded, loaded_cfg) = crate::model::load_detector(&path).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let feats = rand_features(&mut rng, 12, 24).cast::<f32>();
        let run = |p: &ParamStore<f32>, c: &DetectorConfig| {
            let mut g = Graph::<f32>::new();
            let fwd = build_detector(&mut g, p, c, &feats).unwrap();
            g.value(fwd.probs).data().to_vec()
        };
        assert_eq!(run(&params, &cfg), run(&loaded, &loaded_cfg));
    }

    #[test]
    fn toy_scale_gradient_check() {
        // Small dims keep this fast; the acceptance suite runs the full
        // toy-scale configuration.
        let cfg = DetectorConfig {
            feature_dim: 6,
            channels: 5,
            res_blocks: 1,
            emb_dim: 8,
            concat_features: true,
            enc_layers: 1,
            heads: 2,
            ffn_dim: 9,
            lstm_hidden: 3,
        };
        let mut params = init_params(&cfg, 15).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let t = 5;
        let feats = rand_features(&mut rng, t, 6);
        let targets = Tensor::from_vec(
            &[t, 1],
            (0..t).map(|i| f64::from(u8::from(i % 3 == 0))).collect(),
        )
        .unwrap();

        let loss_of = |p: &ParamStore<f64>| -> f64 {
            let mut g = Graph::<f64>::new();
            let fwd = build_detector(&mut g, p, &cfg, &feats).unwrap();
            let loss = g.bce_with_logits(fwd.logits, &targets).unwrap();
            g.value(loss).item()
        };

        let mut g = Graph::<f64>::new();
        let fwd = build_detector(&mut g, &params, &cfg, &feats).unwrap();
        let loss = g.bce_with_logits(fwd.logits, &targets).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic: Vec<Tensor<f64>> = fwd
            .param_vars
            .iter()
            .map(|&v| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
            })
            .collect();

        let report = crate::nn::finite_difference_check(
            &mut params,
            &analytic,
            loss_of,
            &crate::nn::GradCheckConfig {
                delta: 1e-5,
                coords_per_param: 4,
                seed: 17,
            },
        );
        assert!(
            report.max_rel_err < 1e-4,
            "gradient check failed: {:?} (err {})",
            report.worst,
            report.max_rel_err
        );
    }
}
