//! Central-difference gradient verification.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub delta: f64,
    /// Coordinates sampled per parameter tensor (all if the tensor is smaller).
    pub coords_per_param: usize,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            delta: 1e-4,
            coords_per_param: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// `(parameter name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares analytic gradients against central differences on sampled
/// coordinates. `analytic` holds one gradient tensor per parameter in store
/// order; `loss_fn` re-evaluates the loss for perturbed parameters.
///
/// Relative error per coordinate:
/// `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
pub fn finite_difference_check<F>(
    params: &mut ParamStore<f64>,
    analytic: &[Tensor<f64>],
    mut loss_fn: F,
    cfg: &GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    assert_eq!(analytic.len(), params.len(), "one gradient per parameter");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };

    for idx in 0..params.len() {
        let numel = params.entry(idx).value.numel();
        let mut coords: Vec<usize> = (0..numel).collect();
        coords.shuffle(&mut rng);
        coords.truncate(cfg.coords_per_param.min(numel));

        for &c in &coords {
            let original = params.entry(idx).value.data()[c];
            params.entry_mut(idx).value.data_mut()[c] = original + cfg.delta;
            let plus = loss_fn(params);
            params.entry_mut(idx).value.data_mut()[c] = original - cfg.delta;
            let minus = loss_fn(params);
            params.entry_mut(idx).value.data_mut()[c] = original;

            let fd = (plus - minus) / (2.0 * cfg.delta);
            let ad = analytic[idx].data()[c];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((params.entry(idx).name.clone(), c, ad, fd));
            }
        }
    }
    report
}
