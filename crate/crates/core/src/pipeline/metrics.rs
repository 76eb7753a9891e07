//! Equal error rate and boundary localization metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// EER under the convention "higher score = more likely fake":
/// `FAR(t)` is the fraction of genuine utterances with score above `t`,
/// `FRR(t)` the fraction of fake utterances with score at or below `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

/// Sweeps the union of scores as thresholds and linearly interpolates the
/// FAR/FRR crossing.
pub fn compute_eer(genuine: &[f64], fake: &[f64]) -> Result<EerResult> {
    if genuine.is_empty() || fake.is_empty() {
        return Err(Error::argument("compute_eer: both score lists must be non-empty"));
    }
    let mut thresholds: Vec<f64> = genuine.iter().chain(fake.iter()).copied().collect();
    if thresholds.iter().any(|t| !t.is_finite()) {
        return Err(Error::argument("compute_eer: non-finite score"));
    }
    thresholds.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    thresholds.dedup();

    let mut g_sorted = genuine.to_vec();
    let mut f_sorted = fake.to_vec();
    g_sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    f_sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));

    // Walk candidate thresholds in ascending order, tracking the operating
    // point; FAR decreases and FRR increases, so FAR - FRR is non-increasing.
    let mut prev = OperatingPoint {
        threshold: thresholds[0], // placeholder; virtual point before any t
        far: 1.0,
        frr: 0.0,
    };
    let mut prev_virtual = true;
    for &t in &thresholds {
        let cur = operating_point(&g_sorted, &f_sorted, t);
        let d_cur = cur.far - cur.frr;
        if d_cur <= 0.0 {
            let d_prev = prev.far - prev.frr;
            let alpha = if (d_prev - d_cur).abs() < f64::EPSILON {
                1.0
            } else {
                d_prev / (d_prev - d_cur)
            };
            let eer = prev.far + alpha * (cur.far - prev.far);
            let threshold = if prev_virtual {
                cur.threshold
            } else {
                prev.threshold + alpha * (cur.threshold - prev.threshold)
            };
            return Ok(EerResult { eer, threshold });
        }
        prev = cur;
        prev_virtual = false;
    }
    // FAR(max score) = 0 and FRR(max score) >= 1/|fake| > 0, so the crossing
    // always exists.
    Err(Error::internal("compute_eer: no FAR/FRR crossing found"))
}

#[derive(Clone, Copy)]
struct OperatingPoint {
    threshold: f64,
    far: f64,
    frr: f64,
}

fn operating_point(g_sorted: &[f64], f_sorted: &[f64], t: f64) -> OperatingPoint {
    let above = |xs: &[f64]| xs.len() - xs.partition_point(|&x| x <= t);
    let far = above(g_sorted) as f64 / g_sorted.len() as f64;
    let frr = (f_sorted.len() - above(f_sorted)) as f64 / f_sorted.len() as f64;
    OperatingPoint {
        threshold: t,
        far,
        frr,
    }
}

/// (threshold, FAR, FRR) points over the union of scores, for DET/ROC plots.
pub fn det_points(genuine: &[f64], fake: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    if genuine.is_empty() || fake.is_empty() {
        return Err(Error::argument("det_points: both score lists must be non-empty"));
    }
    let mut thresholds: Vec<f64> = genuine.iter().chain(fake.iter()).copied().collect();
    thresholds.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    thresholds.dedup();
    let mut g_sorted = genuine.to_vec();
    let mut f_sorted = fake.to_vec();
    g_sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    f_sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(thresholds
        .iter()
        .map(|&t| {
            let p = operating_point(&g_sorted, &f_sorted, t);
            (t, p.far, p.frr)
        })
        .collect())
}

/// Match counts from greedy nearest-first one-to-one assignment within the
/// tolerance. Greedy can under-match contrived tie layouts; see the tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocalizationCounts {
    pub matched: usize,
    pub predicted: usize,
    pub truth: usize,
}

impl LocalizationCounts {
    pub fn accumulate(&mut self, other: LocalizationCounts) {
        self.matched += other.matched;
        self.predicted += other.predicted;
        self.truth += other.truth;
    }
}

pub fn match_boundaries(predicted: &[usize], truth: &[usize], tolerance: usize) -> LocalizationCounts {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new(); // (dist, pred idx, truth idx)
    for (pi, &p) in predicted.iter().enumerate() {
        for (ti, &t) in truth.iter().enumerate() {
            let dist = p.abs_diff(t);
            if dist <= tolerance {
                pairs.push((dist, pi, ti));
            }
        }
    }
    pairs.sort_unstable();
    let mut pred_used = vec![false; predicted.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matched = 0;
    for (_, pi, ti) in pairs {
        if !pred_used[pi] && !truth_used[ti] {
            pred_used[pi] = true;
            truth_used[ti] = true;
            matched += 1;
        }
    }
    LocalizationCounts {
        matched,
        predicted: predicted.len(),
        truth: truth.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LocalizationMetrics {
    /// Precision is 0 when there are predictions to miss and none match;
    /// with no predictions and no truth both metrics are vacuously 1.
    pub fn from_counts(c: LocalizationCounts) -> Self {
        let precision = if c.predicted == 0 {
            if c.truth == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            c.matched as f64 / c.predicted as f64
        };
        let recall = if c.truth == 0 {
            1.0
        } else {
            c.matched as f64 / c.truth as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        LocalizationMetrics {
            precision,
            recall,
            f1,
        }
    }
}

/// Greedy one-to-one localization metrics for a single utterance.
pub fn localization_metrics(
    predicted: &[usize],
    truth: &[usize],
    tolerance: usize,
) -> LocalizationMetrics {
    LocalizationMetrics::from_counts(match_boundaries(predicted, truth, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force exhaustive sweep with the same interpolation rule,
    /// recomputing FAR/FRR by direct counting at every candidate.
    fn eer_oracle(genuine: &[f64], fake: &[f64]) -> f64 {
        let mut thresholds: Vec<f64> = genuine.iter().chain(fake.iter()).copied().collect();
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        thresholds.dedup();
        let far_at = |t: f64| genuine.iter().filter(|&&s| s > t).count() as f64 / genuine.len() as f64;
        let frr_at = |t: f64| fake.iter().filter(|&&s| s <= t).count() as f64 / fake.len() as f64;
        let (mut pf, mut pr) = (1.0f64, 0.0f64);
        for &t in &thresholds {
            let (cf, cr) = (far_at(t), frr_at(t));
            let (dp, dc) = (pf - pr, cf - cr);
            if dc <= 0.0 {
                let alpha = if (dp - dc).abs() < f64::EPSILON { 1.0 } else { dp / (dp - dc) };
                return pf + alpha * (cf - pf);
            }
            pf = cf;
            pr = cr;
        }
        unreachable!("crossing always exists")
    }

    #[test]
    fn perfect_separation_is_zero() {
        let r = compute_eer(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
        assert_eq!(r.eer, 0.0);
        assert!((0.2..=0.8).contains(&r.threshold));
    }

    #[test]
    fn identical_scores_are_chance() {
        let r = compute_eer(&[0.5, 0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!((r.eer - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_lists_are_errors() {
        assert!(compute_eer(&[], &[0.5]).is_err());
        assert!(compute_eer(&[0.5], &[]).is_err());
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let g: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..1.0)).collect();
            let f: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..1.0) * 0.7 + 0.3).collect();
            let fast = compute_eer(&g, &f).unwrap().eer;
            let slow = eer_oracle(&g, &f);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn eer_symmetric_under_class_swap_and_score_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let g: Vec<f64> = (0..97).map(|_| rng.gen_range(0.0..1.0)).collect();
            let f: Vec<f64> = (0..83).map(|_| rng.gen_range(0.2..1.0)).collect();
            let a = compute_eer(&g, &f).unwrap().eer;
            let g2: Vec<f64> = f.iter().map(|s| 1.0 - s).collect();
            let f2: Vec<f64> = g.iter().map(|s| 1.0 - s).collect();
            let b = compute_eer(&g2, &f2).unwrap().eer;
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn eer_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
        let f: Vec<f64> = (0..150).map(|_| rng.gen_range(0.3..1.0)).collect();
        let base = compute_eer(&g, &f).unwrap().eer;
        let warp = |s: f64| (3.0 * s).exp() + 0.1 * s;
        let gw: Vec<f64> = g.iter().map(|&s| warp(s)).collect();
        let fw: Vec<f64> = f.iter().map(|&s| warp(s)).collect();
        let warped = compute_eer(&gw, &fw).unwrap().eer;
        assert!((base - warped).abs() < 1e-9);
    }

    #[test]
    fn det_points_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let f: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let pts = det_points(&g, &f).unwrap();
        for w in pts.windows(2) {
            assert!(w[0].1 >= w[1].1, "FAR non-increasing");
            assert!(w[0].2 <= w[1].2, "FRR non-decreasing");
        }
    }

    #[test]
    fn exact_match_is_perfect() {
        let m = localization_metrics(&[10, 20, 30], &[10, 20, 30], 5);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions_with_truth() {
        let m = localization_metrics(&[], &[10], 5);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn vacuous_case_is_perfect() {
        let m = localization_metrics(&[], &[], 5);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn tolerance_window_matching() {
        let m = localization_metrics(&[12, 40], &[10, 100], 5);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 0.5);
    }

    /// Optimal assignment size by brute force over subsets (n <= 10).
    fn optimal_matching(pred: &[usize], truth: &[usize], tol: usize) -> usize {
        fn rec(pi: usize, pred: &[usize], truth: &[usize], used: &mut Vec<bool>, tol: usize) -> usize {
            if pi == pred.len() {
                return 0;
            }
            // Either leave pred[pi] unmatched...
            let mut best = rec(pi + 1, pred, truth, used, tol);
            // ...or match it to any compatible unused truth.
            for ti in 0..truth.len() {
                if !used[ti] && pred[pi].abs_diff(truth[ti]) <= tol {
                    used[ti] = true;
                    best = best.max(1 + rec(pi + 1, pred, truth, used, tol));
                    used[ti] = false;
                }
            }
            best
        }
        let mut used = vec![false; truth.len()];
        rec(0, pred, truth, &mut used, tol)
    }

    #[test]
    fn greedy_matches_optimal_on_dispersed_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let np = rng.gen_range(0..8);
            let nt = rng.gen_range(0..8);
            let pred: Vec<usize> = (0..np).map(|_| rng.gen_range(0..500)).collect();
            let truth: Vec<usize> = (0..nt).map(|_| rng.gen_range(0..500)).collect();
            let tol = 5;
            let greedy = match_boundaries(&pred, &truth, tol).matched;
            let optimal = optimal_matching(&pred, &truth, tol);
            assert!(greedy <= optimal);
            assert_eq!(greedy, optimal, "pred {pred:?} truth {truth:?}");
        }
    }

    #[test]
    fn greedy_limitation_is_known_and_bounded() {
        // Documented greedy shortfall: nearest-first pairs (4, 5) and leaves
        // 6 unmatched with truth 0 out of reach, while the optimal
        // assignment (4-0, 6-5) matches both.
        let pred = [4usize, 6];
        let truth = [0usize, 5];
        let greedy = match_boundaries(&pred, &truth, 5).matched;
        let optimal = optimal_matching(&pred, &truth, 5);
        assert_eq!(greedy, 1);
        assert_eq!(optimal, 2);
    }
}
