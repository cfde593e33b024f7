//! Parameter-randomization checks for explanation methods.
//!
//! A trustworthy explainer must depend on the model's learned weights:
//! destroy the weights and the explanation should change. The suite
//! re-explains the same target on weight-randomized copies of the model and
//! scores how similar the maps stay, via Spearman rank correlation and a
//! structural similarity index. High similarity after randomization is a red
//! flag for the explainer, not the model.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::detector::{ExplanationTarget, RandomizableModel};
use crate::error::Error;
use crate::gcame::{explain, GcameConfig, SaliencyMap};
use crate::grid::Grid2;
use crate::image::ImageInput;
use crate::metrics::{pairwise_iou, Method};

/// Minimum IoU for re-finding the target on a randomized model.
pub const REDETECT_IOU: f64 = 0.5;

/// How much of the layer chain a plan reinitializes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomizationMode {
    /// Every layer from the output end down to the selected layer.
    Cascading,
    /// Only the selected (deepest listed) layer.
    Independent,
}

/// One randomization experiment: a chain of layer ids ordered from the
/// output end of the network down to the selected layer, and the normal
/// reinitialization to apply.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationPlan {
    pub mode: RandomizationMode,
    /// Ordered output-end-first; the last entry is the selected layer. An
    /// empty chain is the no-op control.
    pub layer_ids: Vec<String>,
    /// Standard deviation of the zero-mean normal reinitialization.
    pub init_std: f32,
    pub seed: u64,
}

impl RandomizationPlan {
    /// Control plan touching no layers.
    pub fn no_op(seed: u64) -> Self {
        RandomizationPlan {
            mode: RandomizationMode::Cascading,
            layer_ids: Vec::new(),
            init_std: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.init_std > 0.0) {
            return Err(Error::Configuration(
                "randomization std must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Layer ids this plan actually reinitializes.
    pub fn layers_to_randomize(&self) -> &[String] {
        match self.mode {
            RandomizationMode::Cascading => &self.layer_ids,
            RandomizationMode::Independent => {
                let n = self.layer_ids.len();
                &self.layer_ids[n.saturating_sub(1)..]
            }
        }
    }
}

/// Returns a weight-randomized copy; the source model is never touched.
pub fn randomize<M: RandomizableModel>(model: &M, plan: &RandomizationPlan) -> Result<M, Error> {
    plan.validate()?;
    let mut copy = model.clone();
    let ids = plan.layers_to_randomize();
    if !ids.is_empty() {
        copy.randomize_layers(ids, plan.init_std, plan.seed)?;
    }
    Ok(copy)
}

// ---------------------------------------------------------------------------
// Map similarity
// ---------------------------------------------------------------------------

/// Two complementary views of map similarity: rank agreement of the pixel
/// ordering, and windowed structural similarity of the patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub spearman: f64,
    pub ssim: f64,
}

/// Both similarity scores; bit-identical maps short-circuit to exactly 1.
pub fn similarity(a: &Grid2, b: &Grid2) -> Similarity {
    if a.h() == b.h() && a.w() == b.w() && a.data() == b.data() {
        return Similarity {
            spearman: 1.0,
            ssim: 1.0,
        };
    }
    Similarity {
        spearman: spearman(a.data(), b.data()),
        ssim: ssim(a, b),
    }
}

fn average_ranks(values: &[f32]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based ranks; ties share the mean rank of their run.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// input is constant (the ordering carries no information) or lengths
/// differ.
pub fn spearman(a: &[f32], b: &[f32]) -> f64 {
    if a.len() != b.len() || a.is_empty() {
        return 0.0;
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0f64;
    let mut var_a = 0.0f64;
    let mut var_b = 0.0f64;
    for (x, y) in ra.iter().zip(&rb) {
        let dx = x - mean;
        let dy = y - mean;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return 0.0;
    }
    cov / libm::sqrt(var_a * var_b)
}

/// Mean structural similarity over Gaussian-weighted local windows
/// (11x11, sigma 1.5, standard stabilizers for a unit value range). Falls
/// back to a single global window for maps smaller than the window.
pub fn ssim(a: &Grid2, b: &Grid2) -> f64 {
    if a.h() != b.h() || a.w() != b.w() || a.data().is_empty() {
        return 0.0;
    }
    let (h, w) = (a.h(), a.w());
    let mut win = 11usize.min(h).min(w);
    if win % 2 == 0 {
        win -= 1;
    }
    let taps = gaussian_window(win, 1.5);
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for top in 0..=(h - win) {
        for left in 0..=(w - win) {
            let mut mu_a = 0.0f64;
            let mut mu_b = 0.0f64;
            let mut aa = 0.0f64;
            let mut bb = 0.0f64;
            let mut ab = 0.0f64;
            for wr in 0..win {
                for wc in 0..win {
                    let t = taps[wr * win + wc];
                    let va = f64::from(a.get(top + wr, left + wc));
                    let vb = f64::from(b.get(top + wr, left + wc));
                    mu_a += t * va;
                    mu_b += t * vb;
                    aa += t * va * va;
                    bb += t * vb * vb;
                    // Grouped so the value is bit-identical under argument
                    // swap, keeping the measure exactly symmetric.
                    ab += t * (va * vb);
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

fn gaussian_window(win: usize, sigma: f64) -> Vec<f64> {
    let half = (win / 2) as f64;
    let mut taps = vec![0.0f64; win * win];
    let mut sum = 0.0f64;
    for r in 0..win {
        for c in 0..win {
            let dr = r as f64 - half;
            let dc = c as f64 - half;
            let v = libm::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
            taps[r * win + c] = v;
            sum += v;
        }
    }
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

/// Result of re-explaining the target on one randomized model.
#[derive(Debug, Clone)]
pub struct SanityOutcome {
    pub plan: RandomizationPlan,
    pub saliency: SaliencyMap,
    pub similarity: Similarity,
    /// The randomized model no longer detected anything overlapping the
    /// target; similarity is 0 by convention and the map is all zero.
    pub no_detection: bool,
    /// The randomized model detected the target but its gradients carried no
    /// signal, so no explanation could be formed.
    pub empty_explanation: bool,
}

/// Explains the target on the original model, then on a randomized copy per
/// plan, and scores each randomized map against the baseline.
///
/// The target is re-found on each randomized model as the detection with
/// best IoU at or above [`REDETECT_IOU`] (any class); the explanation keeps
/// the original target class. Plans whose model loses the target are
/// reported with zero similarity rather than failing the suite.
pub fn sanity_suite<M: RandomizableModel>(
    model: &M,
    image: &ImageInput,
    target: &ExplanationTarget,
    plans: &[RandomizationPlan],
    config: &GcameConfig,
) -> Result<Vec<SanityOutcome>, Error> {
    let baseline = explain(model, image, target, config)?;
    let mut outcomes = Vec::with_capacity(plans.len());
    for plan in plans {
        let randomized = randomize(model, plan)?;
        let zero_map = || SaliencyMap {
            values: Grid2::zeros(image.h(), image.w()),
            target: target.clone(),
            method: Method::Gcame,
            constant: true,
        };
        let detections = randomized.detect(image, config.objectness_threshold)?;
        let mut best: Option<(f64, usize)> = None;
        for (i, d) in detections.iter().enumerate() {
            let iou = pairwise_iou(&target.detection.bbox, &d.bbox);
            if iou >= REDETECT_IOU && best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, i));
            }
        }
        let Some((_, idx)) = best else {
            outcomes.push(SanityOutcome {
                plan: plan.clone(),
                saliency: zero_map(),
                similarity: Similarity {
                    spearman: 0.0,
                    ssim: 0.0,
                },
                no_detection: true,
                empty_explanation: false,
            });
            continue;
        };
        let matched = ExplanationTarget {
            detection: detections[idx].clone(),
            score_kind: target.score_kind,
            target_class: target.target_class,
        };
        match explain(&randomized, image, &matched, config) {
            Ok(map) => {
                let sim = similarity(&baseline.values, &map.values);
                outcomes.push(SanityOutcome {
                    plan: plan.clone(),
                    saliency: map,
                    similarity: sim,
                    no_detection: false,
                    empty_explanation: false,
                });
            }
            Err(e) if matches!(e.root(), Error::EmptyExplanation) => {
                outcomes.push(SanityOutcome {
                    plan: plan.clone(),
                    saliency: zero_map(),
                    similarity: Similarity {
                        spearman: 0.0,
                        ssim: 0.0,
                    },
                    no_detection: false,
                    empty_explanation: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn spearman_on_monotone_pairs_is_exactly_one() {
        let a = [0.1f32, 0.5, 0.2, 0.9, 0.3];
        let b = [1.0f32, 5.0, 2.0, 9.0, 3.0];
        assert_eq!(spearman(&a, &b), 1.0);
    }

    #[test]
    fn spearman_on_reversed_order_is_minus_one() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [4.0f32, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &b) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_matches_hand_computed_case() {
        // Ranks differ by [-1, 1, -1, 1, 0]: rho = 1 - 6*4 / (5*24) = 0.8.
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0f32, 1.0, 4.0, 3.0, 5.0];
        assert!((spearman(&a, &b) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_averages_tied_ranks() {
        // Tied pair shares rank 1.5; Pearson of ranks is 1.5/sqrt(1.5*2).
        let a = [1.0f32, 1.0, 2.0];
        let b = [1.0f32, 2.0, 3.0];
        let expected = 1.5 / libm::sqrt(3.0);
        assert!((spearman(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn spearman_of_constant_input_is_zero() {
        let a = [0.5f32, 0.5, 0.5];
        let b = [1.0f32, 2.0, 3.0];
        assert_eq!(spearman(&a, &b), 0.0);
    }

    fn ramp_map() -> Grid2 {
        let mut g = Grid2::zeros(16, 16);
        for r in 0..16 {
            for c in 0..16 {
                g.set(r, c, (r * 16 + c) as f32 / 256.0);
            }
        }
        g
    }

    #[test]
    fn identical_maps_have_similarity_exactly_one() {
        let a = ramp_map();
        let sim = similarity(&a, &a.clone());
        assert_eq!(sim.spearman, 1.0);
        assert_eq!(sim.ssim, 1.0);
    }

    #[test]
    fn similarity_is_symmetric() {
        let a = ramp_map();
        let mut b = ramp_map();
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = (*v + (i % 7) as f32 * 0.01).min(1.0);
        }
        let ab = similarity(&a, &b);
        let ba = similarity(&b, &a);
        assert_eq!(ab.spearman, ba.spearman);
        assert_eq!(ab.ssim, ba.ssim);
    }

    #[test]
    fn ssim_drops_for_unrelated_patterns() {
        let a = ramp_map();
        let mut b = Grid2::zeros(16, 16);
        for r in 0..16 {
            for c in 0..16 {
                // Checkerboard: structurally unlike the smooth ramp.
                b.set(r, c, ((r + c) % 2) as f32);
            }
        }
        assert!(ssim(&a, &b) < 0.5);
        assert!(spearman(a.data(), b.data()).abs() < 0.5);
    }

    #[test]
    fn no_op_plan_randomizes_nothing() {
        let plan = RandomizationPlan::no_op(1);
        assert!(plan.layers_to_randomize().is_empty());
        assert!(plan.validate().is_ok());
    }

    #[test]
    fn independent_mode_selects_only_the_deepest_layer() {
        let plan = RandomizationPlan {
            mode: RandomizationMode::Independent,
            layer_ids: vec!["head".into(), "mid".into(), "stem".into()],
            init_std: 0.1,
            seed: 0,
        };
        assert_eq!(plan.layers_to_randomize(), &["stem".to_string()]);
        let cascading = RandomizationPlan {
            mode: RandomizationMode::Cascading,
            ..plan
        };
        assert_eq!(cascading.layers_to_randomize().len(), 3);
    }

    #[test]
    fn plans_reject_non_positive_std() {
        let mut plan = RandomizationPlan::no_op(0);
        plan.init_std = 0.0;
        assert!(plan.validate().is_err());
    }
}
