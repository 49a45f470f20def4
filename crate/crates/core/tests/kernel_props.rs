//! Property tests for the logit-space kernel.
//!
//! Values are drawn on a dyadic grid (multiples of 1/8) where noted, so
//! products and sums with the small weights used here are exact in binary
//! floating point and equality claims can be bitwise.

use contrast_core::{
    apc_mask, combine_logits, entropy, greedy_select, jsd, softmax, ContrastParams, LogitVector,
    ProbDist,
};
use proptest::prelude::*;

fn quantized(range: std::ops::Range<i32>) -> impl Strategy<Value = f64> {
    range.prop_map(|x| x as f64 / 8.0)
}

/// Equal-length finite expert/amateur pairs on the dyadic grid.
fn logit_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=24).prop_flat_map(|n| {
        (
            prop::collection::vec(quantized(-800..800), n),
            prop::collection::vec(quantized(-800..800), n),
        )
    })
}

/// Expert with some masked entries (index 0 always stays finite), plus a
/// finite amateur of the same length.
fn masked_logit_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=24)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(quantized(-800..800), n),
                prop::collection::vec(quantized(-800..800), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(mut expert, amateur, masks)| {
            for (i, masked) in masks.into_iter().enumerate() {
                if i > 0 && masked {
                    expert[i] = f64::NEG_INFINITY;
                }
            }
            (expert, amateur)
        })
}

fn prob_dist() -> impl Strategy<Value = ProbDist> {
    prop::collection::vec(0u32..1000, 2..=24).prop_map(|weights| {
        let mut weights: Vec<f64> = weights.into_iter().map(f64::from).collect();
        if weights.iter().sum::<f64>() == 0.0 {
            weights[0] = 1.0;
        }
        let total: f64 = weights.iter().sum();
        ProbDist::new(weights.into_iter().map(|w| w / total).collect()).expect("normalised")
    })
}

fn prob_dist_pairs() -> impl Strategy<Value = (ProbDist, ProbDist)> {
    (2usize..=16).prop_flat_map(|n| {
        let one = move || {
            prop::collection::vec(0u32..1000, n).prop_map(|weights| {
                let mut weights: Vec<f64> = weights.into_iter().map(f64::from).collect();
                if weights.iter().sum::<f64>() == 0.0 {
                    weights[0] = 1.0;
                }
                let total: f64 = weights.iter().sum();
                ProbDist::new(weights.into_iter().map(|w| w / total).collect()).expect("normalised")
            })
        };
        (one(), one())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    /// With unit expert weight and no amateur weight, combining is the
    /// identity on the expert, bit for bit, masks included.
    #[test]
    fn combine_with_alpha_one_beta_zero_is_identity((expert, amateur) in masked_logit_pairs()) {
        let params = ContrastParams { alpha: 1.0, beta: 0.0, ..ContrastParams::default() };
        let expert = LogitVector::new(expert).unwrap();
        let amateur = LogitVector::new(amateur).unwrap();
        let combined = combine_logits(&expert, &amateur, &params).unwrap();
        for (c, e) in combined.values().iter().zip(expert.values()) {
            prop_assert_eq!(c.to_bits(), e.to_bits());
        }
    }

    /// Adding a constant to every amateur logit shifts all combined values
    /// by the same amount, so the greedy choice cannot move.
    #[test]
    fn greedy_choice_ignores_amateur_shift(
        (expert, amateur) in logit_pairs(),
        shift in quantized(-512..512),
    ) {
        let params = ContrastParams::default();
        let expert = LogitVector::new(expert).unwrap();
        let shifted: Vec<f64> = amateur.iter().map(|a| a + shift).collect();
        let amateur = LogitVector::new(amateur).unwrap();
        let shifted = LogitVector::new(shifted).unwrap();

        let base = combine_logits(&expert, &amateur, &params).unwrap();
        let moved = combine_logits(&expert, &shifted, &params).unwrap();
        prop_assert_eq!(greedy_select(&base), greedy_select(&moved));
    }

    /// Combining then softmaxing stays finite and normalised across the
    /// whole supported magnitude range.
    #[test]
    fn softmax_of_combined_is_always_a_distribution(
        n in 2usize..=24,
        seed_e in prop::collection::vec(-1e4f64..1e4, 24),
        seed_a in prop::collection::vec(-1e4f64..1e4, 24),
        alpha in 0.25f64..4.0,
        beta in 0.0f64..4.0,
    ) {
        let params = ContrastParams { alpha, beta, ..ContrastParams::default() };
        let expert = LogitVector::new(seed_e[..n].to_vec()).unwrap();
        let amateur = LogitVector::new(seed_a[..n].to_vec()).unwrap();
        let probs = softmax(&combine_logits(&expert, &amateur, &params).unwrap());
        let mut total = 0.0;
        for &p in probs.probs() {
            prop_assert!(p.is_finite());
            prop_assert!((0.0..=1.0).contains(&p));
            total += p;
        }
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    /// The divergence is symmetric, bounded by ln 2, and zero against
    /// itself.
    #[test]
    fn jsd_is_symmetric_and_bounded((p, q) in prob_dist_pairs()) {
        let forward = jsd(&p, &q).unwrap();
        let backward = jsd(&q, &p).unwrap();
        prop_assert!(forward >= 0.0);
        prop_assert!(forward <= 2f64.ln() + 1e-12);
        prop_assert!((forward - backward).abs() < 1e-12);
        prop_assert!(jsd(&p, &p).unwrap().abs() < 1e-12);
    }

    /// The plausibility mask never removes the expert's own argmax, so a
    /// selectable token always survives.
    #[test]
    fn apc_never_masks_the_expert_argmax(
        (combined, expert) in logit_pairs(),
        gamma in 0.0f64..=1.0,
    ) {
        let combined = LogitVector::new(combined).unwrap();
        let expert_probs = softmax(&LogitVector::new(expert).unwrap());
        let masked = apc_mask(&combined, &expert_probs, gamma).unwrap();

        let (top_token, _) = expert_probs.argmax();
        prop_assert!(masked.get(top_token).unwrap().is_finite());

        // Whatever greedy picks afterwards is plausible under the expert.
        let chosen = greedy_select(&masked);
        let cutoff = gamma * expert_probs.argmax().1;
        prop_assert!(expert_probs.get(chosen).unwrap() >= cutoff);
    }

    /// Entropy never exceeds the uniform bound for the support size.
    #[test]
    fn entropy_is_bounded_by_uniform(p in prob_dist()) {
        let h = entropy(&p);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }
}

/// Uniform distributions hit the `ln V` entropy ceiling exactly, across
/// every vocabulary size the engine meets in practice.
#[test]
fn entropy_of_uniform_is_ln_v() {
    for v in 2..=64 {
        let h = entropy(&ProbDist::uniform(v).unwrap());
        assert!(
            (h - (v as f64).ln()).abs() < 1e-12,
            "uniform over {v}: got {h}, want {}",
            (v as f64).ln()
        );
    }
}

/// Disjoint supports are the farthest two distributions can be.
#[test]
fn jsd_of_disjoint_supports_is_ln_2() {
    let p = ProbDist::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    let q = ProbDist::new(vec![0.0, 0.0, 0.5, 0.5]).unwrap();
    assert!((jsd(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-9);
}
