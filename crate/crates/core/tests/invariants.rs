//! Structural properties that must hold for every input, checked over
//! randomised cases.

use cbpf::coupled::hole_profile;
use cbpf::coupling::{max_couple_categorical, normalized_weights, CategoricalDist};
use cbpf::fk::{torus_distance, Path};
use cbpf::score::Transform;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn torus_distance_is_a_metric(x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0) {
        let dxy = torus_distance(x, y);
        prop_assert!((0.0..=0.5).contains(&dxy));
        prop_assert!((dxy - torus_distance(y, x)).abs() < 1e-12);
        prop_assert!(torus_distance(x, x) < 1e-12);
        prop_assert!(dxy <= torus_distance(x, z) + torus_distance(z, y) + 1e-9);
    }

    #[test]
    fn torus_distance_is_shift_invariant(x in 0.0f64..1.0, y in 0.0f64..1.0, s in -3.0f64..3.0) {
        let d = torus_distance(x, y);
        let shifted = torus_distance(x + s, y + s);
        prop_assert!((d - shifted).abs() < 1e-9, "d = {d}, shifted = {shifted}");
    }

    #[test]
    fn transforms_invert_each_other(raw in -15.0f64..15.0) {
        for tf in [Transform::Identity, Transform::Log, Transform::LogitSigned] {
            let c = tf.to_constrained(raw);
            let back = tf.to_raw(c).unwrap();
            prop_assert!((back - raw).abs() < 1e-8 * raw.abs().max(1.0), "{tf:?}: {raw} -> {c} -> {back}");
        }
    }

    #[test]
    fn normalised_weights_form_a_simplex(lw in prop::collection::vec(-30.0f64..30.0, 1..20)) {
        let w = normalized_weights(&lw).unwrap();
        prop_assert_eq!(w.len(), lw.len());
        prop_assert!(w.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalised_weights_ignore_a_common_shift(
        lw in prop::collection::vec(-5.0f64..5.0, 1..10),
        shift in -200.0f64..200.0,
    ) {
        let w = normalized_weights(&lw).unwrap();
        let shifted: Vec<f64> = lw.iter().map(|v| v + shift).collect();
        let ws = normalized_weights(&shifted).unwrap();
        for (a, b) in w.iter().zip(&ws) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn categorical_samples_stay_in_the_support(
        probs in prop::collection::vec(0.0f64..1.0, 2..12),
        seed in any::<u64>(),
    ) {
        prop_assume!(probs.iter().sum::<f64>() > 1e-3);
        let dist = CategoricalDist::from_probs(probs.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..64 {
            let i = dist.sample(&mut rng);
            prop_assert!(i < probs.len());
            prop_assert!(probs[i] > 0.0, "index {i} has zero probability");
        }
    }

    #[test]
    fn coupled_categorical_draws_are_valid_and_sticky(
        lw in prop::collection::vec(-3.0f64..3.0, 2..8),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, j) = max_couple_categorical(&lw, &lw, &mut rng).unwrap();
        prop_assert_eq!(i, j, "identical inputs must always meet");
        prop_assert!(i < lw.len());
    }

    #[test]
    fn hole_profile_agrees_with_brute_force(
        a in prop::collection::vec(0u8..2, 1..12),
        flips in prop::collection::vec(any::<bool>(), 1..12),
    ) {
        let b: Vec<u8> = a
            .iter()
            .zip(flips.iter().chain(std::iter::repeat(&false)))
            .map(|(&v, &f)| if f { 1 - v } else { v })
            .collect();
        let pa = Path(a.clone());
        let pb = Path(b.clone());
        let profile = hole_profile(&pa, &pb).unwrap();

        let expected_holes: Vec<usize> = (0..a.len()).filter(|&t| a[t] != b[t]).collect();
        prop_assert_eq!(&profile.holes, &expected_holes);

        if expected_holes.is_empty() {
            prop_assert!(profile.distances.is_none());
            prop_assert!(profile.level_sets.is_empty());
        } else {
            let distances = profile.distances.as_ref().unwrap();
            prop_assert_eq!(distances.len(), a.len());
            for t in 0..a.len() {
                let nearest = expected_holes
                    .iter()
                    .map(|&h| h.abs_diff(t))
                    .min()
                    .unwrap();
                prop_assert_eq!(distances[t], nearest, "time {}", t);
            }
            let mut seen: Vec<usize> = profile.level_sets.values().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..a.len()).collect::<Vec<_>>());
            prop_assert_eq!(profile.level_sets.get(&0), Some(&expected_holes));
        }
    }
}
