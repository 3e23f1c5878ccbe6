//! Randomized property tests for the data plumbing and defense primitives.

use proptest::prelude::*;

use fedpass::data::{reassemble, vertical_split};
use fedpass::defenses::sparsify;
use fedpass::metrics::{cap, label_error};
use fedpass::tensor::Tensor;

fn tensor_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

proptest! {
    /// Splitting vertically and concatenating the shards is lossless, and
    /// shard widths never differ by more than one column.
    #[test]
    fn vertical_split_roundtrip(
        rows in 1usize..6,
        cols in 1usize..12,
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= cols);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let t = Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| rand::Rng::random::<f64>(&mut rng)).collect(),
        ).unwrap();

        let shards = vertical_split(&t, k).unwrap();
        prop_assert_eq!(shards.len(), k);
        let widths: Vec<usize> = shards.iter().map(|s| s.shape()[1]).collect();
        let (min, max) = (*widths.iter().min().unwrap(), *widths.iter().max().unwrap());
        prop_assert!(max - min <= 1);
        prop_assert!(widths.windows(2).all(|w| w[0] >= w[1]));

        let back = reassemble(&shards).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.max_abs_diff(&t) == 0.0);
    }

    /// Sparsification is idempotent, never increases any magnitude, and every
    /// surviving entry dominates every zeroed entry.
    #[test]
    fn sparsify_properties(t in tensor_strategy(4, 9), ratio in 0.05f64..1.0) {
        let once = sparsify(&t, ratio);
        let twice = sparsify(&once, ratio);
        prop_assert!(once.max_abs_diff(&twice) == 0.0);

        let kept_min = once
            .data()
            .iter()
            .filter(|v| **v != 0.0)
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        for (orig, kept) in t.data().iter().zip(once.data()) {
            if *kept == 0.0 && *orig != 0.0 {
                prop_assert!(orig.abs() <= kept_min);
            } else {
                prop_assert_eq!(orig, kept);
            }
        }
    }

    /// The cumulative attack-performance area is invariant under reordering of
    /// the input points and scales linearly with the y values.
    #[test]
    fn cap_permutation_and_scale(
        points in prop::collection::vec((0.01f64..1.0, 0.0f64..1.0), 1..8),
        scale in 0.1f64..3.0,
        perm_seed in any::<u64>(),
    ) {
        let base = cap(&points).unwrap();

        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = points.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha20Rng::seed_from_u64(perm_seed));
        let permuted = cap(&shuffled).unwrap();
        prop_assert!((base - permuted).abs() < 1e-12);

        let scaled: Vec<(f64, f64)> = points.iter().map(|&(w, y)| (w, y * scale)).collect();
        prop_assert!((cap(&scaled).unwrap() - base * scale).abs() < 1e-9);
    }

    /// Label error is a metric on label sequences: zero iff equal, symmetric,
    /// and always within [0, 1].
    #[test]
    fn label_error_metric(
        a in prop::collection::vec(0usize..5, 1..30),
        b_seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(b_seed);
        let b: Vec<usize> = a.iter().map(|_| rng.random_range(0usize..5)).collect();

        prop_assert_eq!(label_error(&a, &a).unwrap(), 0.0);
        let ab = label_error(&a, &b).unwrap();
        let ba = label_error(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        if ab == 0.0 {
            prop_assert_eq!(&a, &b);
        }
    }
}
