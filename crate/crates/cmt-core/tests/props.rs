//! Property tests for the numeric core.

use cmt_core::{Graph, RngStream, Tensor};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in finite_vec(12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[3, 4], vals).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y).data();
        for row in 0..3 {
            let s: f64 = v[row * 4..(row + 1) * 4].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            prop_assert!(v[row * 4..(row + 1) * 4].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(vals in finite_vec(10)) {
        // Skip degenerate rows: normalizing a constant row divides by ~eps.
        let spread = |r: &[f64]| {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / r.len() as f64
        };
        prop_assume!(spread(&vals[..5]) > 1e-3 && spread(&vals[5..]) > 1e-3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[2, 5], vals).unwrap());
        let y = g.layer_norm(x, 1e-12).unwrap();
        let v = g.value(y).data();
        for row in 0..2 {
            let r = &v[row * 5..(row + 1) * 5];
            let mean = r.iter().sum::<f64>() / 5.0;
            prop_assert!(mean.abs() < 1e-8, "mean {mean}");
            prop_assert!((spread(r) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_cross_entropy_matches_ln_k(k in 2usize..=256) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, k]));
        let y = g.cross_entropy(x, &[k / 2]).unwrap();
        prop_assert!((g.value(y).item() - (k as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn cosine_similarity_is_bounded(a in finite_vec(6), b in finite_vec(6)) {
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>();
        prop_assume!(na > 1e-6 && nb > 1e-6);
        let mut g = Graph::new();
        let ta = g.constant(Tensor::from_vec(&[6], a).unwrap());
        let tb = g.constant(Tensor::from_vec(&[6], b).unwrap());
        let y = g.cosine_sim(ta, tb).unwrap();
        let c = g.value(y).item();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c), "cos {c}");
    }

    #[test]
    fn rng_uniform_stays_in_unit_interval(seed in any::<u64>(), stream in any::<u64>()) {
        let mut rng = RngStream::new(seed, stream);
        for _ in 0..64 {
            let u = rng.uniform();
            prop_assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn rng_below_is_in_range(seed in any::<u64>(), n in 1u64..10_000) {
        let mut rng = RngStream::new(seed, 9);
        for _ in 0..32 {
            prop_assert!(rng.below(n) < n);
        }
    }

    #[test]
    fn shuffle_is_a_permutation(seed in any::<u64>(), len in 0usize..40) {
        let mut items: Vec<usize> = (0..len).collect();
        let mut rng = RngStream::new(seed, 3);
        rng.shuffle(&mut items);
        let mut sorted = items.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), stream in any::<u64>()) {
        let mut a = RngStream::new(seed, stream);
        let mut b = RngStream::new(seed, stream);
        for _ in 0..16 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
