use proptest::prelude::*;
use reptrain::highlight::{pearson, two_means_values};

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 2..120)
}

proptest! {
    #[test]
    fn two_means_is_scale_invariant(v in values(), scale in 0.01f64..50.0) {
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let (a, lo, hi) = two_means_values(&v);
        let (b, slo, shi) = two_means_values(&scaled);
        // centroids scale with the data; membership only flips on near-ties
        if (hi - lo).abs() > 1e-6 {
            prop_assert_eq!(a, b);
            prop_assert!((slo - lo * scale).abs() <= 1e-6 * scale.max(1.0) * lo.abs().max(1.0));
            prop_assert!((shi - hi * scale).abs() <= 1e-6 * scale.max(1.0) * hi.abs().max(1.0));
        }
    }

    #[test]
    fn two_means_high_cluster_sits_above_low(v in values()) {
        let (mask, lo, hi) = two_means_values(&v);
        prop_assert!(lo <= hi);
        let max_low = v.iter().zip(&mask).filter(|(_, &m)| !m).map(|(&x, _)| x).fold(f64::NEG_INFINITY, f64::max);
        let min_high = v.iter().zip(&mask).filter(|(_, &m)| m).map(|(&x, _)| x).fold(f64::INFINITY, f64::min);
        prop_assert!(max_low < min_high);
    }

    #[test]
    fn pearson_is_bounded_and_symmetric(a in prop::collection::vec(-10.0f32..10.0, 3..50), seed in any::<u64>()) {
        let b: Vec<f32> = a.iter().enumerate().map(|(i, x)| x * 0.5 + ((seed.wrapping_mul(i as u64 + 1) % 7) as f32)).collect();
        let r = pearson(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - pearson(&b, &a)).abs() < 1e-12);
        let shifted: Vec<f32> = a.iter().map(|x| 3.0 * x + 2.0).collect();
        if pearson(&a, &a) != 0.0 {
            prop_assert!((pearson(&a, &shifted) - 1.0).abs() < 1e-6);
        }
    }
}
