use cookie_monster_core::aggregation::{query_rng, sample_laplace};
use cookie_monster_core::metrics::rmsre_parts;
use cookie_monster_core::*;
use proptest::prelude::*;

#[test]
fn analytic_rmsre_matches_monte_carlo() {
    use rand_core::RngCore;
    let mut pick = query_rng(99, 1);
    let mut unit = move || (pick.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    for t in 0..20 {
        let q = 10.0 + 990.0 * unit();
        let biased = q * (0.7 + 0.3 * unit());
        let sigma = q * 0.2 * unit();
        let analytic = rmsre_parts(&[q], &[biased], sigma).unwrap();
        let mut rng = query_rng(5, t);
        let n = 100_000;
        let b = sigma / std::f64::consts::SQRT_2;
        let mse: f64 = (0..n).map(|_| ((biased + sample_laplace(&mut rng, b) - q) / q).powi(2)).sum::<f64>() / n as f64;
        let mc = mse.sqrt();
        assert!(((mc - analytic) / analytic).abs() < 0.05, "case {t}: {mc} vs {analytic}");
    }
}

fn bound(e: f64) -> ErrorBound {
    ErrorBound { bias_bound: 0.0, noise_tail: 0.0, estimated_rmsre: e, beta: 0.05 }
}

proptest! {
    #[test]
    fn cutoff_acceptance_is_nested(est in prop::collection::vec(0.0f64..1.0, 0..30), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let items: Vec<_> = est.iter().enumerate().map(|(i, e)| (i, bound(*e))).collect();
        let small: Vec<_> = accept_by_cutoff(items.clone(), lo).accepted.into_iter().map(|x| x.0).collect();
        let large: Vec<_> = accept_by_cutoff(items, hi).accepted.into_iter().map(|x| x.0).collect();
        prop_assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn stats_ignore_scope_order(vals in prop::collection::vec(0i64..1000, 1..30), seed in any::<u64>()) {
        let snap: std::collections::BTreeMap<usize, Fixed> =
            vals.iter().enumerate().map(|(i, v)| (i, Fixed::from_raw(v * 1_000_000))).collect();
        let mut scope: Vec<usize> = (0..vals.len() + 3).collect();
        let a = budget_stats(&snap, &scope).unwrap();
        let n = scope.len();
        scope.rotate_left((seed as usize) % n);
        scope.reverse();
        let b = budget_stats(&snap, &scope).unwrap();
        prop_assert_eq!(a, b);
    }
}
