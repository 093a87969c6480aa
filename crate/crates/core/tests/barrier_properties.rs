mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlcbf::barrier::{soft_min, GammaParams};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn value_never_exceeds_smallest_active_term(seed in any::<u64>(), p in 1usize..8, log_eta in 0.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random_barrier(&mut rng, 3, p, 10f64.powf(log_eta));
        let x = random_point(&mut rng, 3, 10.0);
        let t = rng.random_range(0.0..cb.horizon());
        if let Ok(b) = cb.value(&x, t) {
            let active = cb
                .term_values(&x, t)
                .into_iter()
                .enumerate()
                .filter(|(l, _)| cb.is_active(*l, t))
                .map(|(_, v)| v)
                .fold(cb.bound_value(&x), f64::min);
            prop_assert!(b <= active);
        }
    }

    #[test]
    fn removing_terms_at_a_switch_never_lowers_the_value(seed in any::<u64>(), p in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random_barrier(&mut rng, 2, p, 20.0);
        let x = random_point(&mut rng, 2, 10.0);
        for &s in cb.schedule() {
            if let Ok(at) = cb.value(&x, s) {
                prop_assert!(at >= cb.left_limit_value(&x, s).unwrap());
            }
        }
    }

    #[test]
    fn midpoint_concave(seed in any::<u64>(), lambda in 0.0..=1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.random_range(1..6);
        let cb = random_barrier(&mut rng, 2, p, 50.0);
        let x1 = random_point(&mut rng, 2, 10.0);
        let x2 = random_point(&mut rng, 2, 10.0);
        let t = rng.random_range(0.0..cb.horizon());
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        if let (Ok(b1), Ok(b2), Ok(bm)) = (cb.value(&x1, t), cb.value(&x2, t), cb.value(&mix, t)) {
            prop_assert!(bm >= lambda * b1 + (1.0 - lambda) * b2 - 1e-9);
        }
    }

    #[test]
    fn funnel_stays_above_r_after_t_star(
        r in 0.01..2.0f64,
        below in 0.01..4.0f64,
        above in 0.01..4.0f64,
        t_star in 0.1..20.0f64,
        dt in 0.0..50.0f64,
    ) {
        let g = GammaParams::reaching(r - below, r + above, r, t_star).unwrap();
        prop_assert!((g.value(t_star) - r).abs() <= 1e-9);
        prop_assert!(g.value(t_star + dt) >= r - 1e-12);
        prop_assert!(g.rate(t_star + dt) >= 0.0);
    }

    #[test]
    fn static_funnel_when_starting_above_r(g0 in 0.5..2.0f64, gap in 0.01..1.0f64, t in 0.0..30.0f64) {
        let g = GammaParams::reaching(g0, g0 + gap, 0.4, 5.0).unwrap();
        prop_assert_eq!(g.decay, 0.0);
        prop_assert_eq!(g.value(t), g0);
    }

    #[test]
    fn soft_min_is_shift_stable_for_large_eta(v in prop::collection::vec(-1e3..1e3f64, 1..10), eta in 1.0..1e3f64) {
        let b = soft_min(&v, eta);
        let m = v.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(b.is_finite());
        prop_assert!(b <= m);
        prop_assert!(m - b <= (v.len() as f64).ln() / eta + 1e-12);
    }
}

#[test]
fn gradient_matches_finite_differences_on_random_barriers() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let p = rng.random_range(1..6);
        let cb = random_barrier(&mut rng, 3, p, 10.0);
        let x = random_point(&mut rng, 3, 5.0);
        let t = rng.random_range(0.0..cb.horizon());
        if cb.schedule().iter().any(|&s| (s - t).abs() < 1e-5) {
            continue;
        }
        let Ok(e) = cb.gradients(&x, t) else { continue };
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (cb.value(&xp, t).unwrap() - cb.value(&xm, t).unwrap()) / (2.0 * h);
            assert!((fd - e.grad_x[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{fd} vs {}", e.grad_x[i]);
        }
        let fd = (cb.value(&x, t + h).unwrap() - cb.value(&x, t - h).unwrap()) / (2.0 * h);
        assert!((fd - e.dbdt).abs() <= 1e-5 * fd.abs().max(1.0));
    }
}

#[test]
fn barrier_document_round_trips_through_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cb = random_barrier(&mut rng, 2, 5, 20.0);
    let text = serde_json::to_string(&cb).unwrap();
    let back: stlcbf::barrier::CompositeBarrier = serde_json::from_str(&text).unwrap();
    assert_eq!(cb, back);
}
