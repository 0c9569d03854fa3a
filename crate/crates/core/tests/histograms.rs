use gradual_lstm::diagnostics::{drift_metric, total_variation, ActivationHistogram};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn standard_normal_masses_follow_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut h = ActivationHistogram::for_hidden_states(1);
    h.add_values((0..100_000).map(|_| StandardNormal.sample(&mut rng)));
    h.end_update();
    let s = h.finish();
    let phi = Normal::new(0.0, 1.0).unwrap();
    let bins = s.bins();
    for (k, &mass) in s.windows[0].iter().enumerate() {
        // End bins absorb the tails.
        let lo = if k == 0 { 0.0 } else { phi.cdf(s.edges[k]) };
        let hi = if k == bins - 1 {
            1.0
        } else {
            phi.cdf(s.edges[k + 1])
        };
        assert!(
            (mass - (hi - lo)).abs() < 0.01,
            "bin {k}: {mass} vs {}",
            hi - lo
        );
    }
}

fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum::<f64>() + 1e-9;
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn drift_bounded_and_symmetric((p, q) in (1usize..20).prop_flat_map(|n| (dist(n), dist(n)))) {
        let a = total_variation(&p, &q).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        prop_assert_eq!(a, total_variation(&q, &p).unwrap());
    }

    #[test]
    fn windows_conserve_mass(values in prop::collection::vec(-3.0f64..3.0, 1..200), window in 1usize..5) {
        let mut h = ActivationHistogram::new(1, gradual_lstm::diagnostics::uniform_edges(10, -1.0, 1.0), window, 500).unwrap();
        for chunk in values.chunks(7) {
            h.add_values(chunk.iter().copied());
            h.end_update();
        }
        let s = h.finish();
        for w in &s.windows {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        if s.windows.len() >= 2 {
            let d = drift_metric(&s).unwrap();
            prop_assert!(d.values.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        }
    }
}
