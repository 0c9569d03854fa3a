use std::collections::BTreeMap;

use gradual_lstm::clip::{
    equivalent_global_norm, global_clip, global_norm, group_norms, layerwise_clip, NORM_SLACK,
};
use gradual_lstm::net::GradientSet;
use proptest::prelude::*;

fn grad_set() -> impl Strategy<Value = GradientSet> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 1..6), 1..3),
        1..5,
    )
    .prop_map(|groups| {
        GradientSet::from_groups(
            groups
                .into_iter()
                .enumerate()
                .map(|(i, g)| (format!("g{i}"), g))
                .collect(),
        )
    })
}

fn bounds(g: &GradientSet, mus: &[f64]) -> BTreeMap<String, f64> {
    g.group_names()
        .into_iter()
        .zip(mus.iter().cycle())
        .map(|(n, &m)| (n.to_string(), m))
        .collect()
}

fn bits(g: &GradientSet) -> Vec<u64> {
    g.values().map(f64::to_bits).collect()
}

fn cosine(a: &GradientSet, b: &GradientSet) -> f64 {
    let dot: f64 = a.values().zip(b.values()).map(|(x, y)| x * y).sum();
    dot / (global_norm(a) * global_norm(b))
}

proptest! {
    #[test]
    fn global_clip_bound_direction_idempotence(g in grad_set(), mu in 0.01f64..20.0) {
        let c = global_clip(&g, mu).unwrap();
        prop_assert!(global_norm(&c) <= mu * (1.0 + NORM_SLACK));
        if global_norm(&g) > 0.0 {
            prop_assert!((cosine(&g, &c) - 1.0).abs() <= 1e-12);
        }
        prop_assert_eq!(bits(&global_clip(&c, mu).unwrap()), bits(&c));
    }

    #[test]
    fn layerwise_bound_direction_idempotence(
        g in grad_set(),
        mus in prop::collection::vec(0.01f64..5.0, 1..5),
    ) {
        let b = bounds(&g, &mus);
        let c = layerwise_clip(&g, &b).unwrap();
        for ((name, n), (orig, m)) in group_norms(&c).into_iter().zip(group_norms(&g)) {
            prop_assert_eq!(&name, &orig);
            prop_assert!(n <= b[&name] * (1.0 + NORM_SLACK));
            if m > 0.0 {
                let grp_g = g.group(&name).unwrap();
                let grp_c = c.group(&name).unwrap();
                let dot: f64 = grp_g.values().zip(grp_c.values()).map(|(x, y)| x * y).sum();
                prop_assert!((dot / (m * n) - 1.0).abs() <= 1e-12);
            }
        }
        prop_assert_eq!(bits(&layerwise_clip(&c, &b).unwrap()), bits(&c));
    }

    #[test]
    fn inflating_one_group_leaves_others(
        g in grad_set(),
        mus in prop::collection::vec(0.01f64..5.0, 1..5),
        pick in 0usize..8,
    ) {
        let b = bounds(&g, &mus);
        let base = layerwise_clip(&g, &b).unwrap();
        let k = pick % g.groups().len();
        let mut inflated = g.clone();
        inflated.groups_mut()[k].values_mut().for_each(|v| *v *= 1e6);
        let c = layerwise_clip(&inflated, &b).unwrap();
        for (i, (x, y)) in base.groups().iter().zip(c.groups()).enumerate() {
            if i != k {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn equivalent_norm_is_root_sum_of_squares(mus in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let b: BTreeMap<String, f64> =
            mus.iter().enumerate().map(|(i, &m)| (format!("g{i}"), m)).collect();
        let oracle = mus.iter().fold(0.0, |acc, m| acc + m * m).sqrt();
        prop_assert!((equivalent_global_norm(&b) - oracle).abs() <= 1e-12);
    }
}
