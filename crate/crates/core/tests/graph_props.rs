mod common;

use std::collections::BTreeSet;

use common::{dense_propagate, random_graph, random_tensor, rng};
use hagmeta::graph::permute_rows;
use proptest::prelude::*;
use rand::seq::SliceRandom;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagate_is_linear(seed in any::<u64>(), n in 1usize..15, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = random_graph(n, 0.3, 2, 2, seed);
        let mut r = rng(seed ^ 1);
        let h1 = random_tensor(n, 3, 2.0, &mut r);
        let h2 = random_tensor(n, 3, 2.0, &mut r);
        let combo = h1.scale(a).add(&h2.scale(b)).unwrap();
        let lhs = g.propagate(&combo).unwrap();
        let rhs = g.propagate(&h1).unwrap().scale(a).add(&g.propagate(&h2).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn propagate_matches_dense_oracle(seed in any::<u64>(), n in 1usize..20, p in 0.0f64..1.0) {
        let g = random_graph(n, p, 2, 2, seed);
        let h = random_tensor(n, 4, 3.0, &mut rng(seed ^ 2));
        prop_assert!(g.propagate(&h).unwrap().max_abs_diff(&dense_propagate(&g, &h)) < 1e-10);
    }

    #[test]
    fn propagate_commutes_with_relabeling(seed in any::<u64>(), n in 1usize..15) {
        let g = random_graph(n, 0.3, 3, 2, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed ^ 3));
        let pg = g.permuted(&perm).unwrap();
        let h = random_tensor(n, 3, 1.0, &mut rng(seed ^ 4));
        let lhs = pg.propagate(&permute_rows(&h, &perm)).unwrap();
        let rhs = permute_rows(&g.propagate(&h).unwrap(), &perm);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn degrees_are_symmetric_neighbor_counts(seed in any::<u64>(), n in 1usize..20) {
        let g = random_graph(n, 0.4, 1, 1, seed);
        let total: usize = g.degrees().iter().sum();
        prop_assert_eq!(total, 2 * g.num_edges());
        for u in 0..n {
            for &v in g.neighbors(u) {
                prop_assert!(g.neighbors(v).contains(&u));
                prop_assert!(u != v);
            }
        }
    }

    #[test]
    fn masking_removes_incident_edges_only(seed in any::<u64>(), n in 2usize..20) {
        let g = random_graph(n, 0.4, 1, 1, seed);
        let masked: BTreeSet<usize> = (0..n).filter(|v| v % 3 == 0).collect();
        let m = g.mask_nodes(&masked);
        let expected: Vec<_> = g.edges().into_iter()
            .filter(|(u, v)| !masked.contains(u) && !masked.contains(v)).collect();
        prop_assert_eq!(m.edges(), expected);
        prop_assert_eq!(m.features(), g.features());
    }
}
