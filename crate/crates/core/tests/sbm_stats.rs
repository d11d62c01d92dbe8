use hagmeta::dataset::{generate_synthetic, SbmSpec};

fn spec(seed: u64) -> SbmSpec {
    SbmSpec {
        classes: 4,
        nodes_per_class: 30,
        p_in: 0.2,
        p_out: 0.03,
        feature_dim: 4,
        class_center_separation: 1.0,
        feature_noise: 0.1,
        seed,
    }
}

/// Edge counts over many seeds stay within three standard errors of the
/// binomial means `C(m,2) p_in` per class and `m^2 p_out` per class pair.
#[test]
fn edge_counts_follow_binomial_means() {
    let seeds = 40u64;
    let m = 30.0f64;
    let (mut intra, mut inter, mut n_intra, mut n_inter) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let s = spec(seed);
        let g = generate_synthetic(&s).unwrap();
        let mut within = [0usize; 4];
        let mut across = [[0usize; 4]; 4];
        for (u, v) in g.edges() {
            let (a, b) = (g.label(u).unwrap(), g.label(v).unwrap());
            if a == b {
                within[a] += 1;
            } else {
                across[a.min(b)][a.max(b)] += 1;
            }
        }
        for c in within {
            intra += c as f64;
            n_intra += 1.0;
        }
        for a in 0..4 {
            for b in a + 1..4 {
                inter += across[a][b] as f64;
                n_inter += 1.0;
            }
        }
    }
    let pairs_in = m * (m - 1.0) / 2.0;
    let check = |total: f64, count: f64, trials: f64, p: f64| {
        let mean = total / count;
        let expected = trials * p;
        let se = (trials * p * (1.0 - p) / count).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean} expected {expected} se {se}"
        );
    };
    check(intra, n_intra, pairs_in, 0.2);
    check(inter, n_inter, m * m, 0.03);
}

#[test]
fn features_center_on_scaled_basis_vectors() {
    let mut s = spec(1);
    s.nodes_per_class = 400;
    s.class_center_separation = 3.0;
    s.feature_noise = 1.0;
    let g = generate_synthetic(&s).unwrap();
    for class in 0..4 {
        let nodes: Vec<usize> = (0..g.num_nodes())
            .filter(|&v| g.label(v) == Some(class))
            .collect();
        for d in 0..4 {
            let mean =
                nodes.iter().map(|&v| g.features().get(v, d)).sum::<f64>() / nodes.len() as f64;
            let target = if d == class { 3.0 } else { 0.0 };
            assert!((mean - target).abs() < 3.0 / (nodes.len() as f64).sqrt() * 1.5);
        }
    }
}
