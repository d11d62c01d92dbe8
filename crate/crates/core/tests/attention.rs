mod common;

use common::{dense_propagate, random_graph, random_tensor, rng, small_episode};
use hagmeta::attention::{
    node_attention, task_attention, task_descriptors, weighted_prototypes, NlaConfig,
    PrototypeMode, TlaConfig,
};
use hagmeta::diffnum::{forward_backward, ParamSet, Tensor};
use hagmeta::episodes::ClassRegistry;
use hagmeta::model::{session_forward, ModelConfig, ModelState};
use hagmeta::protonet::{mean_prototypes, PrototypeSet};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use std::collections::BTreeMap;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dense_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

fn relu_rows(t: &Tensor) -> Tensor {
    t.map(|x| x.max(0.0))
}

/// Straight-line node attention: FC, two aggregation layers, scalar
/// projection, centrality adjustment, softmax over the supports.
fn node_attention_oracle(
    g: &hagmeta::Graph,
    p: &ParamSet,
    eps: f64,
    support: &[usize],
) -> Vec<f64> {
    let t = |name: &str| p.tensor(name).unwrap().clone();
    let mut h = dense_matmul(g.features(), &t("nla.fc.w"));
    let b = t("nla.fc.b");
    for r in 0..h.rows() {
        for c in 0..h.cols() {
            h.set(r, c, h.get(r, c) + b.data()[c]);
        }
    }
    let mut h = relu_rows(&h);
    for name in ["nla.gcn.r0", "nla.gcn.r1"] {
        h = relu_rows(&dense_matmul(&dense_propagate(g, &h), &t(name)));
    }
    let lambda = dense_matmul(&h, &t("nla.proj.w"));
    let bias = t("nla.proj.b").data()[0];
    let adjusted: Vec<f64> = support
        .iter()
        .map(|&v| sigmoid(((g.degree(v) as f64) + eps).ln() * (lambda.get(v, 0) + bias)))
        .collect();
    let m = adjusted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = adjusted.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

#[test]
fn node_attention_matches_dense_oracle() {
    let g = random_graph(10, 0.3, 5, 2, 11);
    let cfg = NlaConfig::default();
    let params = cfg.init_params(5, &mut rng(4)).unwrap();
    let support = [0, 3, 4, 7, 9];
    let got = node_attention(&g, &params, &cfg, &support).unwrap();
    let want = node_attention_oracle(&g, &params, cfg.epsilon, &support);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{got:?} vs {want:?}");
    }
}

#[test]
fn paper_mode_scales_prototypes_by_class_share() {
    let mut r = rng(1);
    let z = random_tensor(6, 3, 1.0, &mut r);
    let groups = vec![vec![0, 1], vec![2, 3, 4, 5]];
    let uniform = vec![1.0 / 6.0; 6];
    let p = weighted_prototypes(&z, &uniform, &[0, 1], &groups, PrototypeMode::Global).unwrap();
    let means = mean_prototypes(&z, &[0, 1], &groups).unwrap();
    for (k, share) in [(0, 2.0 / 6.0), (1, 4.0 / 6.0)] {
        for c in 0..3 {
            assert!((p.matrix.get(k, c) - share * means.matrix.get(k, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn one_hot_attention_picks_the_support() {
    let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![5.0, -1.0]]).unwrap();
    let p = weighted_prototypes(
        &z,
        &[1.0, 0.0],
        &[3],
        &[vec![0, 1]],
        PrototypeMode::PerClass,
    )
    .unwrap();
    assert_eq!(p.matrix.row(0), &[1.0, 2.0]);
}

#[test]
fn zero_attention_class_cannot_be_renormalized() {
    let z = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
    assert!(weighted_prototypes(
        &z,
        &[0.0, 0.0],
        &[0],
        &[vec![0, 1]],
        PrototypeMode::PerClass
    )
    .is_err());
}

#[test]
fn doubling_a_task_halves_its_class_weight() {
    let small = registry(&[&[0, 1], &[2, 3]]);
    let big = registry(&[&[0, 1], &[2, 3, 4, 5]]);
    let w = [0.4, 0.6];
    let a = hagmeta::attention::expand_class_weights(&w, &small).unwrap();
    let b = hagmeta::attention::expand_class_weights(&w, &big).unwrap();
    assert!((a[2].1 - 0.3).abs() < 1e-15);
    assert!((b[2].1 - 0.15).abs() < 1e-15);
    assert!((a[0].1 - b[0].1).abs() < 1e-15);
}

fn registry(sessions: &[&[usize]]) -> ClassRegistry {
    let mut r = ClassRegistry::with_base(sessions[0], 1).unwrap();
    let mut next = 100;
    for s in &sessions[1..] {
        let supports: BTreeMap<usize, Vec<usize>> = s
            .iter()
            .map(|&c| {
                next += 1;
                (c, vec![next])
            })
            .collect();
        r.push_novel(supports).unwrap();
    }
    r
}

fn proto_sets(seed: u64, sizes: &[usize], h: usize) -> Vec<PrototypeSet> {
    let mut r = rng(seed);
    let mut next = 0;
    sizes
        .iter()
        .map(|&n| {
            let classes: Vec<usize> = (next..next + n).collect();
            next += n;
            PrototypeSet::new(classes, random_tensor(n, h, 1.0, &mut r)).unwrap()
        })
        .collect()
}

#[test]
fn appending_a_task_keeps_earlier_descriptors() {
    let tla = TlaConfig::for_prototype_dim(4);
    let params = tla.init_params(4, &mut rng(2)).unwrap();
    let sets = proto_sets(5, &[3, 2, 2], 4);
    let two = task_descriptors(&sets[..2], &params).unwrap();
    let three = task_descriptors(&sets, &params).unwrap();
    for r in 0..2 {
        assert_eq!(two.row(r), three.row(r));
    }
    let w2 = task_attention(&two, 1).unwrap();
    let w3 = task_attention(&three, 1).unwrap();
    assert_eq!(w2, w3);
}

#[test]
fn every_attention_parameter_gets_gradient() {
    let (g, task) = small_episode(21);
    let state = ModelState::init(&ModelConfig::hag_meta(), g.feature_dim(), 21).unwrap();
    let cfg = state.config.clone();
    let (_, grads) = forward_backward(&state.params, |tape, b| {
        Ok(session_forward(tape, &g, b, &cfg, &task)?.loss)
    })
    .unwrap();
    for (name, grad) in &grads {
        if name.starts_with("tla.") || name.starts_with("nla.") {
            assert!(
                grad.data().iter().any(|&x| x != 0.0),
                "{name} has zero gradient"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn node_attention_is_a_distribution(seed in any::<u64>(), n in 3usize..15) {
        let g = random_graph(n, 0.3, 3, 2, seed);
        let cfg = NlaConfig::default();
        let params = cfg.init_params(3, &mut rng(seed ^ 5)).unwrap();
        let support: Vec<usize> = (0..n).step_by(2).collect();
        let a = node_attention(&g, &params, &cfg, &support).unwrap();
        prop_assert!(a.iter().all(|&x| x > 0.0));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn node_attention_is_relabeling_equivariant(seed in any::<u64>(), n in 3usize..15) {
        let g = random_graph(n, 0.3, 3, 2, seed);
        let cfg = NlaConfig::default();
        let params = cfg.init_params(3, &mut rng(seed ^ 6)).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed ^ 7));
        let support: Vec<usize> = (0..n).filter(|v| v % 3 != 1).collect();
        let a = node_attention(&g, &params, &cfg, &support).unwrap();
        let moved: Vec<usize> = support.iter().map(|&v| perm[v]).collect();
        let b = node_attention(&g.permuted(&perm).unwrap(), &params, &cfg, &moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tla_weights_ignore_class_order_within_tasks(seed in any::<u64>(), a in 1usize..5, b in 1usize..5, c in 1usize..5) {
        let tla = TlaConfig::for_prototype_dim(4);
        let params = tla.init_params(4, &mut rng(seed)).unwrap();
        let sets = proto_sets(seed ^ 9, &[a, b, c], 4);
        let mut shuffled = sets.clone();
        let mut r = rng(seed ^ 10);
        for s in &mut shuffled {
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.shuffle(&mut r);
            let rows: Vec<Vec<f64>> = order.iter().map(|&i| s.matrix.row(i).to_vec()).collect();
            let classes = order.iter().map(|&i| s.classes[i]).collect();
            *s = PrototypeSet::new(classes, Tensor::from_rows(&rows).unwrap()).unwrap();
        }
        let w = task_attention(&task_descriptors(&sets, &params).unwrap(), 2).unwrap();
        let v = task_attention(&task_descriptors(&shuffled, &params).unwrap(), 2).unwrap();
        for (x, y) in w.iter().zip(&v) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
