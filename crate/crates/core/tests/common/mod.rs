#![allow(dead_code)]

use hagmeta::dataset::{generate_synthetic, SbmSpec};
use hagmeta::diffnum::Tensor;
use hagmeta::episodes::{EpisodeShape, EpisodeTask, MetaEpisodeSampler};
use hagmeta::splits::{make_splits, DataSplits, NodeFractions, SplitSpec};
use hagmeta::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Erdos-Renyi graph with random features and labels `v % classes`.
pub fn random_graph(n: usize, p: f64, dim: usize, classes: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let features = random_tensor(n, dim, 1.0, &mut r);
    let labels = (0..n).map(|v| Some(v % classes)).collect();
    Graph::build(&edges, features, labels).unwrap()
}

/// Dense `H + D^-1/2 A D^-1/2 H` with explicit loops.
pub fn dense_propagate(g: &Graph, h: &Tensor) -> Tensor {
    let n = g.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (u, v) in g.edges() {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let mut out = h.clone();
    for i in 0..n {
        for j in 0..n {
            if a[i][j] == 0.0 {
                continue;
            }
            let c = 1.0 / (deg[i] * deg[j]).sqrt();
            for k in 0..h.cols() {
                let x = out.get(i, k) + c * h.get(j, k);
                out.set(i, k, x);
            }
        }
    }
    out
}

pub fn sbm(classes: usize, nodes_per_class: usize, seed: u64) -> Graph {
    generate_synthetic(&SbmSpec {
        classes,
        nodes_per_class,
        p_in: 0.3,
        p_out: 0.02,
        feature_dim: 8,
        class_center_separation: 1.0,
        feature_noise: 0.5,
        seed,
    })
    .unwrap()
}

pub fn split(
    graph: &Graph,
    base: usize,
    tr: usize,
    val: usize,
    test: usize,
    seed: u64,
) -> DataSplits {
    make_splits(
        graph,
        &SplitSpec {
            n_base: base,
            n_novel_tr: tr,
            n_novel_val: val,
            n_novel_test: test,
            node_fractions: NodeFractions::default(),
            min_class_nodes: 0,
            seed,
        },
    )
    .unwrap()
}

/// 30 nodes, 4 classes: two base classes and two pseudo-novel classes
/// added one per session, so the returned episode has three tasks.
pub fn small_episode(seed: u64) -> (Graph, EpisodeTask) {
    let g = random_graph(30, 0.2, 6, 4, seed);
    let s = split(&g, 2, 2, 0, 0, seed);
    let g = g.mask_nodes(&s.masked);
    let mut sampler = MetaEpisodeSampler::new(
        &s,
        EpisodeShape {
            n_way: 1,
            k_shot: 2,
            query_k: 2,
        },
        seed,
    )
    .unwrap();
    sampler.next_episode().unwrap();
    let task = sampler.next_episode().unwrap();
    (g, task)
}
