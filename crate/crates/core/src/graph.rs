//! Immutable undirected graph in CSR form and the normalized message-passing kernel.

use std::collections::BTreeSet;

use crate::diffnum::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type ClassId = usize;

/// Undirected graph with dense node features and optional class labels.
///
/// Adjacency is stored symmetrically without self-loops or duplicates, so the
/// stored neighbor count of a node is its degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    features: Tensor,
    labels: Vec<Option<ClassId>>,
    inv_sqrt_degree: Vec<f64>,
}

impl Graph {
    /// Builds a graph from an edge list; both orientations and repeated edges
    /// collapse into one undirected edge and self-loops are dropped.
    pub fn build(
        edges: &[(NodeId, NodeId)],
        features: Tensor,
        labels: Vec<Option<ClassId>>,
    ) -> Result<Self> {
        let num_nodes = features.rows();
        if features.shape().len() != 2 {
            return Err(Error::Graph(
                "feature matrix must be two-dimensional".into(),
            ));
        }
        if features.cols() == 0 {
            return Err(Error::Graph("feature dimension must be positive".into()));
        }
        if labels.len() != num_nodes {
            return Err(Error::Graph(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        let mut adjacency: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Graph(format!(
                    "edge ({u}, {v}) references a node outside [0, {num_nodes})"
                )));
            }
            if u != v {
                adjacency[u].insert(v);
                adjacency[v].insert(u);
            }
        }
        Ok(Self::from_adjacency(adjacency, features, labels))
    }

    fn from_adjacency(
        adjacency: Vec<BTreeSet<NodeId>>,
        features: Tensor,
        labels: Vec<Option<ClassId>>,
    ) -> Self {
        let mut offsets = Vec::with_capacity(adjacency.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for set in &adjacency {
            neighbors.extend(set.iter().copied());
            offsets.push(neighbors.len());
        }
        let inv_sqrt_degree = offsets
            .windows(2)
            .map(|w| {
                let d = (w[1] - w[0]) as f64;
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        Graph {
            offsets,
            neighbors,
            features,
            labels,
            inv_sqrt_degree,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<ClassId>] {
        &self.labels
    }

    pub fn label(&self, v: NodeId) -> Option<ClassId> {
        self.labels[v]
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|v| self.degree(v)).collect()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        (0..self.num_nodes())
            .flat_map(|u| {
                self.neighbors(u)
                    .iter()
                    .filter(move |&&v| u < v)
                    .map(move |&v| (u, v))
            })
            .collect()
    }

    /// Sorted list of distinct class ids present in the labels.
    pub fn classes(&self) -> Vec<ClassId> {
        let set: BTreeSet<ClassId> = self.labels.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    /// Nodes of each class in ascending node order, indexed by class id.
    pub fn nodes_by_class(&self) -> Vec<Vec<NodeId>> {
        let n_classes = self.labels.iter().flatten().max().map_or(0, |&c| c + 1);
        let mut out = vec![Vec::new(); n_classes];
        for (v, label) in self.labels.iter().enumerate() {
            if let Some(c) = label {
                out[*c].push(v);
            }
        }
        out
    }

    /// Computes `h_j + sum_{j' in N(j)} h_{j'} / sqrt(d_j d_{j'})` for every row.
    ///
    /// The operator is symmetric, so it is also its own adjoint.
    pub fn propagate(&self, h: &Tensor) -> Result<Tensor> {
        if h.rows() != self.num_nodes() {
            return Err(Error::shape(
                "propagate",
                format!("{} rows for {} nodes", h.rows(), self.num_nodes()),
            ));
        }
        let mut out = h.clone();
        for j in 0..self.num_nodes() {
            let nbrs = self.neighbors(j);
            if nbrs.is_empty() {
                continue;
            }
            let dj = self.inv_sqrt_degree[j];
            let out_row = out.row_mut(j);
            for &k in nbrs {
                let coef = dj * self.inv_sqrt_degree[k];
                for (o, x) in out_row.iter_mut().zip(h.row(k)) {
                    *o += coef * x;
                }
            }
        }
        Ok(out)
    }

    /// Copy with every edge incident to a masked node removed. Node ids,
    /// features and labels are kept so indices stay valid.
    pub fn mask_nodes(&self, masked: &BTreeSet<NodeId>) -> Graph {
        let adjacency = (0..self.num_nodes())
            .map(|u| {
                if masked.contains(&u) {
                    BTreeSet::new()
                } else {
                    self.neighbors(u)
                        .iter()
                        .copied()
                        .filter(|v| !masked.contains(v))
                        .collect()
                }
            })
            .collect();
        Self::from_adjacency(adjacency, self.features.clone(), self.labels.clone())
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[NodeId]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Graph("relabeling is not a permutation".into()));
        }
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .map(|(u, v)| (perm[u], perm[v]))
            .collect();
        let features = permute_rows(&self.features, perm);
        let mut labels = vec![None; n];
        for (v, &p) in perm.iter().enumerate() {
            labels[p] = self.labels[v];
        }
        Graph::build(&edges, features, labels)
    }
}

/// Moves row `v` of `t` to row `perm[v]`.
pub fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for (v, &p) in perm.iter().enumerate() {
        out.row_mut(p).copy_from_slice(t.row(v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> Tensor {
        Tensor::filled(n, 1, 1.0)
    }

    #[test]
    fn single_edge_degrees() {
        let g = Graph::build(&[(0, 1)], feats(2), vec![None; 2]).unwrap();
        assert_eq!(g.degrees(), vec![1, 1]);
    }

    #[test]
    fn duplicates_and_self_loops_collapse() {
        let g = Graph::build(&[(0, 1), (1, 0), (0, 0)], feats(2), vec![None; 2]).unwrap();
        assert_eq!(g.degrees(), vec![1, 1]);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn triangle_is_symmetric() {
        let g = Graph::build(&[(0, 1), (1, 2), (2, 0)], feats(3), vec![None; 3]).unwrap();
        assert_eq!(g.degrees(), vec![2, 2, 2]);
        for u in 0..3 {
            for &v in g.neighbors(u) {
                assert!(g.neighbors(v).contains(&u));
            }
        }
    }

    #[test]
    fn out_of_range_node_rejected() {
        let err = Graph::build(&[(0, 5)], feats(2), vec![None; 2]).unwrap_err();
        assert!(matches!(err, Error::Graph(_)));
    }

    #[test]
    fn zero_width_features_rejected() {
        let f = Tensor::zeros(3, 0);
        assert!(Graph::build(&[], f, vec![None; 3]).is_err());
    }

    #[test]
    fn propagate_two_node_path() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = Graph::build(&[(0, 1)], f.clone(), vec![None; 2]).unwrap();
        let out = g.propagate(&f).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn propagate_triangle_row() {
        let f = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let g = Graph::build(&[(0, 1), (1, 2), (2, 0)], f.clone(), vec![None; 3]).unwrap();
        let out = g.propagate(&f).unwrap();
        assert!((out.get(2, 0) - 0.5).abs() < 1e-15);
        assert!((out.get(2, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn propagate_isolated_node_unchanged() {
        let f = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![7.5]]).unwrap();
        let g = Graph::build(&[(0, 1)], f.clone(), vec![None; 3]).unwrap();
        assert_eq!(g.propagate(&f).unwrap().get(2, 0), 7.5);
    }

    #[test]
    fn propagate_rejects_wrong_rows() {
        let g = Graph::build(&[(0, 1)], feats(2), vec![None; 2]).unwrap();
        assert!(g.propagate(&feats(3)).is_err());
    }

    #[test]
    fn masking_isolates_nodes() {
        let g = Graph::build(&[(0, 1), (1, 2), (2, 3)], feats(4), vec![None; 4]).unwrap();
        let masked: BTreeSet<_> = [2].into_iter().collect();
        let m = g.mask_nodes(&masked);
        assert_eq!(m.degrees(), vec![1, 1, 0, 0]);
        assert_eq!(m.num_nodes(), 4);
    }
}
