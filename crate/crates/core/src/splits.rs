//! Class-level and node-level data splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ClassId, Graph, NodeId};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for NodeFractions {
    fn default() -> Self {
        NodeFractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_base: usize,
    pub n_novel_tr: usize,
    #[serde(default)]
    pub n_novel_val: usize,
    pub n_novel_test: usize,
    #[serde(default)]
    pub node_fractions: NodeFractions,
    /// Every class used by the split needs at least this many labeled nodes.
    #[serde(default)]
    pub min_class_nodes: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = self.node_fractions;
        if [f.train, f.val, f.test]
            .iter()
            .any(|&x| !(0.0..=1.0).contains(&x))
        {
            return Err(Error::Split("node fractions must lie in [0, 1]".into()));
        }
        if (f.train + f.val + f.test - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!(
                "node fractions sum to {}, expected 1",
                f.train + f.val + f.test
            )));
        }
        if self.n_base == 0 {
            return Err(Error::Split("at least one base class is required".into()));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.n_base + self.n_novel_tr + self.n_novel_val + self.n_novel_test
    }
}

/// Which classes play which role, and how base-class nodes divide into
/// train/val/test. Nodes of evaluation classes are masked during pre- and
/// meta-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSplits {
    pub seed: u64,
    pub base_classes: Vec<ClassId>,
    pub novel_tr_classes: Vec<ClassId>,
    pub novel_val_classes: Vec<ClassId>,
    pub novel_test_classes: Vec<ClassId>,
    pub base_train: BTreeMap<ClassId, Vec<NodeId>>,
    pub base_val: BTreeMap<ClassId, Vec<NodeId>>,
    pub base_test: BTreeMap<ClassId, Vec<NodeId>>,
    /// All labeled nodes of every split class, ascending.
    pub class_nodes: BTreeMap<ClassId, Vec<NodeId>>,
    pub masked: BTreeSet<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    BaseTrain,
    BaseVal,
    BaseTest,
    NovelTrain,
    NovelVal,
    NovelTest,
    Unused,
}

impl DataSplits {
    pub fn nodes_of(&self, class: ClassId) -> &[NodeId] {
        self.class_nodes.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn base_train_nodes(&self) -> Vec<NodeId> {
        self.base_train.values().flatten().copied().collect()
    }

    pub fn base_val_nodes(&self) -> Vec<NodeId> {
        self.base_val.values().flatten().copied().collect()
    }

    /// Role of every node id in `0..num_nodes`.
    pub fn node_roles(&self, num_nodes: usize) -> Vec<NodeRole> {
        let mut roles = vec![NodeRole::Unused; num_nodes];
        let mut mark = |map: &BTreeMap<ClassId, Vec<NodeId>>, role| {
            for &v in map.values().flatten() {
                roles[v] = role;
            }
        };
        mark(&self.base_train, NodeRole::BaseTrain);
        mark(&self.base_val, NodeRole::BaseVal);
        mark(&self.base_test, NodeRole::BaseTest);
        for (classes, role) in [
            (&self.novel_tr_classes, NodeRole::NovelTrain),
            (&self.novel_val_classes, NodeRole::NovelVal),
            (&self.novel_test_classes, NodeRole::NovelTest),
        ] {
            for c in classes {
                for &v in self.nodes_of(*c) {
                    roles[v] = role;
                }
            }
        }
        roles
    }

    /// Checks class-set disjointness and that every evaluation node is masked.
    pub fn check_invariants(&self) -> Result<()> {
        let sets = [
            &self.base_classes,
            &self.novel_tr_classes,
            &self.novel_val_classes,
            &self.novel_test_classes,
        ];
        let mut seen = BTreeSet::new();
        for set in sets {
            for &c in set {
                if !seen.insert(c) {
                    return Err(Error::Split(format!("class {c} assigned to two splits")));
                }
            }
        }
        for &c in &self.novel_test_classes {
            if let Some(v) = self.nodes_of(c).iter().find(|v| !self.masked.contains(v)) {
                return Err(Error::Split(format!(
                    "evaluation node {v} of class {c} is not masked"
                )));
            }
        }
        Ok(())
    }

    pub fn manifest_json(&self, num_nodes: usize) -> Result<String> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            #[serde(flatten)]
            splits: &'a DataSplits,
            node_roles: Vec<NodeRole>,
        }
        Ok(serde_json::to_string_pretty(&Manifest {
            splits: self,
            node_roles: self.node_roles(num_nodes),
        })?)
    }
}

/// Assigns classes to roles at random and divides base-class nodes into
/// train/val/test. Deterministic in `spec.seed`.
pub fn make_splits(graph: &Graph, spec: &SplitSpec) -> Result<DataSplits> {
    spec.validate()?;
    let mut classes = graph.classes();
    if spec.total_classes() > classes.len() {
        return Err(Error::Split(format!(
            "split needs {} classes but the graph has {}",
            spec.total_classes(),
            classes.len()
        )));
    }
    let by_class = graph.nodes_by_class();
    let mut rng = stream_rng(spec.seed, "splits");
    classes.shuffle(&mut rng);

    let mut rest = classes.into_iter();
    let mut take = |n: usize| -> Vec<ClassId> {
        let mut v: Vec<ClassId> = rest.by_ref().take(n).collect();
        v.sort_unstable();
        v
    };
    let base_classes = take(spec.n_base);
    let novel_tr_classes = take(spec.n_novel_tr);
    let novel_val_classes = take(spec.n_novel_val);
    let novel_test_classes = take(spec.n_novel_test);

    let mut class_nodes = BTreeMap::new();
    for &c in base_classes
        .iter()
        .chain(&novel_tr_classes)
        .chain(&novel_val_classes)
        .chain(&novel_test_classes)
    {
        let nodes = by_class[c].clone();
        if nodes.len() < spec.min_class_nodes.max(1) {
            return Err(Error::Split(format!(
                "class {c} has {} labeled nodes, needs at least {}",
                nodes.len(),
                spec.min_class_nodes.max(1)
            )));
        }
        class_nodes.insert(c, nodes);
    }

    let f = spec.node_fractions;
    let (mut base_train, mut base_val, mut base_test) =
        (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for &c in &base_classes {
        let mut nodes = class_nodes[&c].clone();
        nodes.shuffle(&mut rng);
        let n = nodes.len();
        let mut n_val = (f.val * n as f64).round() as usize;
        let mut n_test = (f.test * n as f64).round() as usize;
        if f.val > 0.0 {
            n_val = n_val.max(1);
        }
        if f.test > 0.0 {
            n_test = n_test.max(1);
        }
        if n_val + n_test >= n {
            return Err(Error::Split(format!(
                "base class {c} has too few nodes ({n}) for the node fractions"
            )));
        }
        let sorted = |s: &[NodeId]| {
            let mut v = s.to_vec();
            v.sort_unstable();
            v
        };
        base_val.insert(c, sorted(&nodes[..n_val]));
        base_test.insert(c, sorted(&nodes[n_val..n_val + n_test]));
        base_train.insert(c, sorted(&nodes[n_val + n_test..]));
    }

    let masked = novel_test_classes
        .iter()
        .flat_map(|c| class_nodes[c].iter().copied())
        .collect();

    let splits = DataSplits {
        seed: spec.seed,
        base_classes,
        novel_tr_classes,
        novel_val_classes,
        novel_test_classes,
        base_train,
        base_val,
        base_test,
        class_nodes,
        masked,
    };
    splits.check_invariants()?;
    Ok(splits)
}
