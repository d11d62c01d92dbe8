//! Task-level attention (per-class loss scaling) and node-level attention
//! (support-node weights for prototypes).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnum::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::episodes::ClassRegistry;
use crate::error::{Error, Result};
use crate::graph::{ClassId, Graph, NodeId};
use crate::protonet::PrototypeSet;

/// Three-layer perceptron mapping a pooled task prototype to a task embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TlaConfig {
    pub hidden_dims: [usize; 2],
    pub out_dim: usize,
}

impl TlaConfig {
    pub fn for_prototype_dim(h: usize) -> Self {
        TlaConfig {
            hidden_dims: [h, h],
            out_dim: h,
        }
    }

    fn dims(&self, in_dim: usize) -> [usize; 4] {
        [
            in_dim,
            self.hidden_dims[0],
            self.hidden_dims[1],
            self.out_dim,
        ]
    }

    pub fn init_params(&self, prototype_dim: usize, rng: &mut impl Rng) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        let dims = self.dims(prototype_dim);
        for l in 0..3 {
            params.insert_glorot(format!("tla.w{l}"), dims[l], dims[l + 1], rng)?;
            params.insert_zero_bias(format!("tla.b{l}"), dims[l + 1])?;
        }
        Ok(params)
    }
}

/// One fully connected layer, two graph-aggregation layers and a scalar
/// projection per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlaConfig {
    pub fc_dim: usize,
    pub gcn_dims: [usize; 2],
    /// Added to the degree before the log in the centrality adjustment.
    pub epsilon: f64,
}

impl Default for NlaConfig {
    fn default() -> Self {
        NlaConfig {
            fc_dim: 32,
            gcn_dims: [16, 16],
            epsilon: 1e-6,
        }
    }
}

impl NlaConfig {
    pub fn init_params(&self, feature_dim: usize, rng: &mut impl Rng) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        params.insert_glorot("nla.fc.w", feature_dim, self.fc_dim, rng)?;
        params.insert_zero_bias("nla.fc.b", self.fc_dim)?;
        params.insert_glorot("nla.gcn.r0", self.fc_dim, self.gcn_dims[0], rng)?;
        params.insert_glorot("nla.gcn.r1", self.gcn_dims[0], self.gcn_dims[1], rng)?;
        params.insert_glorot("nla.proj.w", self.gcn_dims[1], 1, rng)?;
        params.insert_zero_bias("nla.proj.b", 1)?;
        Ok(params)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMode {
    /// Node weights renormalized inside each class, so prototypes are convex
    /// combinations of their supports.
    #[default]
    PerClass,
    /// Node weights normalized once over the whole support set.
    Global,
}

fn task_sizes(class_task: &[usize], num_tasks: usize) -> Result<Vec<usize>> {
    let mut sizes = vec![0usize; num_tasks];
    for &t in class_task {
        if t >= num_tasks {
            return Err(Error::shape(
                "task attention",
                format!("class assigned to unknown task {t}"),
            ));
        }
        sizes[t] += 1;
    }
    if let Some(t) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::shape(
            "task attention",
            format!("task {t} has no classes"),
        ));
    }
    Ok(sizes)
}

/// Task embeddings `u_t = MLP(mean of the prototypes of task t)`, one row per task.
pub fn task_descriptors_tape(
    tape: &Tape<'_>,
    params: &BoundParams,
    prototypes: Var,
    class_task: &[usize],
    num_tasks: usize,
) -> Result<Var> {
    let pool = tape.constant(class_expansion(class_task, num_tasks)?)?;
    let mut h = tape.matmul(pool, prototypes)?;
    for l in 0..3 {
        let lin = tape.matmul(h, params.var(&format!("tla.w{l}"))?)?;
        h = tape.add_row(lin, params.var(&format!("tla.b{l}"))?)?;
        if l < 2 {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Softmax over `u_current . u_j` for every task `j <= current`, as a row.
pub fn task_attention_tape(tape: &Tape<'_>, descriptors: Var, current: usize) -> Result<Var> {
    let rows: Vec<usize> = (0..=current).collect();
    let seen = tape.gather_rows(descriptors, &rows)?;
    let me = tape.gather_rows(descriptors, &[current])?;
    let me_t = tape.transpose(me)?;
    let dots = tape.matmul(seen, me_t)?;
    let dots_row = tape.transpose(dots)?;
    tape.softmax_rows(dots_row)
}

/// `tasks x classes` matrix with `1 / |task|` where a class belongs to a
/// task. It averages prototypes per task and spreads task weights over classes.
pub fn class_expansion(class_task: &[usize], num_tasks: usize) -> Result<Tensor> {
    let sizes = task_sizes(class_task, num_tasks)?;
    let mut e = Tensor::zeros(num_tasks, class_task.len());
    for (k, &t) in class_task.iter().enumerate() {
        e.set(t, k, 1.0 / sizes[t] as f64);
    }
    Ok(e)
}

pub fn expand_class_weights_tape(
    tape: &Tape<'_>,
    task_weights: Var,
    class_task: &[usize],
) -> Result<Var> {
    let num_tasks = tape.value(task_weights).cols();
    let e = tape.constant(class_expansion(class_task, num_tasks)?)?;
    tape.matmul(task_weights, e)
}

/// Per-node attention logits over the whole graph, before the centrality adjustment.
fn node_scores_all<'g>(tape: &Tape<'g>, graph: &'g Graph, params: &BoundParams) -> Result<Var> {
    let x = tape.constant(graph.features().clone())?;
    let fc = tape.matmul(x, params.var("nla.fc.w")?)?;
    let fc = tape.add_row(fc, params.var("nla.fc.b")?)?;
    let mut h = tape.relu(fc)?;
    for r in ["nla.gcn.r0", "nla.gcn.r1"] {
        let agg = tape.propagate(graph, h)?;
        let lin = tape.matmul(agg, params.var(r)?)?;
        h = tape.relu(lin)?;
    }
    let proj = tape.matmul(h, params.var("nla.proj.w")?)?;
    tape.add_row(proj, params.var("nla.proj.b")?)
}

/// Attention over the support set as a `1 x |support|` row:
/// `softmax_j(sigmoid(log(degree_j + eps) * lambda_j))`.
pub fn node_attention_tape<'g>(
    tape: &Tape<'g>,
    graph: &'g Graph,
    params: &BoundParams,
    config: &NlaConfig,
    support_ids: &[NodeId],
) -> Result<Var> {
    if support_ids.is_empty() {
        return Err(Error::shape("node_attention", "empty support set"));
    }
    let scores = node_scores_all(tape, graph, params)?;
    let lambda = tape.gather_rows(scores, support_ids)?;
    let centrality = Tensor::column_vector(
        support_ids
            .iter()
            .map(|&v| (graph.degree(v) as f64 + config.epsilon).ln())
            .collect(),
    );
    let centrality = tape.constant(centrality)?;
    let adjusted = tape.mul(lambda, centrality)?;
    let adjusted = tape.sigmoid(adjusted)?;
    let row = tape.transpose(adjusted)?;
    tape.softmax_rows(row)
}

/// Prototypes as attention-weighted sums of support embeddings.
pub fn weighted_prototypes_tape(
    tape: &Tape<'_>,
    support_embeddings: Var,
    attention: Var,
    groups: &[Vec<usize>],
    mode: PrototypeMode,
) -> Result<Var> {
    let coef = tape.group_weights(attention, groups, mode == PrototypeMode::PerClass)?;
    tape.matmul(coef, support_embeddings)
}

/// Task embeddings for a sequence of sessions, one row per session.
pub fn task_descriptors(sessions: &[PrototypeSet], params: &ParamSet) -> Result<Tensor> {
    if let Some(i) = sessions.iter().position(PrototypeSet::is_empty) {
        return Err(Error::shape(
            "task_descriptors",
            format!("session {i} has no prototypes"),
        ));
    }
    let rows: Vec<Vec<f64>> = sessions.iter().flat_map(|s| s.matrix.to_rows()).collect();
    let class_task: Vec<usize> = sessions
        .iter()
        .enumerate()
        .flat_map(|(t, s)| std::iter::repeat_n(t, s.len()))
        .collect();
    let tape = Tape::new();
    let bound = params.bind(&tape)?;
    let protos = tape.constant(Tensor::from_rows(&rows)?)?;
    let u = task_descriptors_tape(&tape, &bound, protos, &class_task, sessions.len())?;
    let out = tape.value(u).clone();
    Ok(out)
}

/// Attention of task `current` (0-based row of `descriptors`) over tasks `0..=current`.
pub fn task_attention(descriptors: &Tensor, current: usize) -> Result<Vec<f64>> {
    if current >= descriptors.rows() {
        return Err(Error::shape(
            "task_attention",
            format!("task {current} of {}", descriptors.rows()),
        ));
    }
    let tape = Tape::new();
    let u = tape.constant(descriptors.clone())?;
    let w = task_attention_tape(&tape, u, current)?;
    let out = tape.value(w).data().to_vec();
    Ok(out)
}

/// Per-class weights for every class of `registry`, in `seen_classes` order.
pub fn expand_class_weights(
    task_weights: &[f64],
    registry: &ClassRegistry,
) -> Result<Vec<(ClassId, f64)>> {
    if registry.num_sessions() < task_weights.len() {
        return Err(Error::shape(
            "expand_class_weights",
            format!(
                "{} task weights for {} sessions",
                task_weights.len(),
                registry.num_sessions()
            ),
        ));
    }
    let mut out = Vec::new();
    for (t, session) in registry
        .sessions()
        .iter()
        .enumerate()
        .take(task_weights.len())
    {
        let share = task_weights[t] / session.classes.len() as f64;
        out.extend(session.classes.iter().map(|&c| (c, share)));
    }
    Ok(out)
}

pub fn node_attention(
    graph: &Graph,
    params: &ParamSet,
    config: &NlaConfig,
    support_ids: &[NodeId],
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let bound = params.bind(&tape)?;
    let a = node_attention_tape(&tape, graph, &bound, config, support_ids)?;
    let out = tape.value(a).data().to_vec();
    Ok(out)
}

pub fn weighted_prototypes(
    embeddings: &Tensor,
    attention: &[f64],
    classes: &[ClassId],
    groups: &[Vec<usize>],
    mode: PrototypeMode,
) -> Result<PrototypeSet> {
    if attention.len() != embeddings.rows() {
        return Err(Error::shape(
            "weighted_prototypes",
            format!("{} weights for {} rows", attention.len(), embeddings.rows()),
        ));
    }
    let tape = Tape::new();
    let z = tape.constant(embeddings.clone())?;
    let a = tape.constant(Tensor::row_vector(attention.to_vec()))?;
    let p = weighted_prototypes_tape(&tape, z, a, groups, mode)?;
    let matrix = tape.value(p).clone();
    PrototypeSet::new(classes.to_vec(), matrix)
}
