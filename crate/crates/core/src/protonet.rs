//! Prototypical GCN: encoder, class prototypes, distance softmax and the
//! class-weighted cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnum::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{ClassId, Graph, NodeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layer_dims: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layer_dims: vec![32, 16],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return Err(Error::Config(
                "encoder needs at least one non-empty layer".into(),
            ));
        }
        Ok(())
    }

    /// Prototype width.
    pub fn out_dim(&self) -> usize {
        *self
            .layer_dims
            .last()
            .expect("validated encoder has layers")
    }

    pub fn weight_name(layer: usize) -> String {
        format!("enc.w{layer}")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("enc.b{layer}")
    }

    pub fn init_params(&self, in_dim: usize, rng: &mut impl Rng) -> Result<ParamSet> {
        self.validate()?;
        let mut params = ParamSet::new();
        let mut prev = in_dim;
        for (l, &dim) in self.layer_dims.iter().enumerate() {
            params.insert_glorot(Self::weight_name(l), prev, dim, rng)?;
            params.insert_zero_bias(Self::bias_name(l), dim)?;
            prev = dim;
        }
        Ok(params)
    }
}

/// Full-graph forward: each layer is `relu(propagate(H) W + b)`.
pub fn encode_all<'g>(
    tape: &Tape<'g>,
    graph: &'g Graph,
    params: &BoundParams,
    config: &EncoderConfig,
) -> Result<Var> {
    let mut h = tape.constant(graph.features().clone())?;
    for l in 0..config.layer_dims.len() {
        let agg = tape.propagate(graph, h)?;
        let lin = tape.matmul(agg, params.var(&EncoderConfig::weight_name(l))?)?;
        let biased = tape.add_row(lin, params.var(&EncoderConfig::bias_name(l))?)?;
        h = tape.relu(biased)?;
    }
    Ok(h)
}

/// Embeddings of `node_ids`, one row each, in the given order.
pub fn encode(
    graph: &Graph,
    params: &ParamSet,
    config: &EncoderConfig,
    node_ids: &[NodeId],
) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = params.bind(&tape)?;
    let z = encode_all(&tape, graph, &bound, config)?;
    let rows = tape.value(z).gather_rows(node_ids)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub classes: Vec<ClassId>,
    pub matrix: Tensor,
}

impl PrototypeSet {
    pub fn new(classes: Vec<ClassId>, matrix: Tensor) -> Result<Self> {
        if classes.len() != matrix.rows() {
            return Err(Error::shape(
                "prototypes",
                format!("{} classes for {} rows", classes.len(), matrix.rows()),
            ));
        }
        if !matrix.all_finite() {
            return Err(Error::NonFinite { op: "prototypes" });
        }
        Ok(PrototypeSet { classes, matrix })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// `classes x rows` matrix averaging the rows listed in each group.
pub fn mean_coefficients(groups: &[Vec<usize>], num_rows: usize) -> Result<Tensor> {
    let mut coef = Tensor::zeros(groups.len(), num_rows);
    for (k, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::shape(
                "mean_prototypes",
                format!("class position {k} has no support rows"),
            ));
        }
        let w = 1.0 / members.len() as f64;
        for &j in members {
            if j >= num_rows {
                return Err(Error::shape(
                    "mean_prototypes",
                    format!("row {j} out of range"),
                ));
            }
            coef.set(k, j, coef.get(k, j) + w);
        }
    }
    Ok(coef)
}

/// `p_k = mean of the embedding rows in group k`.
pub fn mean_prototypes(
    embeddings: &Tensor,
    classes: &[ClassId],
    groups: &[Vec<usize>],
) -> Result<PrototypeSet> {
    if classes.len() != groups.len() {
        return Err(Error::shape(
            "mean_prototypes",
            "one row group per class required",
        ));
    }
    let coef = mean_coefficients(groups, embeddings.rows())?;
    PrototypeSet::new(classes.to_vec(), coef.matmul(embeddings)?)
}

/// Negative squared distances from each query to each prototype.
pub fn distance_logits(tape: &Tape<'_>, queries: Var, prototypes: Var) -> Result<Var> {
    let d = tape.pairwise_sq_dist(queries, prototypes)?;
    tape.scale(d, -1.0)
}

/// `p(y = k | q) = softmax_k(-||z_q - p_k||^2)`, one row per query.
pub fn classify(queries: &Tensor, prototypes: &PrototypeSet) -> Result<Tensor> {
    Ok(queries
        .pairwise_sq_dist(&prototypes.matrix)?
        .scale(-1.0)
        .softmax_rows())
}

/// Mean over queries of `(1 + w[y]) * -log p(y | q)`.
pub fn weighted_cross_entropy(
    distributions: &Tensor,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<f64> {
    if labels.len() != distributions.rows() || labels.is_empty() {
        return Err(Error::shape(
            "weighted_cross_entropy",
            format!("{} labels for {} rows", labels.len(), distributions.rows()),
        ));
    }
    if class_weights.len() != distributions.cols() {
        return Err(Error::shape(
            "weighted_cross_entropy",
            format!(
                "{} weights for {} classes",
                class_weights.len(),
                distributions.cols()
            ),
        ));
    }
    let mut total = 0.0;
    for (q, &y) in labels.iter().enumerate() {
        if y >= distributions.cols() {
            return Err(Error::shape(
                "weighted_cross_entropy",
                format!("label {y} outside the class set"),
            ));
        }
        total += (1.0 + class_weights[y]) * -distributions.get(q, y).ln();
    }
    let loss = total / labels.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: "weighted_cross_entropy",
        });
    }
    Ok(loss)
}

/// Row-wise argmax, lowest index on ties.
pub fn predict(scores: &Tensor) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            scores
                .row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}
