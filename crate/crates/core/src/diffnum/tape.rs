//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! The op set is fixed to what the models need. Each op computes its value
//! eagerly and records enough to run its pullback; `backward` walks the tape
//! once in reverse.

use std::cell::{Ref, RefCell};

use indexmap::IndexMap;

use super::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Gradients of a scalar with respect to every named parameter leaf.
pub type Gradients = IndexMap<String, Tensor>;

enum Op<'g> {
    Param(String),
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Sum(Var),
    Propagate(Var, &'g Graph),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    PairwiseSqDist(Var, Var),
    GroupWeights {
        weights: Var,
        groups: Vec<Vec<usize>>,
        normalize: bool,
    },
    WeightedNll {
        logits: Var,
        labels: Vec<usize>,
        class_weights: Var,
    },
    WeightedBinaryCe {
        probs: Var,
        labels: Vec<usize>,
        class_weights: Var,
    },
}

struct Node<'g> {
    value: Tensor,
    op: Op<'g>,
}

#[derive(Default)]
pub struct Tape<'g> {
    nodes: RefCell<Vec<Node<'g>>>,
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op<'g>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Ok(Var(nodes.len() - 1))
    }

    /// Differentiable leaf; its gradient is reported under `name`.
    pub fn param(&self, name: impl Into<String>, value: &Tensor) -> Result<Var> {
        self.push("param", value.clone(), Op::Param(name.into()))
    }

    pub fn constant(&self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(&self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(&self.value(b))?;
        self.push("add", value, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let value = {
            let (x, b) = (self.value(a), self.value(row));
            if b.rows() != 1 || b.cols() != x.cols() {
                return Err(Error::shape(
                    "add_row",
                    format!(
                        "row {}x{} for matrix {}x{}",
                        b.rows(),
                        b.cols(),
                        x.rows(),
                        x.cols()
                    ),
                ));
            }
            let mut out = x.clone();
            for r in 0..out.rows() {
                for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        self.push("add_row", value, Op::AddRow(a, row))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(&self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).scale(factor);
        self.push("scale", value, Op::Scale(a, factor))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push("relu", value, Op::Relu(a))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.push("log", value, Op::Log(a))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a))
    }

    pub fn propagate(&self, graph: &'g Graph, a: Var) -> Result<Var> {
        let value = graph.propagate(&self.value(a))?;
        self.push("propagate", value, Op::Propagate(a, graph))
    }

    pub fn gather_rows(&self, a: Var, rows: &[usize]) -> Result<Var> {
        let value = self.value(a).gather_rows(rows)?;
        self.push("gather_rows", value, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax_rows();
        self.push("softmax_rows", value, Op::SoftmaxRows(a))
    }

    pub fn pairwise_sq_dist(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).pairwise_sq_dist(&self.value(b))?;
        self.push("pairwise_sq_dist", value, Op::PairwiseSqDist(a, b))
    }

    /// Spreads a weight vector (one entry per item) into a `groups x items`
    /// coefficient matrix. Row `g` holds the weights of the items in
    /// `groups[g]` and zeros elsewhere; with `normalize` each row is divided
    /// by its own total so it sums to one.
    pub fn group_weights(
        &self,
        weights: Var,
        groups: &[Vec<usize>],
        normalize: bool,
    ) -> Result<Var> {
        let value = {
            let w = self.value(weights);
            let n = w.len();
            let mut out = Tensor::zeros(groups.len(), n);
            for (g, members) in groups.iter().enumerate() {
                if members.is_empty() {
                    return Err(Error::shape("group_weights", format!("group {g} is empty")));
                }
                let mut total = 0.0;
                for &j in members {
                    if j >= n {
                        return Err(Error::shape(
                            "group_weights",
                            format!("item {j} out of range for {n} weights"),
                        ));
                    }
                    total += w.data()[j];
                }
                if normalize && total == 0.0 {
                    return Err(Error::NonFinite {
                        op: "group_weights",
                    });
                }
                for &j in members {
                    let wj = w.data()[j];
                    out.set(g, j, if normalize { wj / total } else { wj });
                }
            }
            out
        };
        self.push(
            "group_weights",
            value,
            Op::GroupWeights {
                weights,
                groups: groups.to_vec(),
                normalize,
            },
        )
    }

    /// Mean over rows of `(1 + w[y_q]) * -log softmax(logits_q)[y_q]`.
    pub fn weighted_nll(&self, logits: Var, labels: &[usize], class_weights: Var) -> Result<Var> {
        let value = {
            let (z, w) = (self.value(logits), self.value(class_weights));
            check_loss_inputs("weighted_nll", &z, labels, &w)?;
            let mut total = 0.0;
            for (q, &y) in labels.iter().enumerate() {
                total += (1.0 + w.data()[y]) * -log_softmax_at(z.row(q), y);
            }
            Tensor::scalar(total / labels.len() as f64)
        };
        self.push(
            "weighted_nll",
            value,
            Op::WeightedNll {
                logits,
                labels: labels.to_vec(),
                class_weights,
            },
        )
    }

    /// Mean over rows of `sum_k (1 + w_k) * -[y_k log p_k + (1 - y_k) log(1 - p_k)]`.
    pub fn weighted_binary_ce(
        &self,
        probs: Var,
        labels: &[usize],
        class_weights: Var,
    ) -> Result<Var> {
        let value = {
            let (p, w) = (self.value(probs), self.value(class_weights));
            check_loss_inputs("weighted_binary_ce", &p, labels, &w)?;
            let mut total = 0.0;
            for (q, &y) in labels.iter().enumerate() {
                for (k, &pk) in p.row(q).iter().enumerate() {
                    let term = if k == y { pk.ln() } else { (1.0 - pk).ln() };
                    total -= (1.0 + w.data()[k]) * term;
                }
            }
            Tensor::scalar(total / labels.len() as f64)
        };
        self.push(
            "weighted_binary_ce",
            value,
            Op::WeightedBinaryCe {
                probs,
                labels: labels.to_vec(),
                class_weights,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    /// Leaves that do not influence `loss` get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::shape("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Param(_) | Op::Constant => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul(&val(*b).transpose())?);
                    acc(*b, val(*a).transpose().matmul(&g)?);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, row) => {
                    let mut col_sums = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, x) in col_sums.data_mut().iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                    acc(*row, col_sums);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(val(*b), "mul", |x, y| x * y)?);
                    acc(*b, g.zip_map(val(*a), "mul", |x, y| x * y)?);
                }
                Op::Scale(a, factor) => acc(*a, g.scale(*factor)),
                Op::Relu(a) => {
                    acc(
                        *a,
                        g.zip_map(val(*a), "relu", |gx, x| if x > 0.0 { gx } else { 0.0 })?,
                    );
                }
                Op::Sigmoid(a) => {
                    acc(
                        *a,
                        g.zip_map(&node.value, "sigmoid", |gx, s| gx * s * (1.0 - s))?,
                    );
                }
                Op::Log(a) => acc(*a, g.zip_map(val(*a), "log", |gx, x| gx / x)?),
                Op::Sum(a) => {
                    let x = val(*a);
                    acc(*a, Tensor::filled(x.rows(), x.cols(), g.data()[0]));
                }
                Op::Propagate(a, graph) => acc(*a, graph.propagate(&g)?),
                Op::GatherRows(a, rows) => {
                    let x = val(*a);
                    let mut out = Tensor::zeros(x.rows(), x.cols());
                    for (i_out, &r) in rows.iter().enumerate() {
                        for (o, gx) in out.row_mut(r).iter_mut().zip(g.row(i_out)) {
                            *o += gx;
                        }
                    }
                    acc(*a, out);
                }
                Op::SoftmaxRows(a) => {
                    let s = &node.value;
                    let mut out = Tensor::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let dot: f64 = s.row(r).iter().zip(g.row(r)).map(|(p, gx)| p * gx).sum();
                        for ((o, p), gx) in out.row_mut(r).iter_mut().zip(s.row(r)).zip(g.row(r)) {
                            *o = p * (gx - dot);
                        }
                    }
                    acc(*a, out);
                }
                Op::PairwiseSqDist(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    let mut gb = Tensor::zeros(y.rows(), y.cols());
                    for i_row in 0..x.rows() {
                        for j_row in 0..y.rows() {
                            let gij = g.get(i_row, j_row);
                            if gij == 0.0 {
                                continue;
                            }
                            for c in 0..x.cols() {
                                let d = 2.0 * gij * (x.get(i_row, c) - y.get(j_row, c));
                                ga.row_mut(i_row)[c] += d;
                                gb.row_mut(j_row)[c] -= d;
                            }
                        }
                    }
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::GroupWeights {
                    weights,
                    groups,
                    normalize,
                } => {
                    let w = val(*weights);
                    let mut out = Tensor::zeros(w.rows(), w.cols());
                    for (grp, members) in groups.iter().enumerate() {
                        if *normalize {
                            let total: f64 = members.iter().map(|&j| w.data()[j]).sum();
                            let weighted: f64 =
                                members.iter().map(|&j| g.get(grp, j) * w.data()[j]).sum();
                            for &j in members {
                                out.data_mut()[j] +=
                                    g.get(grp, j) / total - weighted / (total * total);
                            }
                        } else {
                            for &j in members {
                                out.data_mut()[j] += g.get(grp, j);
                            }
                        }
                    }
                    acc(*weights, out);
                }
                Op::WeightedNll {
                    logits,
                    labels,
                    class_weights,
                } => {
                    let (z, w) = (val(*logits), val(*class_weights));
                    let scale = g.data()[0] / labels.len() as f64;
                    let mut gz = Tensor::zeros(z.rows(), z.cols());
                    let mut gw = Tensor::zeros(w.rows(), w.cols());
                    for (q, &y) in labels.iter().enumerate() {
                        let factor = 1.0 + w.data()[y];
                        let probs = softmax(z.row(q));
                        for (k, (o, p)) in gz.row_mut(q).iter_mut().zip(&probs).enumerate() {
                            let indicator = if k == y { 1.0 } else { 0.0 };
                            *o = scale * factor * (p - indicator);
                        }
                        gw.data_mut()[y] += scale * -log_softmax_at(z.row(q), y);
                    }
                    acc(*logits, gz);
                    acc(*class_weights, gw);
                }
                Op::WeightedBinaryCe {
                    probs,
                    labels,
                    class_weights,
                } => {
                    let (p, w) = (val(*probs), val(*class_weights));
                    let scale = g.data()[0] / labels.len() as f64;
                    let mut gp = Tensor::zeros(p.rows(), p.cols());
                    let mut gw = Tensor::zeros(w.rows(), w.cols());
                    for (q, &y) in labels.iter().enumerate() {
                        for (k, &pk) in p.row(q).iter().enumerate() {
                            let factor = 1.0 + w.data()[k];
                            let (term, dterm) = if k == y {
                                (pk.ln(), 1.0 / pk)
                            } else {
                                ((1.0 - pk).ln(), -1.0 / (1.0 - pk))
                            };
                            gp.set(q, k, -scale * factor * dterm);
                            gw.data_mut()[k] -= scale * term;
                        }
                    }
                    acc(*probs, gp);
                    acc(*class_weights, gw);
                }
            }
        }

        let mut out = Gradients::new();
        for (i, node) in nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                match out.get_mut(name) {
                    Some(existing) => existing.add_assign(&g),
                    None => {
                        out.insert(name.clone(), reshape_like(g, &node.value));
                    }
                }
            }
        }
        if out.values().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(out)
    }
}

fn reshape_like(g: Tensor, like: &Tensor) -> Tensor {
    if g.shape() == like.shape() {
        g
    } else {
        Tensor::new(like.shape().to_vec(), g.into_data()).expect("gradient size matches its leaf")
    }
}

fn check_loss_inputs(
    op: &'static str,
    scores: &Tensor,
    labels: &[usize],
    weights: &Tensor,
) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::shape(op, "no labels"));
    }
    if scores.rows() != labels.len() {
        return Err(Error::shape(
            op,
            format!("{} rows for {} labels", scores.rows(), labels.len()),
        ));
    }
    if weights.len() != scores.cols() {
        return Err(Error::shape(
            op,
            format!(
                "{} class weights for {} classes",
                weights.len(),
                scores.cols()
            ),
        ));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= scores.cols()) {
        return Err(Error::shape(
            op,
            format!("label {y} outside {} classes", scores.cols()),
        ));
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[k] - lse
}
