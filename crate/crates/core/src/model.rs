//! The full session model: encoder, node-level attention over supports,
//! prototypes, task-level attention over sessions, and the scaled loss.

use serde::{Deserialize, Serialize};

use crate::attention::{
    expand_class_weights_tape, node_attention_tape, task_attention_tape, task_descriptors_tape,
    weighted_prototypes_tape, NlaConfig, PrototypeMode, TlaConfig,
};
use crate::diffnum::{BoundParams, Checkpoint, ParamSet, Tape, Tensor, Var};
use crate::episodes::EpisodeTask;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::protonet::{distance_logits, encode_all, mean_coefficients, EncoderConfig};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskWeighting {
    /// Softmax over task-descriptor similarities.
    #[default]
    Learned,
    /// Every seen task weighted `1 / T`.
    Uniform,
    /// No loss scaling: plain cross-entropy.
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeWeighting {
    #[default]
    Learned,
    /// Mean prototypes.
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `(1 + w_y)`-scaled categorical cross-entropy on the true class.
    #[default]
    Categorical,
    /// One-vs-rest binary cross-entropy on the class probabilities, each
    /// class term scaled by `(1 + w_k)`.
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Defaults to hidden and output widths equal to the prototype width.
    pub tla: Option<TlaConfig>,
    pub nla: NlaConfig,
    pub task_weighting: TaskWeighting,
    pub node_weighting: NodeWeighting,
    pub prototype_mode: PrototypeMode,
    pub loss_mode: LossMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            tla: None,
            nla: NlaConfig::default(),
            task_weighting: TaskWeighting::Learned,
            node_weighting: NodeWeighting::Learned,
            prototype_mode: PrototypeMode::PerClass,
            loss_mode: LossMode::Categorical,
        }
    }
}

impl ModelConfig {
    pub fn hag_meta() -> Self {
        ModelConfig::default()
    }

    /// Prototypical GCN without either attention module.
    pub fn proto_gnn() -> Self {
        ModelConfig {
            task_weighting: TaskWeighting::Off,
            node_weighting: NodeWeighting::Uniform,
            ..ModelConfig::default()
        }
    }

    pub fn tla_config(&self) -> TlaConfig {
        self.tla
            .clone()
            .unwrap_or_else(|| TlaConfig::for_prototype_dim(self.encoder.out_dim()))
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let tla = self.tla_config();
        if tla.hidden_dims.contains(&0) || tla.out_dim == 0 {
            return Err(Error::Config(
                "task attention layers must be non-empty".into(),
            ));
        }
        if self.nla.fc_dim == 0 || self.nla.gcn_dims.contains(&0) {
            return Err(Error::Config(
                "node attention layers must be non-empty".into(),
            ));
        }
        if !(self.nla.epsilon > 0.0) || !self.nla.epsilon.is_finite() {
            return Err(Error::Config(
                "node attention epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// All trainable parameters: `enc.*`, plus `tla.*` and `nla.*` when the
/// corresponding attention is learned.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl ModelState {
    /// Fresh parameters for every group.
    pub fn init(config: &ModelConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = config
            .encoder
            .init_params(feature_dim, &mut stream_rng(seed, "init-encoder"))?;
        Self::with_encoder(config, encoder, feature_dim, seed)
    }

    /// Keeps a pre-trained encoder and initializes the attention modules the
    /// config actually uses.
    pub fn with_encoder(
        config: &ModelConfig,
        encoder: ParamSet,
        feature_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = encoder.subset("enc.");
        let h = config.encoder.out_dim();
        if config.task_weighting == TaskWeighting::Learned {
            params.extend(
                config
                    .tla_config()
                    .init_params(h, &mut stream_rng(seed, "init-tla"))?,
            )?;
        }
        if config.node_weighting == NodeWeighting::Learned {
            params.extend(
                config
                    .nla
                    .init_params(feature_dim, &mut stream_rng(seed, "init-nla"))?,
            )?;
        }
        Ok(ModelState {
            config: config.clone(),
            params,
        })
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Result<Checkpoint> {
        Ok(Checkpoint {
            params: self.params.clone(),
            seed,
            step,
            meta: serde_json::json!({ "model": self.config }),
        })
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let config = checkpoint
            .meta
            .get("model")
            .ok_or_else(|| Error::Checkpoint("checkpoint has no model config".into()))?;
        let config: ModelConfig = serde_json::from_value(config.clone())?;
        config.validate()?;
        Ok(ModelState {
            config,
            params: checkpoint.params.clone(),
        })
    }
}

/// Tape handles for one session forward pass.
#[derive(Clone, Debug)]
pub struct SessionForward {
    pub loss: Var,
    /// `queries x classes` negative squared distances.
    pub logits: Var,
    /// Per-class scaling `W_C`, one row.
    pub class_weights: Var,
    /// Per-task weights, one row.
    pub task_weights: Var,
    /// Support attention, one row; absent with uniform node weighting.
    pub node_attention: Option<Var>,
    pub prototypes: Var,
    /// Query label as an index into `task.classes()`.
    pub labels: Vec<usize>,
}

/// Records the whole session loss on `tape`.
pub fn session_forward<'g>(
    tape: &Tape<'g>,
    graph: &'g Graph,
    params: &BoundParams,
    config: &ModelConfig,
    task: &EpisodeTask,
) -> Result<SessionForward> {
    let (support_ids, groups) = task.support_layout();
    let (query_ids, labels) = task.query_layout();
    if query_ids.is_empty() {
        return Err(Error::Sampling("session has no query nodes".into()));
    }
    let z = encode_all(tape, graph, params, &config.encoder)?;
    let z_support = tape.gather_rows(z, &support_ids)?;
    let z_query = tape.gather_rows(z, &query_ids)?;

    let (prototypes, node_attention) = match config.node_weighting {
        NodeWeighting::Learned => {
            let attn = node_attention_tape(tape, graph, params, &config.nla, &support_ids)?;
            let p =
                weighted_prototypes_tape(tape, z_support, attn, &groups, config.prototype_mode)?;
            (p, Some(attn))
        }
        NodeWeighting::Uniform => {
            let coef = tape.constant(mean_coefficients(&groups, support_ids.len())?)?;
            (tape.matmul(coef, z_support)?, None)
        }
    };

    let class_task = task.class_task();
    let num_tasks = task.sessions.len();
    let task_weights = match config.task_weighting {
        TaskWeighting::Learned => {
            let u = task_descriptors_tape(tape, params, prototypes, &class_task, num_tasks)?;
            task_attention_tape(tape, u, num_tasks - 1)?
        }
        TaskWeighting::Uniform => {
            tape.constant(Tensor::filled(1, num_tasks, 1.0 / num_tasks as f64))?
        }
        TaskWeighting::Off => tape.constant(Tensor::zeros(1, num_tasks))?,
    };
    let class_weights = match config.task_weighting {
        TaskWeighting::Off => tape.constant(Tensor::zeros(1, class_task.len()))?,
        _ => expand_class_weights_tape(tape, task_weights, &class_task)?,
    };

    let logits = distance_logits(tape, z_query, prototypes)?;
    let loss = match config.loss_mode {
        LossMode::Categorical => tape.weighted_nll(logits, &labels, class_weights)?,
        LossMode::Binary => {
            let probs = tape.softmax_rows(logits)?;
            tape.weighted_binary_ce(probs, &labels, class_weights)?
        }
    };
    Ok(SessionForward {
        loss,
        logits,
        class_weights,
        task_weights,
        node_attention,
        prototypes,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let mut c = ModelConfig::proto_gnn();
        c.prototype_mode = PrototypeMode::Global;
        c.loss_mode = LossMode::Binary;
        let text = serde_json::to_string(&c).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"task_weighting":"uniform"}"#).unwrap();
        assert_eq!(c.task_weighting, TaskWeighting::Uniform);
        assert_eq!(c.encoder.layer_dims, vec![32, 16]);
        assert_eq!(c.tla_config().out_dim, 16);
    }

    #[test]
    fn init_is_seeded_and_grouped() {
        let c = ModelConfig::default();
        let a = ModelState::init(&c, 8, 3).unwrap();
        let b = ModelState::init(&c, 8, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelState::init(&c, 8, 4).unwrap());
        let names: Vec<&str> = a.params.names().collect();
        assert!(names.iter().any(|n| n.starts_with("enc.")));
        assert!(names.iter().any(|n| n.starts_with("tla.")));
        assert!(names.iter().any(|n| n.starts_with("nla.")));
        let base = ModelState::init(&ModelConfig::proto_gnn(), 8, 3).unwrap();
        assert!(base.params.names().all(|n| n.starts_with("enc.")));
        assert_eq!(base.params.subset("enc."), a.params.subset("enc."));
    }

    #[test]
    fn checkpoint_restores_state() {
        let s = ModelState::init(&ModelConfig::default(), 5, 1).unwrap();
        let ck = s.to_checkpoint(1, 7).unwrap();
        let back =
            ModelState::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap())
                .unwrap();
        assert_eq!(back, s);
    }
}
