//! End-to-end experiment driver: supervised pre-training of the encoder,
//! pseudo-incremental meta-training, the evaluation session stream with
//! fine-tuning, and forgetting metrics.

use serde::{Deserialize, Serialize};

use crate::diffnum::{adam_step, forward_backward, AdamConfig, AdamState, ParamSet, Tape, Tensor};
use crate::episodes::{
    eval_session_stream, EpisodeShape, EpisodeTask, MetaEpisodeSampler, StreamKind,
};
use crate::error::{Error, Result};
use crate::graph::{ClassId, Graph};
use crate::model::{session_forward, ModelConfig, ModelState};
use crate::protonet::{encode_all, predict, EncoderConfig};
use crate::rng::stream_rng;
use crate::splits::{make_splits, DataSplits, NodeFractions, SplitSpec};

/// Class counts per role; the split seed comes from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub n_base: usize,
    pub n_novel_tr: usize,
    #[serde(default)]
    pub n_novel_val: usize,
    pub n_novel_test: usize,
    #[serde(default)]
    pub node_fractions: NodeFractions,
    #[serde(default)]
    pub min_class_nodes: usize,
}

impl SplitConfig {
    pub fn to_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            n_base: self.n_base,
            n_novel_tr: self.n_novel_tr,
            n_novel_val: self.n_novel_val,
            n_novel_test: self.n_novel_test,
            node_fractions: self.node_fractions,
            min_class_nodes: self.min_class_nodes,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Runs use seeds `seed, seed + 1, ...`.
    #[serde(default = "defaults::num_seeds")]
    pub num_seeds: usize,
    pub split: SplitConfig,
    pub n_way: usize,
    pub k_shot: usize,
    /// Query nodes per seen class in every session.
    pub query_k: usize,
    #[serde(default = "defaults::meta_episodes")]
    pub meta_episodes: usize,
    #[serde(default = "defaults::one")]
    pub meta_steps_per_episode: usize,
    pub eval_sessions: usize,
    #[serde(default = "defaults::finetune_steps")]
    pub finetune_steps: usize,
    #[serde(default = "defaults::pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    /// Meta-training episodes between two validation checks.
    #[serde(default = "defaults::validation_interval")]
    pub validation_interval: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Evaluation sessions treat the pseudo-novel classes as extra base classes.
    #[serde(default)]
    pub novel_tr_as_base: bool,
}

mod defaults {
    pub fn num_seeds() -> usize {
        10
    }
    pub fn meta_episodes() -> usize {
        1000
    }
    pub fn one() -> usize {
        1
    }
    pub fn finetune_steps() -> usize {
        20
    }
    pub fn pretrain_epochs() -> usize {
        200
    }
    pub fn patience() -> usize {
        10
    }
    pub fn validation_interval() -> usize {
        50
    }
}

impl RunConfig {
    /// Defaults for everything not given.
    pub fn new(
        split: SplitConfig,
        n_way: usize,
        k_shot: usize,
        query_k: usize,
        eval_sessions: usize,
    ) -> Self {
        RunConfig {
            seed: 0,
            num_seeds: defaults::num_seeds(),
            split,
            n_way,
            k_shot,
            query_k,
            meta_episodes: defaults::meta_episodes(),
            meta_steps_per_episode: 1,
            eval_sessions,
            finetune_steps: defaults::finetune_steps(),
            pretrain_epochs: defaults::pretrain_epochs(),
            patience: defaults::patience(),
            validation_interval: defaults::validation_interval(),
            optimizer: AdamConfig::default(),
            model: ModelConfig::default(),
            novel_tr_as_base: false,
        }
    }

    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape {
            n_way: self.n_way,
            k_shot: self.k_shot,
            query_k: self.query_k,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.num_seeds as u64)
            .map(|i| self.seed.wrapping_add(i))
            .collect()
    }

    /// Checks everything that can be checked without the graph.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("num_seeds", self.num_seeds),
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("query_k", self.query_k),
            ("eval_sessions", self.eval_sessions),
            ("meta_steps_per_episode", self.meta_steps_per_episode),
            ("pretrain_epochs", self.pretrain_epochs),
            ("patience", self.patience),
            ("validation_interval", self.validation_interval),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        self.split.to_spec(self.seed).validate()?;
        if self.split.n_novel_tr < self.n_way {
            return bad(format!(
                "{}-way sessions need at least {} pseudo-novel classes, got {}",
                self.n_way, self.n_way, self.split.n_novel_tr
            ));
        }
        if self.eval_sessions * self.n_way > self.split.n_novel_test {
            return bad(format!(
                "{} evaluation sessions of {} classes need {} novel test classes, got {}",
                self.eval_sessions,
                self.n_way,
                self.eval_sessions * self.n_way,
                self.split.n_novel_test
            ));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite())
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.eps > 0.0)
            || !(o.weight_decay >= 0.0)
        {
            return bad("optimizer hyperparameters out of range".into());
        }
        self.model.validate()
    }

    /// Sessions in the validation stream; zero disables early stopping.
    pub fn validation_sessions(&self) -> usize {
        self.eval_sessions.min(self.split.n_novel_val / self.n_way)
    }
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainOutcome {
    #[serde(skip)]
    pub encoder: ParamSet,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    pub val_accuracies: Vec<f64>,
}

fn head_logits<'g>(
    tape: &Tape<'g>,
    graph: &'g Graph,
    bound: &crate::diffnum::BoundParams,
    encoder: &EncoderConfig,
    nodes: &[usize],
) -> Result<crate::diffnum::Var> {
    let z = encode_all(tape, graph, bound, encoder)?;
    let rows = tape.gather_rows(z, nodes)?;
    let lin = tape.matmul(rows, bound.var("head.w")?)?;
    tape.add_row(lin, bound.var("head.b")?)
}

/// Supervised training of the encoder with a linear head on the base
/// training nodes, evaluation classes masked out. Stops once base/val
/// accuracy has not improved for more than `patience` epochs and returns
/// the encoder of the best epoch.
pub fn pretrain(
    graph: &Graph,
    splits: &DataSplits,
    config: &RunConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    let train_graph = graph.mask_nodes(&splits.masked);
    let enc_cfg = &config.model.encoder;
    let mut params =
        enc_cfg.init_params(graph.feature_dim(), &mut stream_rng(seed, "init-encoder"))?;
    let n_classes = splits.base_classes.len();
    let mut head_rng = stream_rng(seed, "init-head");
    params.insert_glorot("head.w", enc_cfg.out_dim(), n_classes, &mut head_rng)?;
    params.insert_zero_bias("head.b", n_classes)?;

    let position = |c: ClassId| splits.base_classes.binary_search(&c).expect("base class");
    let labelled = |split: &std::collections::BTreeMap<ClassId, Vec<usize>>| {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for (&c, nodes) in split {
            ids.extend_from_slice(nodes);
            labels.extend(std::iter::repeat_n(position(c), nodes.len()));
        }
        (ids, labels)
    };
    let (train_ids, train_labels) = labelled(&splits.base_train);
    let (val_ids, val_labels) = labelled(&splits.base_val);
    if train_ids.is_empty() {
        return Err(Error::Split("no base training nodes".into()));
    }

    let mut opt = AdamState::new(config.optimizer.clone());
    let zero_weights = Tensor::zeros(1, n_classes);
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0usize;
    let mut train_losses = Vec::new();
    let mut val_accuracies = Vec::new();
    for epoch in 0..config.pretrain_epochs {
        let (loss, grads) = forward_backward(&params, |tape, bound| {
            let logits = head_logits(tape, &train_graph, bound, enc_cfg, &train_ids)?;
            let w = tape.constant(zero_weights.clone())?;
            tape.weighted_nll(logits, &train_labels, w)
        })
        .map_err(|e| e.in_stage("pretrain", epoch))?;
        adam_step(&mut params, &grads, &mut opt).map_err(|e| e.in_stage("pretrain", epoch))?;
        train_losses.push(loss);

        let acc = if val_ids.is_empty() {
            0.0
        } else {
            let tape = Tape::new();
            let bound = params.bind(&tape)?;
            let logits = head_logits(&tape, &train_graph, &bound, enc_cfg, &val_ids)?;
            let pred = predict(&tape.value(logits));
            percent(
                pred.iter().zip(&val_labels).filter(|(p, y)| p == y).count(),
                val_ids.len(),
            )
        };
        val_accuracies.push(acc);
        if acc > best.2 {
            best = (params.clone(), epoch, acc);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    Ok(PretrainOutcome {
        encoder: best.0.subset("enc."),
        best_epoch: best.1,
        best_val_accuracy: best.2,
        epochs_run: train_losses.len(),
        train_losses,
        val_accuracies,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub class: ClassId,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionOutcome {
    pub session_index: usize,
    pub classes: Vec<ClassId>,
    /// Loss before any update in this session.
    pub initial_loss: f64,
    /// Loss of the returned state.
    pub final_loss: f64,
    pub correct: usize,
    pub total: usize,
    /// Query accuracy over all seen classes, in percent.
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub task_weights: Vec<f64>,
    pub class_weights: Vec<f64>,
    /// Predicted class position per query, in query order.
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

struct ForwardValues {
    loss: f64,
    logits: Tensor,
    task_weights: Vec<f64>,
    class_weights: Vec<f64>,
    labels: Vec<usize>,
}

fn forward_values(graph: &Graph, state: &ModelState, task: &EpisodeTask) -> Result<ForwardValues> {
    let tape = Tape::new();
    let bound = state.params.bind(&tape)?;
    let out = session_forward(&tape, graph, &bound, &state.config, task)?;
    let loss = tape.value(out.loss).data()[0];
    let logits = tape.value(out.logits).clone();
    let task_weights = tape.value(out.task_weights).data().to_vec();
    let class_weights = tape.value(out.class_weights).data().to_vec();
    Ok(ForwardValues {
        loss,
        logits,
        task_weights,
        class_weights,
        labels: out.labels,
    })
}

/// Optimizer and step count for a training session.
pub struct Training<'a> {
    pub optimizer: &'a mut AdamState,
    pub steps: usize,
}

/// One incremental session. With `training`, runs that many Adam steps on
/// the session loss over every parameter group; accuracy is measured on the
/// queries after the updates. Without it the state is left untouched.
pub fn incremental_session(
    graph: &Graph,
    task: &EpisodeTask,
    state: &mut ModelState,
    training: Option<Training<'_>>,
) -> Result<SessionOutcome> {
    task.check_invariants()?;
    let config = state.config.clone();
    let mut initial_loss = None;
    if let Some(Training { optimizer, steps }) = training {
        for _ in 0..steps {
            let (loss, grads) = forward_backward(&state.params, |tape, bound| {
                Ok(session_forward(tape, graph, bound, &config, task)?.loss)
            })?;
            initial_loss.get_or_insert(loss);
            adam_step(&mut state.params, &grads, optimizer)?;
        }
    }
    let values = forward_values(graph, state, task)?;
    let predictions = predict(&values.logits);
    let classes = task.classes();
    let mut per_class: Vec<ClassAccuracy> = classes
        .iter()
        .map(|&class| ClassAccuracy {
            class,
            correct: 0,
            total: 0,
            accuracy: 0.0,
        })
        .collect();
    for (&p, &y) in predictions.iter().zip(&values.labels) {
        per_class[y].total += 1;
        if p == y {
            per_class[y].correct += 1;
        }
    }
    for c in &mut per_class {
        c.accuracy = percent(c.correct, c.total);
    }
    let correct = per_class.iter().map(|c| c.correct).sum();
    let total = values.labels.len();
    Ok(SessionOutcome {
        session_index: task.session_index,
        classes,
        initial_loss: initial_loss.unwrap_or(values.loss),
        final_loss: values.loss,
        correct,
        total,
        accuracy: percent(correct, total),
        per_class,
        task_weights: values.task_weights,
        class_weights: values.class_weights,
        predictions,
        labels: values.labels,
    })
}

/// Runs a session stream on a copy of `state`, fine-tuning in each session
/// with a fresh optimizer shared across the stream.
pub fn run_session_stream(
    graph: &Graph,
    tasks: &[EpisodeTask],
    state: &ModelState,
    optimizer: &AdamConfig,
    finetune_steps: usize,
) -> Result<(ModelState, Vec<SessionOutcome>)> {
    let mut state = state.clone();
    let mut opt = AdamState::new(optimizer.clone());
    let mut outcomes = Vec::with_capacity(tasks.len());
    for task in tasks {
        outcomes.push(incremental_session(
            graph,
            task,
            &mut state,
            Some(Training {
                optimizer: &mut opt,
                steps: finetune_steps,
            }),
        )?);
    }
    Ok((state, outcomes))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub session_index: usize,
    pub num_classes: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub task_weights: Vec<f64>,
    pub class_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub episode: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetaOutcome {
    #[serde(skip)]
    pub state: ModelState,
    /// Accuracy of the last meta-training session of the returned state, percent.
    pub initial_accuracy: f64,
    pub episodes_run: usize,
    pub resets: usize,
    /// Episode count at the returned checkpoint when validation was used.
    pub best_episode: Option<usize>,
    pub validation: Vec<ValidationCheck>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRecord>,
}

/// Pseudo-incremental meta-training on the graph with evaluation classes
/// masked. When a validation stream is available, checks it every
/// `validation_interval` episodes, keeps the best state and stops after
/// more than `patience` checks without improvement.
pub fn meta_train(
    graph: &Graph,
    splits: &DataSplits,
    encoder: &ParamSet,
    config: &RunConfig,
    seed: u64,
) -> Result<MetaOutcome> {
    let train_graph = graph.mask_nodes(&splits.masked);
    let mut state =
        ModelState::with_encoder(&config.model, encoder.clone(), graph.feature_dim(), seed)?;
    let mut sampler = MetaEpisodeSampler::new(splits, config.shape(), seed)?;

    if config.meta_episodes == 0 {
        let task = sampler.next_episode()?;
        let out = incremental_session(&train_graph, &task, &mut state, None)?;
        return Ok(MetaOutcome {
            state,
            initial_accuracy: out.accuracy,
            episodes_run: 0,
            resets: 0,
            best_episode: None,
            validation: Vec::new(),
            episodes: Vec::new(),
        });
    }

    let val_sessions = config.validation_sessions();
    let val_tasks = if val_sessions > 0 {
        eval_session_stream(
            splits,
            config.shape(),
            val_sessions,
            StreamKind::Validation,
            config.novel_tr_as_base,
            seed,
        )?
    } else {
        Vec::new()
    };

    let mut opt = AdamState::new(config.optimizer.clone());
    let mut episodes = Vec::with_capacity(config.meta_episodes);
    let mut validation = Vec::new();
    let mut best: Option<(ModelState, usize, f64, f64, usize)> = None;
    let mut since_best = 0usize;
    let mut last_accuracy = 0.0;
    for ep in 0..config.meta_episodes {
        let task = sampler
            .next_episode()
            .map_err(|e| e.in_stage("meta-train", ep))?;
        let out = incremental_session(
            &train_graph,
            &task,
            &mut state,
            Some(Training {
                optimizer: &mut opt,
                steps: config.meta_steps_per_episode,
            }),
        )
        .map_err(|e| e.in_stage("meta-train", ep))?;
        last_accuracy = out.accuracy;
        episodes.push(EpisodeRecord {
            episode: ep,
            session_index: out.session_index,
            num_classes: out.classes.len(),
            loss: out.initial_loss,
            accuracy: out.accuracy,
            task_weights: out.task_weights,
            class_weights: out.class_weights,
        });

        if val_tasks.is_empty() || (ep + 1) % config.validation_interval != 0 {
            continue;
        }
        let (_, outcomes) = run_session_stream(
            &train_graph,
            &val_tasks,
            &state,
            &config.optimizer,
            config.finetune_steps,
        )
        .map_err(|e| e.in_stage("validation", ep))?;
        let acc = outcomes.last().map_or(0.0, |o| o.accuracy);
        validation.push(ValidationCheck {
            episode: ep + 1,
            accuracy: acc,
        });
        if best.as_ref().is_none_or(|b| acc > b.2) {
            best = Some((state.clone(), ep + 1, acc, last_accuracy, sampler.resets()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }

    let episodes_run = episodes.len();
    let (state, best_episode, initial_accuracy, resets) = match best {
        Some((s, ep, _, a0, resets)) => (s, Some(ep), a0, resets),
        None => (state, None, last_accuracy, sampler.resets()),
    };
    Ok(MetaOutcome {
        state,
        initial_accuracy,
        episodes_run,
        resets,
        best_episode,
        validation,
        episodes,
    })
}

/// The evaluation session stream on the full graph, fine-tuning a copy of `state`.
pub fn evaluate(
    graph: &Graph,
    splits: &DataSplits,
    state: &ModelState,
    config: &RunConfig,
    seed: u64,
) -> Result<(ModelState, Vec<SessionOutcome>)> {
    let tasks = eval_session_stream(
        splits,
        config.shape(),
        config.eval_sessions,
        StreamKind::Evaluation,
        config.novel_tr_as_base,
        seed,
    )?;
    run_session_stream(
        graph,
        &tasks,
        state,
        &config.optimizer,
        config.finetune_steps,
    )
    .map_err(|e| e.in_stage("evaluate", 0))
}

/// Performance drop `A^0 - A^T` and relative drop `100 * PD / A^0` (percent).
pub fn compute_pd_rpd(series: &[f64]) -> Result<(f64, f64)> {
    let (Some(&first), Some(&last)) = (series.first(), series.last()) else {
        return Err(Error::Config("empty accuracy series".into()));
    };
    if first == 0.0 {
        return Err(Error::Config(
            "initial accuracy is zero, relative drop undefined".into(),
        ));
    }
    let pd = first - last;
    Ok((pd, 100.0 * pd / first))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub pretrain: PretrainOutcome,
    pub meta: MetaOutcome,
    /// `A^0` (meta-training) followed by one entry per evaluation session.
    pub accuracies: Vec<f64>,
    pub pd: f64,
    pub rpd: f64,
    pub sessions: Vec<SessionOutcome>,
    #[serde(skip)]
    pub final_state: ModelState,
}

/// Splits, pre-training, meta-training and evaluation for one seed.
pub fn run_seed(graph: &Graph, config: &RunConfig, seed: u64) -> Result<SeedRun> {
    let splits = make_splits(graph, &config.split.to_spec(seed))?;
    let pre = pretrain(graph, &splits, config, seed)?;
    run_seed_from_encoder(graph, &splits, pre, config, seed)
}

/// Meta-training and evaluation on top of an existing pre-training result.
pub fn run_seed_from_encoder(
    graph: &Graph,
    splits: &DataSplits,
    pretrain: PretrainOutcome,
    config: &RunConfig,
    seed: u64,
) -> Result<SeedRun> {
    let meta = meta_train(graph, splits, &pretrain.encoder, config, seed)?;
    let (final_state, sessions) = evaluate(graph, splits, &meta.state, config, seed)?;
    let mut accuracies = vec![meta.initial_accuracy];
    accuracies.extend(sessions.iter().map(|s| s.accuracy));
    let (pd, rpd) = compute_pd_rpd(&accuracies).map_err(|e| e.in_stage("metrics", 0))?;
    Ok(SeedRun {
        seed,
        pretrain,
        meta,
        accuracies,
        pd,
        rpd,
        sessions,
        final_state,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionReport {
    pub seeds: Vec<u64>,
    /// One accuracy series per seed.
    pub series: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Sample standard deviation over seeds (zero for a single seed).
    pub std: Vec<f64>,
    /// Drop of the mean series.
    pub pd: f64,
    pub rpd: f64,
    /// Mean over seeds of each seed's own drop.
    pub mean_pd: f64,
    pub mean_rpd: f64,
}

impl SessionReport {
    pub fn from_runs(runs: &[SeedRun]) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Config("no runs to report".into()));
        }
        let len = runs[0].accuracies.len();
        if runs.iter().any(|r| r.accuracies.len() != len) {
            return Err(Error::Config("runs have different session counts".into()));
        }
        let n = runs.len() as f64;
        let mean: Vec<f64> = (0..len)
            .map(|i| runs.iter().map(|r| r.accuracies[i]).sum::<f64>() / n)
            .collect();
        let std = (0..len)
            .map(|i| {
                if runs.len() < 2 {
                    return 0.0;
                }
                let ss: f64 = runs
                    .iter()
                    .map(|r| (r.accuracies[i] - mean[i]).powi(2))
                    .sum();
                (ss / (n - 1.0)).sqrt()
            })
            .collect();
        let (pd, rpd) = compute_pd_rpd(&mean)?;
        Ok(SessionReport {
            seeds: runs.iter().map(|r| r.seed).collect(),
            series: runs.iter().map(|r| r.accuracies.clone()).collect(),
            mean,
            std,
            pd,
            rpd,
            mean_pd: runs.iter().map(|r| r.pd).sum::<f64>() / n,
            mean_rpd: runs.iter().map(|r| r.rpd).sum::<f64>() / n,
        })
    }
}

/// Every seed of `config`, in order.
pub fn run_experiment(graph: &Graph, config: &RunConfig) -> Result<(SessionReport, Vec<SeedRun>)> {
    config.validate()?;
    let runs = config
        .seeds()
        .into_iter()
        .map(|seed| run_seed(graph, config, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok((SessionReport::from_runs(&runs)?, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_rpd_constant_series() {
        assert_eq!(compute_pd_rpd(&[50.0, 50.0, 50.0]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn pd_rpd_rejects_zero_start_and_empty() {
        assert!(compute_pd_rpd(&[0.0, 10.0]).is_err());
        assert!(compute_pd_rpd(&[]).is_err());
    }

    #[test]
    fn pd_rpd_arithmetic() {
        let (pd, rpd) = compute_pd_rpd(&[80.0, 70.0, 60.0]).unwrap();
        assert!((pd - 20.0).abs() < 1e-12);
        assert!((rpd - 25.0).abs() < 1e-12);
    }

    fn config() -> RunConfig {
        RunConfig::new(
            SplitConfig {
                n_base: 4,
                n_novel_tr: 4,
                n_novel_val: 0,
                n_novel_test: 4,
                node_fractions: NodeFractions::default(),
                min_class_nodes: 0,
            },
            2,
            5,
            10,
            2,
        )
    }

    #[test]
    fn config_validation() {
        config().validate().unwrap();
        let mut c = config();
        c.n_way = 5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = config();
        c.eval_sessions = 3;
        assert!(c.validate().is_err());
        let mut c = config();
        c.patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let c = config();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let minimal: RunConfig = serde_json::from_str(
            r#"{"seed":1,"split":{"n_base":4,"n_novel_tr":4,"n_novel_test":4},
                "n_way":2,"k_shot":5,"query_k":10,"eval_sessions":2}"#,
        )
        .unwrap();
        assert_eq!(minimal.meta_episodes, 1000);
        assert_eq!(minimal.num_seeds, 10);
        assert_eq!(minimal.finetune_steps, 20);
        assert_eq!(minimal.patience, 10);
        assert_eq!(minimal.seeds().len(), 10);
    }

    #[test]
    fn report_aggregates_seeds() {
        let run = |seed, acc: Vec<f64>| {
            let (pd, rpd) = compute_pd_rpd(&acc).unwrap();
            SeedRun {
                seed,
                pretrain: PretrainOutcome {
                    encoder: ParamSet::new(),
                    best_epoch: 0,
                    best_val_accuracy: 0.0,
                    epochs_run: 0,
                    train_losses: vec![],
                    val_accuracies: vec![],
                },
                meta: MetaOutcome {
                    state: ModelState {
                        config: ModelConfig::default(),
                        params: ParamSet::new(),
                    },
                    initial_accuracy: acc[0],
                    episodes_run: 0,
                    resets: 0,
                    best_episode: None,
                    validation: vec![],
                    episodes: vec![],
                },
                accuracies: acc,
                pd,
                rpd,
                sessions: vec![],
                final_state: ModelState {
                    config: ModelConfig::default(),
                    params: ParamSet::new(),
                },
            }
        };
        let r = SessionReport::from_runs(&[run(1, vec![80.0, 40.0]), run(2, vec![40.0, 40.0])])
            .unwrap();
        assert_eq!(r.mean, vec![60.0, 40.0]);
        assert!((r.std[0] - 800f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.std[1], 0.0);
        assert!((r.pd - 20.0).abs() < 1e-12);
        assert!((r.mean_rpd - 25.0).abs() < 1e-12);
    }
}
