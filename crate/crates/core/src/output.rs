//! Result files: per-session and per-episode CSV, the JSON summary and
//! embedding export. Every file is written atomically.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::diffnum::Tensor;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::graph::{Graph, NodeId};
use crate::harness::{
    EpisodeRecord, MetaOutcome, PretrainOutcome, RunConfig, SeedRun, SessionReport,
};
use crate::model::ModelState;
use crate::protonet::encode;

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// `node_id,class,e0,...` with class `-1` for unlabeled nodes.
pub fn embeddings_csv(
    graph: &Graph,
    node_ids: &[NodeId],
    embeddings: &Tensor,
    dim: usize,
) -> Result<String> {
    if embeddings.rows() != node_ids.len() || (!node_ids.is_empty() && embeddings.cols() != dim) {
        return Err(Error::shape(
            "embeddings_csv",
            "embedding rows do not match node ids",
        ));
    }
    let mut out = String::from("node_id,class");
    for i in 0..dim {
        write!(out, ",e{i}").expect("write to string");
    }
    out.push('\n');
    for (r, &v) in node_ids.iter().enumerate() {
        let class = graph.label(v).map_or(-1, |c| c as i64);
        write!(out, "{v},{class}").expect("write to string");
        for x in embeddings.row(r) {
            write!(out, ",{x}").expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Encodes `node_ids` with the state's encoder and writes them as CSV.
pub fn export_embeddings(
    state: &ModelState,
    graph: &Graph,
    node_ids: &[NodeId],
    path: &Path,
) -> Result<()> {
    if let Some(&v) = node_ids.iter().find(|&&v| v >= graph.num_nodes()) {
        return Err(Error::Config(format!("node {v} is not in the graph")));
    }
    let dim = state.config.encoder.out_dim();
    let emb = if node_ids.is_empty() {
        Tensor::zeros(0, dim)
    } else {
        encode(graph, &state.params, &state.config.encoder, node_ids)?
    };
    write_atomic(path, embeddings_csv(graph, node_ids, &emb, dim)?.as_bytes())
}

/// One `class = all` row per session with the overall accuracy, followed by
/// one row per seen class.
pub fn sessions_csv(runs: &[SeedRun]) -> String {
    let mut out = String::from("seed,session,class,correct,total,accuracy\n");
    for run in runs {
        for s in &run.sessions {
            writeln!(
                out,
                "{},{},all,{},{},{}",
                run.seed, s.session_index, s.correct, s.total, s.accuracy
            )
            .expect("write to string");
            for c in &s.per_class {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    run.seed, s.session_index, c.class, c.correct, c.total, c.accuracy
                )
                .expect("write to string");
            }
        }
    }
    out
}

/// Task weights and per-class loss factors of every meta-training episode.
pub fn episodes_csv(seed: u64, episodes: &[EpisodeRecord]) -> String {
    let mut out =
        String::from("seed,episode,session,num_classes,loss,accuracy,task_weights,class_weights\n");
    for e in episodes {
        writeln!(
            out,
            "{seed},{},{},{},{},{},{},{}",
            e.episode,
            e.session_index,
            e.num_classes,
            e.loss,
            e.accuracy,
            join(&e.task_weights),
            join(&e.class_weights)
        )
        .expect("write to string");
    }
    out
}

#[derive(Serialize)]
struct RunSummary<'a> {
    seed: u64,
    accuracies: &'a [f64],
    pd: f64,
    rpd: f64,
    pretrain: PretrainSummary,
    meta: &'a MetaOutcome,
}

#[derive(Serialize)]
struct PretrainSummary {
    best_epoch: usize,
    best_val_accuracy: f64,
    epochs_run: usize,
}

impl From<&PretrainOutcome> for PretrainSummary {
    fn from(p: &PretrainOutcome) -> Self {
        PretrainSummary {
            best_epoch: p.best_epoch,
            best_val_accuracy: p.best_val_accuracy,
            epochs_run: p.epochs_run,
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    report: &'a SessionReport,
    runs: Vec<RunSummary<'a>>,
}

/// Pretty JSON with the config echo, the aggregated report and a short
/// record per seed. Contains no timestamps, so equal runs give equal bytes.
pub fn summary_json(
    config: &RunConfig,
    report: &SessionReport,
    runs: &[SeedRun],
) -> Result<String> {
    let summary = Summary {
        config,
        report,
        runs: runs
            .iter()
            .map(|r| RunSummary {
                seed: r.seed,
                accuracies: &r.accuracies,
                pd: r.pd,
                rpd: r.rpd,
                pretrain: (&r.pretrain).into(),
                meta: &r.meta,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    Ok(text)
}

/// Writes `summary.json`, `sessions.csv`, `episodes.csv` and one
/// best-validation checkpoint per seed into `dir`.
pub fn write_results(
    dir: &Path,
    config: &RunConfig,
    report: &SessionReport,
    runs: &[SeedRun],
) -> Result<()> {
    write_atomic(
        &dir.join("summary.json"),
        summary_json(config, report, runs)?.as_bytes(),
    )?;
    write_atomic(&dir.join("sessions.csv"), sessions_csv(runs).as_bytes())?;
    let mut episodes = String::new();
    for (i, run) in runs.iter().enumerate() {
        let csv = episodes_csv(run.seed, &run.meta.episodes);
        let body = if i == 0 {
            &csv[..]
        } else {
            csv.split_once('\n').map_or("", |(_, b)| b)
        };
        episodes.push_str(body);
    }
    write_atomic(&dir.join("episodes.csv"), episodes.as_bytes())?;
    for run in runs {
        let step = run.meta.best_episode.unwrap_or(run.meta.episodes_run) as u64;
        run.meta
            .state
            .to_checkpoint(run.seed, step)?
            .save(&dir.join(format!("model-seed{}.ckpt", run.seed)))?;
    }
    Ok(())
}
