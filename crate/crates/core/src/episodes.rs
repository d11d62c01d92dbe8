//! Class registry and episode streams for pseudo-incremental meta-training
//! and for incremental evaluation.
//!
//! Session 0 of every registry holds the base classes, whose support nodes are
//! drawn fresh for each episode. Later sessions hold N novel classes each and
//! keep the K support nodes chosen when the session was created.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ClassId, NodeId};
use crate::rng::stream_rng;
use crate::splits::DataSplits;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrySession {
    pub classes: Vec<ClassId>,
    /// Cached supports; empty for the base session.
    pub cached_support: BTreeMap<ClassId, Vec<NodeId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRegistry {
    sessions: Vec<RegistrySession>,
    class_session: BTreeMap<ClassId, usize>,
    k_shot: usize,
}

impl ClassRegistry {
    pub fn with_base(base_classes: &[ClassId], k_shot: usize) -> Result<Self> {
        let mut reg = ClassRegistry {
            sessions: Vec::new(),
            class_session: BTreeMap::new(),
            k_shot,
        };
        reg.push(base_classes.to_vec(), BTreeMap::new())?;
        Ok(reg)
    }

    fn push(
        &mut self,
        classes: Vec<ClassId>,
        cached_support: BTreeMap<ClassId, Vec<NodeId>>,
    ) -> Result<()> {
        if classes.is_empty() {
            return Err(Error::Sampling("a session needs at least one class".into()));
        }
        let idx = self.sessions.len();
        for &c in &classes {
            if self.class_session.contains_key(&c) {
                return Err(Error::Sampling(format!(
                    "class {c} already belongs to a session"
                )));
            }
        }
        for &c in &classes {
            self.class_session.insert(c, idx);
        }
        self.sessions.push(RegistrySession {
            classes,
            cached_support,
        });
        Ok(())
    }

    /// Appends a novel session with its cached supports (exactly K per class).
    pub fn push_novel(&mut self, supports: BTreeMap<ClassId, Vec<NodeId>>) -> Result<usize> {
        if let Some((c, s)) = supports.iter().find(|(_, s)| s.len() != self.k_shot) {
            return Err(Error::Sampling(format!(
                "class {c} has {} cached supports, expected {}",
                s.len(),
                self.k_shot
            )));
        }
        let classes = supports.keys().copied().collect();
        self.push(classes, supports)?;
        Ok(self.sessions.len() - 1)
    }

    /// Drops every novel session, keeping the base session.
    pub fn reset(&mut self) {
        self.sessions.truncate(1);
        let base = &self.sessions[0].classes;
        self.class_session = base.iter().map(|&c| (c, 0)).collect();
    }

    pub fn sessions(&self) -> &[RegistrySession] {
        &self.sessions
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn session_of(&self, class: ClassId) -> Option<usize> {
        self.class_session.get(&class).copied()
    }

    pub fn k_shot(&self) -> usize {
        self.k_shot
    }

    /// Seen classes in session order.
    pub fn seen_classes(&self) -> Vec<ClassId> {
        self.sessions
            .iter()
            .flat_map(|s| s.classes.iter().copied())
            .collect()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.class_session.contains_key(&class)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassNodes {
    pub class: ClassId,
    pub nodes: Vec<NodeId>,
}

/// One session's support and query sets. `support` and `query` list the
/// seen classes in the same order, grouped by the session that introduced
/// them (`sessions`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTask {
    pub session_index: usize,
    pub sessions: Vec<Vec<ClassId>>,
    pub support: Vec<ClassNodes>,
    pub query: Vec<ClassNodes>,
    pub n_way: usize,
    pub k_shot: usize,
}

impl EpisodeTask {
    pub fn classes(&self) -> Vec<ClassId> {
        self.support.iter().map(|c| c.class).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.support.len()
    }

    /// Support node ids flattened in class order, with per-class index
    /// groups into that flat list.
    pub fn support_layout(&self) -> (Vec<NodeId>, Vec<Vec<usize>>) {
        let mut ids = Vec::new();
        let mut groups = Vec::new();
        for cn in &self.support {
            let start = ids.len();
            ids.extend_from_slice(&cn.nodes);
            groups.push((start..ids.len()).collect());
        }
        (ids, groups)
    }

    /// Query node ids with their class position (index into `classes()`).
    pub fn query_layout(&self) -> (Vec<NodeId>, Vec<usize>) {
        let pos: BTreeMap<ClassId, usize> = self
            .classes()
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c, i))
            .collect();
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for cn in &self.query {
            let p = pos[&cn.class];
            ids.extend_from_slice(&cn.nodes);
            labels.extend(std::iter::repeat_n(p, cn.nodes.len()));
        }
        (ids, labels)
    }

    /// Session (task) index of each class position.
    pub fn class_task(&self) -> Vec<usize> {
        let task: BTreeMap<ClassId, usize> = self
            .sessions
            .iter()
            .enumerate()
            .flat_map(|(t, cs)| cs.iter().map(move |&c| (c, t)))
            .collect();
        self.classes().iter().map(|c| task[c]).collect()
    }

    pub fn novel_classes(&self) -> &[ClassId] {
        self.sessions.last().map_or(&[], Vec::as_slice)
    }

    /// Checks the N-way K-shot contract, query coverage and support/query
    /// disjointness.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Sampling(msg));
        let flat: Vec<ClassId> = self.sessions.iter().flatten().copied().collect();
        if flat != self.classes() {
            return fail("support classes do not follow session order".into());
        }
        if flat.iter().collect::<BTreeSet<_>>().len() != flat.len() {
            return fail("a class appears in two sessions".into());
        }
        if self.session_index > 0 {
            if self.novel_classes().len() != self.n_way {
                return fail(format!(
                    "{} novel classes, expected {}",
                    self.novel_classes().len(),
                    self.n_way
                ));
            }
            for cn in &self.support {
                if cn.nodes.len() != self.k_shot {
                    return fail(format!(
                        "class {} has {} supports",
                        cn.class,
                        cn.nodes.len()
                    ));
                }
            }
        }
        let query_classes: Vec<ClassId> = self.query.iter().map(|c| c.class).collect();
        if query_classes != flat {
            return fail("query does not cover every seen class".into());
        }
        if self.query.iter().any(|c| c.nodes.is_empty()) {
            return fail("empty query class".into());
        }
        let support: BTreeSet<NodeId> = self
            .support
            .iter()
            .flat_map(|c| c.nodes.iter().copied())
            .collect();
        let n_support: usize = self.support.iter().map(|c| c.nodes.len()).sum();
        if support.len() != n_support {
            return fail("duplicate support node".into());
        }
        if let Some(v) = self
            .query
            .iter()
            .flat_map(|c| &c.nodes)
            .find(|v| support.contains(v))
        {
            return fail(format!("node {v} is both support and query"));
        }
        Ok(())
    }

    pub fn all_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.support
            .iter()
            .chain(&self.query)
            .flat_map(|c| c.nodes.iter().copied())
    }
}

/// Uniform sample of `k` nodes from `pool` minus `exclude`, candidates taken
/// in ascending id order. Returned ids are sorted.
fn sample_nodes(
    pool: &[NodeId],
    exclude: &[NodeId],
    k: usize,
    rng: &mut impl Rng,
) -> Option<Vec<NodeId>> {
    let mut candidates: Vec<NodeId> = pool
        .iter()
        .copied()
        .filter(|v| !exclude.contains(v))
        .collect();
    candidates.sort_unstable();
    if candidates.len() < k {
        return None;
    }
    let mut picked: Vec<NodeId> = index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    Some(picked)
}

fn sample_classes(pool: &[ClassId], n: usize, rng: &mut impl Rng) -> Vec<ClassId> {
    let mut sorted = pool.to_vec();
    sorted.sort_unstable();
    let mut picked: Vec<ClassId> = index::sample(rng, sorted.len(), n)
        .into_iter()
        .map(|i| sorted[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Validation,
    Evaluation,
}

/// Where support and query nodes of each class come from.
struct NodePools<'a> {
    splits: &'a DataSplits,
    /// Per base class, the pool base queries are drawn from.
    base_query: &'a BTreeMap<ClassId, Vec<NodeId>>,
    /// When false, base queries come from the base training pool minus supports.
    separate_base_query: bool,
}

impl NodePools<'_> {
    fn support_pool(&self, class: ClassId) -> &[NodeId] {
        match self.splits.base_train.get(&class) {
            Some(nodes) => nodes,
            None => self.splits.nodes_of(class),
        }
    }

    fn query_pool(&self, class: ClassId) -> &[NodeId] {
        match self.splits.base_train.get(&class) {
            Some(_) if self.separate_base_query => &self.base_query[&class],
            Some(nodes) => nodes,
            None => self.splits.nodes_of(class),
        }
    }
}

fn build_task(
    registry: &ClassRegistry,
    pools: &NodePools<'_>,
    n_way: usize,
    query_k: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeTask> {
    let k = registry.k_shot();
    let mut support = Vec::new();
    let mut query = Vec::new();
    for (s_idx, session) in registry.sessions().iter().enumerate() {
        for &c in &session.classes {
            let nodes = if s_idx == 0 {
                sample_nodes(pools.support_pool(c), &[], k, rng).ok_or_else(|| {
                    Error::Sampling(format!(
                        "base class {c} has fewer than {k} support candidates"
                    ))
                })?
            } else {
                session.cached_support[&c].clone()
            };
            let q = sample_nodes(pools.query_pool(c), &nodes, query_k, rng).ok_or_else(|| {
                Error::Sampling(format!(
                    "class {c} lacks {query_k} query nodes disjoint from its supports"
                ))
            })?;
            support.push(ClassNodes { class: c, nodes });
            query.push(ClassNodes { class: c, nodes: q });
        }
    }
    Ok(EpisodeTask {
        session_index: registry.num_sessions() - 1,
        sessions: registry
            .sessions()
            .iter()
            .map(|s| s.classes.clone())
            .collect(),
        support,
        query,
        n_way,
        k_shot: k,
    })
}

fn sample_novel_supports(
    classes: &[ClassId],
    pools: &NodePools<'_>,
    k: usize,
    rng: &mut impl Rng,
) -> Result<BTreeMap<ClassId, Vec<NodeId>>> {
    classes
        .iter()
        .map(|&c| {
            sample_nodes(pools.support_pool(c), &[], k, rng)
                .map(|s| (c, s))
                .ok_or_else(|| Error::Sampling(format!("class {c} has fewer than {k} nodes")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_k: usize,
}

impl EpisodeShape {
    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.query_k == 0 {
            return Err(Error::Config(
                "n_way, k_shot and query_k must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Endless stream of pseudo-incremental meta-training episodes.
///
/// Each episode adds N unused pseudo-novel classes as a new session. When
/// fewer than N unused classes remain the registry falls back to the base
/// session alone and every pseudo-novel class becomes available again.
pub struct MetaEpisodeSampler<'a> {
    splits: &'a DataSplits,
    shape: EpisodeShape,
    registry: ClassRegistry,
    rng: ChaCha8Rng,
    resets: usize,
    episodes: usize,
}

impl<'a> MetaEpisodeSampler<'a> {
    pub fn new(splits: &'a DataSplits, shape: EpisodeShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        if splits.novel_tr_classes.len() < shape.n_way {
            return Err(Error::Config(format!(
                "{} pseudo-novel classes cannot fill a {}-way session",
                splits.novel_tr_classes.len(),
                shape.n_way
            )));
        }
        Ok(MetaEpisodeSampler {
            splits,
            shape,
            registry: ClassRegistry::with_base(&splits.base_classes, shape.k_shot)?,
            rng: stream_rng(seed, "meta-episodes"),
            resets: 0,
            episodes: 0,
        })
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn resets(&self) -> usize {
        self.resets
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn next_episode(&mut self) -> Result<EpisodeTask> {
        let unused: Vec<ClassId> = self
            .splits
            .novel_tr_classes
            .iter()
            .copied()
            .filter(|&c| !self.registry.contains(c))
            .collect();
        let unused = if unused.len() < self.shape.n_way {
            self.registry.reset();
            self.resets += 1;
            self.splits.novel_tr_classes.clone()
        } else {
            unused
        };
        let pools = NodePools {
            splits: self.splits,
            base_query: &self.splits.base_train,
            separate_base_query: false,
        };
        let novel = sample_classes(&unused, self.shape.n_way, &mut self.rng);
        let supports = sample_novel_supports(&novel, &pools, self.shape.k_shot, &mut self.rng)?;
        self.registry.push_novel(supports)?;
        let task = build_task(
            &self.registry,
            &pools,
            self.shape.n_way,
            self.shape.query_k,
            &mut self.rng,
        )?;
        self.episodes += 1;
        Ok(task)
    }
}

/// The `sessions` incremental sessions of a validation or evaluation run.
///
/// Base supports come from base/train; base queries from base/test
/// (evaluation) or base/val (validation). With `novel_tr_as_base` the
/// pseudo-novel classes join the base session.
pub fn eval_session_stream(
    splits: &DataSplits,
    shape: EpisodeShape,
    sessions: usize,
    kind: StreamKind,
    novel_tr_as_base: bool,
    seed: u64,
) -> Result<Vec<EpisodeTask>> {
    shape.validate()?;
    let (novel_pool, base_query, tag) = match kind {
        StreamKind::Evaluation => (
            &splits.novel_test_classes,
            &splits.base_test,
            "eval-sessions",
        ),
        StreamKind::Validation => (&splits.novel_val_classes, &splits.base_val, "val-sessions"),
    };
    if sessions * shape.n_way > novel_pool.len() {
        return Err(Error::Config(format!(
            "{sessions} sessions of {} novel classes need {} classes, only {} available",
            shape.n_way,
            sessions * shape.n_way,
            novel_pool.len()
        )));
    }
    let mut base = splits.base_classes.clone();
    let mut extended_query = base_query.clone();
    if novel_tr_as_base {
        base.extend(&splits.novel_tr_classes);
        base.sort_unstable();
        for &c in &splits.novel_tr_classes {
            extended_query.insert(c, splits.nodes_of(c).to_vec());
        }
    }
    let pools = NodePools {
        splits,
        base_query: &extended_query,
        separate_base_query: true,
    };
    let mut rng = stream_rng(seed, tag);
    let mut registry = ClassRegistry::with_base(&base, shape.k_shot)?;
    let mut remaining: Vec<ClassId> = novel_pool.clone();
    let mut out = Vec::with_capacity(sessions);
    for _ in 0..sessions {
        let novel = sample_classes(&remaining, shape.n_way, &mut rng);
        remaining.retain(|c| !novel.contains(c));
        let supports = sample_novel_supports(&novel, &pools, shape.k_shot, &mut rng)?;
        registry.push_novel(supports)?;
        out.push(build_task(
            &registry,
            &pools,
            shape.n_way,
            shape.query_k,
            &mut rng,
        )?);
    }
    Ok(out)
}
