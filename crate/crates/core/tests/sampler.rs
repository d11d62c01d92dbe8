mod common;

use std::collections::BTreeSet;

use common::{sbm, split};
use hagmeta::episodes::{eval_session_stream, EpisodeShape, MetaEpisodeSampler, StreamKind};

const SHAPE: EpisodeShape = EpisodeShape {
    n_way: 2,
    k_shot: 3,
    query_k: 4,
};

#[test]
fn meta_episodes_keep_every_invariant() {
    let g = sbm(14, 20, 1);
    for seed in 0..3 {
        let s = split(&g, 4, 5, 1, 4, seed);
        let banned: BTreeSet<usize> = s.masked.iter().copied().collect();
        let mut sampler = MetaEpisodeSampler::new(&s, SHAPE, seed).unwrap();
        for _ in 0..300 {
            let task = sampler.next_episode().unwrap();
            task.check_invariants().unwrap();
            assert!(task.session_index >= 1);
            assert_eq!(task.sessions[0], s.base_classes);
            for novel in &task.sessions[1..] {
                assert_eq!(novel.len(), 2);
                assert!(novel.iter().all(|c| s.novel_tr_classes.contains(c)));
            }
            assert!(task.all_nodes().all(|v| !banned.contains(&v)));
            for cn in task
                .support
                .iter()
                .filter(|c| s.base_classes.contains(&c.class))
            {
                assert!(cn.nodes.iter().all(|v| s.base_train[&cn.class].contains(v)));
            }
            for cn in task
                .query
                .iter()
                .filter(|c| s.base_classes.contains(&c.class))
            {
                assert!(cn.nodes.iter().all(|v| s.base_train[&cn.class].contains(v)));
            }
        }
    }
}

#[test]
fn reset_count_follows_cycle_length() {
    let g = sbm(14, 20, 2);
    for (tr, m) in [(5usize, 100usize), (4, 57), (8, 1000)] {
        let s = split(&g, 2, tr, 0, 2, 0);
        let mut sampler = MetaEpisodeSampler::new(&s, SHAPE, 9).unwrap();
        for _ in 0..m {
            sampler.next_episode().unwrap();
        }
        let cycle = tr / SHAPE.n_way;
        let expected = (m / cycle) as i64;
        assert!(
            (sampler.resets() as i64 - expected).abs() <= 1,
            "tr={tr} m={m} resets={}",
            sampler.resets()
        );
    }
}

#[test]
fn cached_supports_persist_until_reset() {
    let g = sbm(14, 20, 3);
    let s = split(&g, 4, 6, 0, 4, 1);
    let mut sampler = MetaEpisodeSampler::new(&s, SHAPE, 4).unwrap();
    let first = sampler.next_episode().unwrap();
    let second = sampler.next_episode().unwrap();
    for cn in first
        .support
        .iter()
        .filter(|c| first.novel_classes().contains(&c.class))
    {
        let again = second.support.iter().find(|c| c.class == cn.class).unwrap();
        assert_eq!(again.nodes, cn.nodes);
    }
    let base0 = &first.support[0].nodes;
    let base1 = &second.support[0].nodes;
    assert_eq!(first.support[0].class, second.support[0].class);
    assert_eq!(base0.len(), base1.len());
}

#[test]
fn evaluation_stream_uses_held_out_classes_and_base_test_queries() {
    let g = sbm(14, 20, 4);
    let s = split(&g, 4, 4, 2, 4, 2);
    let tasks = eval_session_stream(&s, SHAPE, 2, StreamKind::Evaluation, false, 5).unwrap();
    assert_eq!(tasks.len(), 2);
    let mut novel_seen = BTreeSet::new();
    for (i, t) in tasks.iter().enumerate() {
        t.check_invariants().unwrap();
        assert_eq!(t.num_classes(), 4 + 2 * (i + 1));
        for c in t.novel_classes() {
            assert!(s.novel_test_classes.contains(c));
            assert!(novel_seen.insert(*c));
        }
        for cn in t.query.iter().filter(|c| s.base_classes.contains(&c.class)) {
            assert!(cn.nodes.iter().all(|v| s.base_test[&cn.class].contains(v)));
        }
    }
    assert!(eval_session_stream(&s, SHAPE, 3, StreamKind::Evaluation, false, 5).is_err());
}
