mod common;

use std::fs;

use hagmeta::dataset::{export_dataset, load_dataset, DatasetBundle, FeatureFormat};
use hagmeta::model::{ModelConfig, ModelState};
use hagmeta::output::export_embeddings;
use hagmeta::Error;

fn write_bundle(
    dir: &std::path::Path,
    edges: &str,
    features: &str,
    labels: &str,
    nodes: usize,
    dim: usize,
    classes: usize,
) -> DatasetBundle {
    fs::write(dir.join("g.edges"), edges).unwrap();
    fs::write(dir.join("g.features"), features).unwrap();
    fs::write(dir.join("g.labels"), labels).unwrap();
    DatasetBundle {
        edges: dir.join("g.edges"),
        features: dir.join("g.features"),
        labels: dir.join("g.labels"),
        num_nodes: nodes,
        feature_dim: dim,
        num_classes: classes,
    }
}

#[test]
fn small_text_dataset_loads() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(
        dir.path(),
        "0\t1\n1 2\n# comment\n2\t3\n",
        "1 0\n0 1\n1 1\n0.5 -2\n",
        "0\n1\n-1\n1\n",
        4,
        2,
        2,
    );
    let g = load_dataset(&b).unwrap();
    assert_eq!(g.num_nodes(), 4);
    assert_eq!(g.num_edges(), 3);
    assert_eq!(g.label(2), None);
    assert_eq!(g.features().row(3), &[0.5, -2.0]);
}

#[test]
fn malformed_row_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(dir.path(), "0 1\n", "1 0\n0 x\n", "0\n1\n", 2, 2, 2);
    match load_dataset(&b) {
        Err(Error::Parse { file, line, .. }) => {
            assert_eq!(file, dir.path().join("g.features"));
            assert_eq!(line, 2);
        }
        other => panic!("{other:?}"),
    }
    let b = write_bundle(dir.path(), "0 1\n1\n", "1 0\n0 1\n", "0\n1\n", 2, 2, 2);
    let msg = load_dataset(&b).unwrap_err().to_string();
    assert!(msg.contains("g.edges:2"), "{msg}");
}

#[test]
fn metadata_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let b = write_bundle(dir.path(), "0 1\n", "1 0\n0 1\n", "0\n1\n", 3, 2, 2);
    assert!(matches!(load_dataset(&b), Err(Error::Graph(_))));
    let b = write_bundle(dir.path(), "0 1\n", "1 0\n0 1\n", "0\n1\n", 2, 2, 5);
    assert!(load_dataset(&b).is_err());
    let b = write_bundle(dir.path(), "0 7\n", "1 0\n0 1\n", "0\n1\n", 2, 2, 2);
    assert!(load_dataset(&b).is_err());
}

#[test]
fn export_then_load_is_identity() {
    let g = common::sbm(3, 10, 5);
    let dir = tempfile::tempdir().unwrap();
    for (stem, format) in [
        ("text", FeatureFormat::Text),
        ("bin", FeatureFormat::Binary),
    ] {
        export_dataset(&g, dir.path(), stem, format).unwrap();
        let bundle = DatasetBundle::read(&dir.path().join(format!("{stem}.json"))).unwrap();
        assert_eq!(load_dataset(&bundle).unwrap(), g);
    }
}

#[test]
fn embedding_export_shape_and_purity() {
    let g = common::sbm(3, 10, 6);
    let state = ModelState::init(&ModelConfig::default(), g.feature_dim(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b, e) = (
        dir.path().join("a.csv"),
        dir.path().join("b.csv"),
        dir.path().join("e.csv"),
    );
    let nodes: Vec<usize> = (0..10).collect();
    export_embeddings(&state, &g, &nodes, &a).unwrap();
    export_embeddings(&state, &g, &nodes, &b).unwrap();
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines.iter().all(|l| l.split(',').count() == 18));
    export_embeddings(&state, &g, &[], &e).unwrap();
    assert_eq!(fs::read_to_string(&e).unwrap().lines().count(), 1);
}
