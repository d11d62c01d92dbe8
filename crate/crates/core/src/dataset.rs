//! Dataset files on disk and the stochastic block model generator.
//!
//! A dataset is a JSON bundle pointing at three files:
//!
//! * edges: one `u<TAB>v` pair of node ids per line,
//! * features: one whitespace-separated row of decimals per node, or a
//!   binary tensor file (`.bin`) in the checkpoint layout holding a single
//!   tensor named `features`,
//! * labels: one integer per line, `-1` for unlabeled nodes.
//!
//! Blank lines and lines starting with `#` are ignored in the text files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffnum::{Checkpoint, ParamKind, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::graph::{ClassId, Graph, NodeId};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBundle {
    /// Relative paths resolve against the bundle file's directory.
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl DatasetBundle {
    /// Reads a bundle file and makes its paths absolute relative to it.
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut bundle: DatasetBundle = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut bundle.edges, &mut bundle.features, &mut bundle.labels] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(bundle)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

fn parse_error(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_edges(path: &Path) -> Result<Vec<(NodeId, NodeId)>> {
    let text = read_to_string(path)?;
    content_lines(&text)
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(parse_error(
                    path,
                    n,
                    format!("expected two node ids, found {}", fields.len()),
                ));
            }
            let id = |s: &str| {
                s.parse::<NodeId>()
                    .map_err(|_| parse_error(path, n, format!("invalid node id {s:?}")))
            };
            Ok((id(fields[0])?, id(fields[1])?))
        })
        .collect()
}

pub fn parse_features(path: &Path) -> Result<Tensor> {
    if path.extension().is_some_and(|e| e == "bin") {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Checkpoint::from_bytes(&bytes)?;
        let t = ck
            .params
            .get("features")
            .ok_or_else(|| parse_error(path, 0, "binary file has no tensor named features"))?;
        if t.shape().len() != 2 {
            return Err(parse_error(
                path,
                0,
                "features tensor must be two-dimensional",
            ));
        }
        return Ok(t.clone());
    }
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in content_lines(&text) {
        let row = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_error(path, n, format!("invalid feature value {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_error(
                    path,
                    n,
                    format!("row has {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(path, 0, "no feature rows"));
    }
    Tensor::from_rows(&rows)
}

pub fn parse_labels(path: &Path) -> Result<Vec<Option<ClassId>>> {
    let text = read_to_string(path)?;
    content_lines(&text)
        .map(|(n, line)| match line.parse::<i64>() {
            Ok(-1) => Ok(None),
            Ok(c) if c >= 0 => Ok(Some(c as ClassId)),
            _ => Err(parse_error(path, n, format!("invalid label {line:?}"))),
        })
        .collect()
}

/// Parses the three files and checks them against the bundle metadata.
pub fn load_dataset(bundle: &DatasetBundle) -> Result<Graph> {
    let edges = parse_edges(&bundle.edges)?;
    let features = parse_features(&bundle.features)?;
    let labels = parse_labels(&bundle.labels)?;
    if features.rows() != bundle.num_nodes {
        return Err(Error::Graph(format!(
            "{} has {} rows, metadata says {} nodes",
            bundle.features.display(),
            features.rows(),
            bundle.num_nodes
        )));
    }
    if features.cols() != bundle.feature_dim {
        return Err(Error::Graph(format!(
            "{} has width {}, metadata says {}",
            bundle.features.display(),
            features.cols(),
            bundle.feature_dim
        )));
    }
    if labels.len() != bundle.num_nodes {
        return Err(Error::Graph(format!(
            "{} has {} labels, metadata says {} nodes",
            bundle.labels.display(),
            labels.len(),
            bundle.num_nodes
        )));
    }
    let graph = Graph::build(&edges, features, labels)?;
    let num_classes = graph.classes().len();
    if num_classes != bundle.num_classes {
        return Err(Error::Graph(format!(
            "labels contain {num_classes} classes, metadata says {}",
            bundle.num_classes
        )));
    }
    Ok(graph)
}

/// How features are written by [`export_dataset`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureFormat {
    #[default]
    Text,
    Binary,
}

/// Writes `graph` as `<stem>.edges`, `<stem>.features` (or `.bin`),
/// `<stem>.labels` and the bundle `<stem>.json` inside `dir`. Values are
/// written in shortest round-trip form, so loading gives back the same graph.
pub fn export_dataset(
    graph: &Graph,
    dir: &Path,
    stem: &str,
    format: FeatureFormat,
) -> Result<DatasetBundle> {
    let mut edges = String::new();
    for (u, v) in graph.edges() {
        writeln!(edges, "{u}\t{v}").expect("write to string");
    }
    let mut labels = String::new();
    for l in graph.labels() {
        match l {
            Some(c) => writeln!(labels, "{c}"),
            None => writeln!(labels, "-1"),
        }
        .expect("write to string");
    }
    let edges_name = format!("{stem}.edges");
    let labels_name = format!("{stem}.labels");
    write_atomic(&dir.join(&edges_name), edges.as_bytes())?;
    write_atomic(&dir.join(&labels_name), labels.as_bytes())?;

    let features_name = match format {
        FeatureFormat::Text => {
            let mut text = String::new();
            for r in 0..graph.num_nodes() {
                let row: Vec<String> = graph
                    .features()
                    .row(r)
                    .iter()
                    .map(|x| format!("{x:?}"))
                    .collect();
                text.push_str(&row.join(" "));
                text.push('\n');
            }
            let name = format!("{stem}.features");
            write_atomic(&dir.join(&name), text.as_bytes())?;
            name
        }
        FeatureFormat::Binary => {
            let mut params = ParamSet::new();
            params.insert("features", graph.features().clone(), ParamKind::Weight)?;
            let ck = Checkpoint {
                params,
                seed: 0,
                step: 0,
                meta: serde_json::Value::Null,
            };
            let name = format!("{stem}.bin");
            ck.save(&dir.join(&name))?;
            name
        }
    };

    let bundle = DatasetBundle {
        edges: PathBuf::from(edges_name),
        features: PathBuf::from(features_name),
        labels: PathBuf::from(labels_name),
        num_nodes: graph.num_nodes(),
        feature_dim: graph.feature_dim(),
        num_classes: graph.classes().len(),
    };
    bundle.write(&dir.join(format!("{stem}.json")))?;
    Ok(bundle)
}

/// Stochastic block model with Gaussian class-centered features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub class_center_separation: f64,
    /// Standard deviation of the per-coordinate feature noise.
    pub feature_noise: f64,
    pub seed: u64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synthetic graph: {msg}")));
        if self.classes == 0 || self.nodes_per_class == 0 || self.feature_dim == 0 {
            return bad("classes, nodes_per_class and feature_dim must be positive");
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return bad("need 0 <= p_out < p_in <= 1");
        }
        if !(self.class_center_separation > 0.0) || !self.class_center_separation.is_finite() {
            return bad("class_center_separation must be positive");
        }
        if !(self.feature_noise >= 0.0) || !self.feature_noise.is_finite() {
            return bad("feature_noise must be non-negative");
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.classes * self.nodes_per_class
    }
}

/// Unit class centers: basis vectors when there are no more classes than
/// feature dimensions, random directions otherwise.
fn class_centers(spec: &SbmSpec) -> Vec<Vec<f64>> {
    let d = spec.feature_dim;
    if spec.classes <= d {
        return (0..spec.classes)
            .map(|c| (0..d).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
            .collect();
    }
    let mut rng = stream_rng(spec.seed, "sbm-centers");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..spec.classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Node `v` belongs to class `v / nodes_per_class`. Each node pair is joined
/// independently with `p_in` inside a class and `p_out` across classes.
pub fn generate_synthetic(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.num_nodes();
    let class_of = |v: NodeId| v / spec.nodes_per_class;

    let mut rng = stream_rng(spec.seed, "sbm-edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if class_of(u) == class_of(v) {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let centers = class_centers(spec);
    let mut rng = stream_rng(spec.seed, "sbm-features");
    let mut data = Vec::with_capacity(n * spec.feature_dim);
    for v in 0..n {
        for &c in &centers[class_of(v)] {
            let noise = if spec.feature_noise > 0.0 {
                Normal::new(0.0, spec.feature_noise)
                    .expect("validated noise")
                    .sample(&mut rng)
            } else {
                0.0
            };
            data.push(c * spec.class_center_separation + noise);
        }
    }
    let features = Tensor::matrix(n, spec.feature_dim, data)?;
    let labels = (0..n).map(|v| Some(class_of(v))).collect();
    Graph::build(&edges, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SbmSpec {
        SbmSpec {
            classes: 3,
            nodes_per_class: 10,
            p_in: 0.5,
            p_out: 0.05,
            feature_dim: 4,
            class_center_separation: 2.0,
            feature_noise: 0.3,
            seed: 9,
        }
    }

    #[test]
    fn spec_validation() {
        spec().validate().unwrap();
        for f in [
            |s: &mut SbmSpec| s.p_out = s.p_in,
            |s: &mut SbmSpec| s.p_in = 1.5,
            |s: &mut SbmSpec| s.class_center_separation = 0.0,
            |s: &mut SbmSpec| s.p_out = -0.1,
        ] {
            let mut s = spec();
            f(&mut s);
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn no_inter_class_edges_when_p_out_is_zero() {
        let mut s = spec();
        s.p_out = 0.0;
        let g = generate_synthetic(&s).unwrap();
        assert!(g.num_edges() > 0);
        for (u, v) in g.edges() {
            assert_eq!(g.label(u), g.label(v));
        }
    }

    #[test]
    fn zero_noise_gives_identical_class_features() {
        let mut s = spec();
        s.feature_noise = 0.0;
        let g = generate_synthetic(&s).unwrap();
        for v in 0..g.num_nodes() {
            let first = (v / 10) * 10;
            assert_eq!(g.features().row(v), g.features().row(first));
        }
        assert_eq!(g.features().row(0), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn more_classes_than_dimensions_use_unit_directions() {
        let mut s = spec();
        s.classes = 6;
        s.feature_noise = 0.0;
        s.class_center_separation = 1.0;
        let g = generate_synthetic(&s).unwrap();
        let norm: f64 = g
            .features()
            .row(0)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            generate_synthetic(&spec()).unwrap(),
            generate_synthetic(&spec()).unwrap()
        );
        let mut other = spec();
        other.seed = 10;
        assert_ne!(
            generate_synthetic(&spec()).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }
}
