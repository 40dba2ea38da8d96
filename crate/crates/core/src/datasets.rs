//! Synthetic motif benchmarks and JSONL dataset ingestion.
//!
//! Each synthetic graph is a Barabasi-Albert tree (attachment m = 1) with
//! one motif (house, 5-cycle, or 3x3 grid) glued on by a single random
//! bridge edge. The class label is the motif kind and the ground-truth
//! explanation is exactly the motif's internal edges; the bridge is not
//! part of the ground truth.
//!
//! The file format is JSON Lines, one graph per line:
//! `{"n": int, "edges": [[u,v],...], "x": [[...]xn], "y": int,
//!   "gt_edges": [[u,v],...]}` with `gt_edges` optional and every
//! undirected pair listed once.

use crate::graph::{Graph, GraphError};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Width of the constant all-ones feature vectors on synthetic graphs.
pub const SYNTHETIC_FEATURE_DIM: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("dataset contains no graphs")]
    Empty,
    #[error("graph {index} has no label")]
    Unlabeled { index: usize },
    #[error("graph {index} has feature width {got}, expected {expected}")]
    InconsistentFeatures {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("num_graphs = {num_graphs} is not a positive multiple of {classes}")]
    UnbalancedClassCount { num_graphs: usize, classes: usize },
    #[error("base_nodes = {base_nodes} too small, need at least {min}")]
    BaseTooSmall { base_nodes: usize, min: usize },
    #[error("graph {index}: {source}")]
    Graph { index: usize, source: GraphError },
}

/// Train/validation/test index lists over a dataset's graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// An ordered, fully labeled collection of graphs with 80/10/10 splits
/// stratified by class. Splits are a deterministic function of the label
/// sequence, so a save/load round trip reproduces them exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    graphs: Vec<Graph>,
    splits: Splits,
}

impl Dataset {
    /// Validates labels and feature widths and derives stratified splits.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Result<Self, DatasetError> {
        if graphs.is_empty() {
            return Err(DatasetError::Empty);
        }
        let expected = graphs[0].feature_dim();
        let mut labels = Vec::with_capacity(graphs.len());
        for (index, g) in graphs.iter().enumerate() {
            match g.label() {
                Some(l) => labels.push(l),
                None => return Err(DatasetError::Unlabeled { index }),
            }
            if g.feature_dim() != expected {
                return Err(DatasetError::InconsistentFeatures {
                    index,
                    got: g.feature_dim(),
                    expected,
                });
            }
        }
        let splits = stratified_splits(&labels);
        Ok(Self {
            name: name.into(),
            graphs,
            splits,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, index: usize) -> &Graph {
        &self.graphs[index]
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }

    /// Number of distinct classes (labels are indices, so max + 1).
    pub fn num_classes(&self) -> usize {
        self.graphs
            .iter()
            .map(|g| g.label().expect("validated labeled") + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Per class, in dataset order: first 80% train, next 10% validation,
/// remainder test (floor rounding, test absorbs the slack).
fn stratified_splits(labels: &[usize]) -> Splits {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in classes {
        let idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        let n_train = idx.len() * 8 / 10;
        let n_val = idx.len() / 10;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Splits { train, val, test }
}

/// Motif kinds used by the synthetic benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifKind {
    House,
    Cycle5,
    Grid3x3,
}

/// A motif's structure and the class label it induces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifSpec {
    pub kind: MotifKind,
    pub edges: Vec<(usize, usize)>,
    pub num_nodes: usize,
    pub label: usize,
}

impl MotifSpec {
    /// 4-cycle 0-1-2-3 with a roof apex 4 joined to 0 and 1. 5 nodes, 6 edges.
    pub fn house() -> Self {
        Self {
            kind: MotifKind::House,
            edges: vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4)],
            num_nodes: 5,
            label: 0,
        }
    }

    /// Five-node ring. 5 edges.
    pub fn cycle5() -> Self {
        Self {
            kind: MotifKind::Cycle5,
            edges: vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)],
            num_nodes: 5,
            label: 1,
        }
    }

    /// 3x3 lattice, row-major. 9 nodes, 12 edges.
    pub fn grid3x3() -> Self {
        let mut edges = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                let i = 3 * r + c;
                if c + 1 < 3 {
                    edges.push((i, i + 1));
                }
                if r + 1 < 3 {
                    edges.push((i, i + 3));
                }
            }
        }
        Self {
            kind: MotifKind::Grid3x3,
            edges,
            num_nodes: 9,
            label: 2,
        }
    }
}

fn graph_rng(seed: u64, index: usize) -> ChaCha8Rng {
    crate::seed::stream_rng(seed, index as u64)
}

/// Barabasi-Albert tree: each new node attaches one edge to an existing
/// node chosen with probability proportional to its degree.
fn ba_tree(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    assert!(n >= 2, "BA tree needs at least two nodes");
    let mut edges = Vec::with_capacity(n - 1);
    // Each edge contributes both endpoints, so uniform sampling from this
    // list is degree-proportional sampling.
    let mut endpoints: Vec<usize> = vec![0];
    for k in 1..n {
        let target = endpoints[rng.random_range(0..endpoints.len())];
        edges.push((target.min(k), target.max(k)));
        endpoints.push(target);
        endpoints.push(k);
    }
    edges
}

/// One BA base + motif + bridge graph.
fn motif_graph(base_nodes: usize, motif: &MotifSpec, rng: &mut ChaCha8Rng) -> Graph {
    let n = base_nodes + motif.num_nodes;
    let mut adjacency = Array2::zeros((n, n));
    for &(u, v) in &ba_tree(base_nodes, rng) {
        adjacency[(u, v)] = 1.0;
        adjacency[(v, u)] = 1.0;
    }
    let mut gt = Array2::zeros((n, n));
    for &(u, v) in &motif.edges {
        let (u, v) = (base_nodes + u, base_nodes + v);
        adjacency[(u, v)] = 1.0;
        adjacency[(v, u)] = 1.0;
        gt[(u, v)] = 1.0;
        gt[(v, u)] = 1.0;
    }
    let bridge_base = rng.random_range(0..base_nodes);
    let bridge_motif = base_nodes + rng.random_range(0..motif.num_nodes);
    adjacency[(bridge_base, bridge_motif)] = 1.0;
    adjacency[(bridge_motif, bridge_base)] = 1.0;

    let features = Array2::ones((n, SYNTHETIC_FEATURE_DIM));
    Graph::new(adjacency, features, Some(motif.label), Some(gt))
        .expect("synthetic graph construction is internally consistent")
}

/// Two balanced classes: house (label 0) and 5-cycle (label 1) on BA bases
/// of exactly `base_nodes` nodes. With the default `base_nodes = 20` every
/// graph has 25 nodes.
pub fn generate_ba2motifs(
    num_graphs: usize,
    base_nodes: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if num_graphs < 2 || num_graphs % 2 != 0 {
        return Err(DatasetError::UnbalancedClassCount {
            num_graphs,
            classes: 2,
        });
    }
    if base_nodes < 5 {
        return Err(DatasetError::BaseTooSmall {
            base_nodes,
            min: 5,
        });
    }
    let motifs = [MotifSpec::house(), MotifSpec::cycle5()];
    let graphs = (0..num_graphs)
        .map(|i| {
            let mut rng = graph_rng(seed, i);
            motif_graph(base_nodes, &motifs[i % 2], &mut rng)
        })
        .collect();
    Dataset::new("ba2motifs", graphs)
}

/// Three balanced classes: house, 5-cycle, 3x3 grid. Base sizes are drawn
/// uniformly from {base_nodes - 2, ..., base_nodes + 3}; with the default
/// `base_nodes = 15` the mean graph size is about 21.8 nodes.
pub fn generate_ba3motifs(
    num_graphs: usize,
    base_nodes: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if num_graphs < 3 || num_graphs % 3 != 0 {
        return Err(DatasetError::UnbalancedClassCount {
            num_graphs,
            classes: 3,
        });
    }
    if base_nodes < 7 {
        return Err(DatasetError::BaseTooSmall {
            base_nodes,
            min: 7,
        });
    }
    let motifs = [
        MotifSpec::house(),
        MotifSpec::cycle5(),
        MotifSpec::grid3x3(),
    ];
    let graphs = (0..num_graphs)
        .map(|i| {
            let mut rng = graph_rng(seed, i);
            let base = base_nodes - 2 + rng.random_range(0..6);
            motif_graph(base, &motifs[i % 3], &mut rng)
        })
        .collect();
    Dataset::new("ba3motifs", graphs)
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    x: Vec<Vec<f64>>,
    y: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt_edges: Option<Vec<(usize, usize)>>,
}

fn line_err(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Line {
        line,
        message: message.into(),
    }
}

/// Collects undirected pairs into a symmetric 0/1 matrix, rejecting
/// self-loops, out-of-range endpoints, and duplicates (in either order).
fn pairs_to_matrix(
    pairs: &[(usize, usize)],
    n: usize,
    line: usize,
    what: &str,
) -> Result<Array2<f64>, DatasetError> {
    let mut m = Array2::zeros((n, n));
    let mut seen = HashSet::new();
    for &(u, v) in pairs {
        if u == v {
            return Err(line_err(line, format!("{what} [{u},{v}] is a self-loop")));
        }
        if u >= n || v >= n {
            return Err(line_err(
                line,
                format!("{what} [{u},{v}] out of range for n = {n}"),
            ));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(line_err(line, format!("duplicate {what} [{u},{v}]")));
        }
        m[(u, v)] = 1.0;
        m[(v, u)] = 1.0;
    }
    Ok(m)
}

/// Loads a JSONL dataset. The dataset name is the file stem, so the round
/// trip `load(save(ds))` reproduces `ds` when the file is named after it.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonGraph =
            serde_json::from_str(&line).map_err(|e| line_err(lineno, e.to_string()))?;
        if parsed.n == 0 {
            return Err(line_err(lineno, "graph must have at least one node"));
        }
        let adjacency = pairs_to_matrix(&parsed.edges, parsed.n, lineno, "edge")?;
        let gt = match &parsed.gt_edges {
            Some(pairs) => Some(pairs_to_matrix(pairs, parsed.n, lineno, "gt edge")?),
            None => None,
        };
        if parsed.x.len() != parsed.n {
            return Err(line_err(
                lineno,
                format!("x has {} rows, expected n = {}", parsed.x.len(), parsed.n),
            ));
        }
        let width = parsed.x.first().map_or(0, |r| r.len());
        if parsed.x.iter().any(|r| r.len() != width) {
            return Err(line_err(lineno, "x rows have inconsistent widths"));
        }
        let mut features = Array2::zeros((parsed.n, width));
        for (r, row) in parsed.x.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                features[(r, c)] = v;
            }
        }
        let graph = Graph::new(adjacency, features, Some(parsed.y), gt)
            .map_err(|e| line_err(lineno, e.to_string()))?;
        graphs.push(graph);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::new(name, graphs)
}

/// Writes a dataset as JSONL, one graph per line, edges listed once (u < v).
pub fn save_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for (index, g) in ds.graphs().iter().enumerate() {
        let y = g.label().ok_or(DatasetError::Unlabeled { index })?;
        let x: Vec<Vec<f64>> = (0..g.num_nodes())
            .map(|i| g.features().row(i).to_vec())
            .collect();
        let record = JsonGraph {
            n: g.num_nodes(),
            edges: g.edges(),
            x,
            y,
            gt_edges: g.gt_edges(),
        };
        let json = serde_json::to_string(&record).expect("graph record serializes");
        writer.write_all(json.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn is_connected(g: &Graph) -> bool {
        let n = g.num_nodes();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if g.adjacency()[(u, v)] > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    #[test]
    fn ba2motifs_is_deterministic() {
        let a = generate_ba2motifs(10, 20, 7).unwrap();
        let b = generate_ba2motifs(10, 20, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_ba2motifs(10, 20, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ba2motifs_has_25_nodes_with_default_base() {
        let ds = generate_ba2motifs(100, 20, 0).unwrap();
        let mean: f64 = ds
            .graphs()
            .iter()
            .map(|g| g.num_nodes() as f64)
            .sum::<f64>()
            / ds.len() as f64;
        assert_eq!(mean, 25.0);
    }

    #[test]
    fn ba2motifs_classes_and_ground_truth() {
        let ds = generate_ba2motifs(20, 20, 3).unwrap();
        let houses = ds.graphs().iter().filter(|g| g.label() == Some(0)).count();
        let cycles = ds.graphs().iter().filter(|g| g.label() == Some(1)).count();
        assert_eq!(houses, 10);
        assert_eq!(cycles, 10);
        for g in ds.graphs() {
            let gt = g.gt_edges().expect("synthetic graphs carry ground truth");
            let expected = if g.label() == Some(0) { 6 } else { 5 };
            assert_eq!(gt.len(), expected);
            // Ground truth lives entirely in the motif block appended after
            // the 20 base nodes.
            assert!(gt.iter().all(|&(u, v)| u >= 20 && v >= 20));
            assert!(is_connected(g));
        }
    }

    #[test]
    fn ba2motifs_rejects_bad_arguments() {
        assert!(matches!(
            generate_ba2motifs(9, 20, 0),
            Err(DatasetError::UnbalancedClassCount { .. })
        ));
        assert!(matches!(
            generate_ba2motifs(0, 20, 0),
            Err(DatasetError::UnbalancedClassCount { .. })
        ));
        assert!(matches!(
            generate_ba2motifs(10, 4, 0),
            Err(DatasetError::BaseTooSmall { .. })
        ));
    }

    #[test]
    fn ba3motifs_balanced_with_grid_ground_truth() {
        let ds = generate_ba3motifs(30, 15, 1).unwrap();
        for class in 0..3 {
            let count = ds
                .graphs()
                .iter()
                .filter(|g| g.label() == Some(class))
                .count();
            assert_eq!(count, 10);
        }
        for g in ds.graphs() {
            if g.label() == Some(2) {
                assert_eq!(g.gt_edges().unwrap().len(), 12);
            }
            assert!(is_connected(g));
        }
    }

    #[test]
    fn ba3motifs_mean_nodes_matches_benchmark_scale() {
        let ds = generate_ba3motifs(3000, 15, 0).unwrap();
        let mean: f64 = ds
            .graphs()
            .iter()
            .map(|g| g.num_nodes() as f64)
            .sum::<f64>()
            / ds.len() as f64;
        assert!(
            (mean - 21.92).abs() < 0.5,
            "mean node count {mean} too far from 21.92"
        );
    }

    #[test]
    fn splits_are_stratified_disjoint_and_cover() {
        let ds = generate_ba2motifs(100, 20, 5).unwrap();
        let s = ds.splits();
        assert_eq!(s.train.len(), 80);
        assert_eq!(s.val.len(), 10);
        assert_eq!(s.test.len(), 10);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .cloned()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        // Stratification: each split is half class 0, half class 1.
        for part in [&s.train, &s.val, &s.test] {
            let c0 = part
                .iter()
                .filter(|&&i| ds.graph(i).label() == Some(0))
                .count();
            assert_eq!(c0 * 2, part.len());
        }
    }

    #[test]
    fn jsonl_round_trip_is_identity() {
        let ds = generate_ba2motifs(10, 20, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ba2motifs.jsonl");
        save_jsonl(&ds, &path).unwrap();
        let loaded = load_jsonl(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn jsonl_rejects_self_loop_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            r#"{"n": 2, "edges": [[0,0]], "x": [[1.0],[1.0]], "y": 0}"#,
        )
        .unwrap();
        let err = load_jsonl(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "missing line number: {msg}");
        assert!(msg.contains("self-loop"), "missing cause: {msg}");
    }

    #[test]
    fn jsonl_rejects_missing_label_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, r#"{"n": 1, "edges": [], "x": [[1.0]]}"#).unwrap();
        let err = load_jsonl(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('y'), "error should name the field: {msg}");
        assert!(msg.contains("line 1"), "missing line number: {msg}");
    }

    #[test]
    fn jsonl_rejects_gt_edge_outside_support() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"n\": 3, \"edges\": [[0,1]], \"x\": [[1.0],[1.0],[1.0]], \"y\": 0, \"gt_edges\": [[1,2]]}\n",
        )
        .unwrap();
        let err = load_jsonl(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Line { line: 1, .. }));
    }

    #[test]
    fn jsonl_rejects_duplicate_edge_any_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            r#"{"n": 2, "edges": [[0,1],[1,0]], "x": [[1.0],[1.0]], "y": 0}"#,
        )
        .unwrap();
        let err = load_jsonl(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate"), "{msg}");
    }

    #[test]
    fn jsonl_reports_malformed_json_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = r#"{"n": 1, "edges": [], "x": [[1.0]], "y": 0}"#;
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        let err = load_jsonl(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Line { line: 2, .. }));
    }

    #[test]
    fn motif_edge_counts_match_their_definitions() {
        assert_eq!(MotifSpec::house().edges.len(), 6);
        assert_eq!(MotifSpec::house().num_nodes, 5);
        assert_eq!(MotifSpec::cycle5().edges.len(), 5);
        assert_eq!(MotifSpec::grid3x3().edges.len(), 12);
        assert_eq!(MotifSpec::grid3x3().num_nodes, 9);
    }
}
