//! Graph containers and structural statistics.
//!
//! A [`Graph`] stores a dense symmetric adjacency matrix with entries in
//! [0, 1] and a zero diagonal, node features, and optionally a class label
//! and a binary ground-truth edge mask. An [`EdgeMask`] carries per-edge
//! weights living on the support of a host graph.
//!
//! Statistics (degree histogram, clustering, normalized Laplacian spectrum)
//! binarize soft adjacencies at 0.5 first, so they are comparable between
//! discrete graphs and generated soft ones.

use ndarray::Array2;
use thiserror::Error;

/// Tolerance for the symmetry check on adjacency matrices.
const SYMMETRY_TOL: f64 = 1e-8;

/// Threshold at which soft adjacencies are binarized for statistics.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("adjacency must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("graph must have at least one node")]
    Empty,
    #[error("adjacency entry ({u}, {v}) = {value} outside [0, 1]")]
    EntryOutOfRange { u: usize, v: usize, value: f64 },
    #[error("adjacency not symmetric at ({u}, {v}): {a} vs {b}")]
    NotSymmetric { u: usize, v: usize, a: f64, b: f64 },
    #[error("adjacency diagonal entry ({i}, {i}) = {value} must be zero")]
    NonzeroDiagonal { i: usize, value: f64 },
    #[error("feature matrix has {rows} rows, expected {expected}")]
    FeatureRowMismatch { rows: usize, expected: usize },
    #[error("ground-truth mask entry ({u}, {v}) = {value} is not binary")]
    MaskNotBinary { u: usize, v: usize, value: f64 },
    #[error("ground-truth mask marks ({u}, {v}) which is not an edge")]
    MaskOutsideSupport { u: usize, v: usize },
    #[error("mask shape {rows}x{cols} does not match host graph with {n} nodes")]
    MaskShapeMismatch { rows: usize, cols: usize, n: usize },
    #[error("mask weight at ({u}, {v}) = {value} outside [0, 1]")]
    MaskWeightOutOfRange { u: usize, v: usize, value: f64 },
    #[error("mask has weight {value} at ({u}, {v}) outside the host support")]
    MaskWeightOutsideSupport { u: usize, v: usize, value: f64 },
    #[error("degree {degree} exceeds histogram range {max_degree}")]
    DegreeOutOfRange { degree: usize, max_degree: usize },
}

/// Undirected graph with dense adjacency, node features, and optional
/// supervision. Immutable after construction; all invariants are checked
/// by [`Graph::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Array2<f64>,
    features: Array2<f64>,
    label: Option<usize>,
    gt_edge_mask: Option<Array2<f64>>,
}

impl Graph {
    /// Validates and assembles a graph.
    ///
    /// Requirements: square adjacency with entries in [0, 1], symmetric to
    /// 1e-8, zero diagonal; one feature row per node; the ground-truth mask,
    /// if given, binary, symmetric, and supported only on edges.
    pub fn new(
        adjacency: Array2<f64>,
        features: Array2<f64>,
        label: Option<usize>,
        gt_edge_mask: Option<Array2<f64>>,
    ) -> Result<Self, GraphError> {
        let (rows, cols) = adjacency.dim();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(GraphError::Empty);
        }
        let n = rows;
        for i in 0..n {
            let d = adjacency[(i, i)];
            if d != 0.0 {
                return Err(GraphError::NonzeroDiagonal { i, value: d });
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if !(0.0..=1.0).contains(&a) || !a.is_finite() {
                    return Err(GraphError::EntryOutOfRange { u: i, v: j, value: a });
                }
                if j > i {
                    let b = adjacency[(j, i)];
                    if (a - b).abs() > SYMMETRY_TOL {
                        return Err(GraphError::NotSymmetric { u: i, v: j, a, b });
                    }
                }
            }
        }
        if features.nrows() != n {
            return Err(GraphError::FeatureRowMismatch {
                rows: features.nrows(),
                expected: n,
            });
        }
        if let Some(mask) = &gt_edge_mask {
            if mask.dim() != (n, n) {
                return Err(GraphError::MaskShapeMismatch {
                    rows: mask.nrows(),
                    cols: mask.ncols(),
                    n,
                });
            }
            for i in 0..n {
                for j in 0..n {
                    let m = mask[(i, j)];
                    if m != 0.0 && m != 1.0 {
                        return Err(GraphError::MaskNotBinary { u: i, v: j, value: m });
                    }
                    if m == 1.0 && adjacency[(i, j)] == 0.0 {
                        return Err(GraphError::MaskOutsideSupport { u: i, v: j });
                    }
                    if j > i && m != mask[(j, i)] {
                        return Err(GraphError::MaskNotBinary {
                            u: j,
                            v: i,
                            value: mask[(j, i)],
                        });
                    }
                }
            }
        }
        Ok(Self {
            adjacency,
            features,
            label,
            gt_edge_mask,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn gt_edge_mask(&self) -> Option<&Array2<f64>> {
        self.gt_edge_mask.as_ref()
    }

    /// Undirected edges (u < v) with nonzero adjacency, lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if self.adjacency[(u, v)] > 0.0 {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Unordered node pairs (u < v) with zero adjacency, lexicographic order.
    pub fn non_edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if self.adjacency[(u, v)] == 0.0 {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    /// Ground-truth edges (u < v), if a mask is present.
    pub fn gt_edges(&self) -> Option<Vec<(usize, usize)>> {
        let mask = self.gt_edge_mask.as_ref()?;
        let n = self.num_nodes();
        let mut out = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if mask[(u, v)] == 1.0 {
                    out.push((u, v));
                }
            }
        }
        Some(out)
    }
}

/// Per-edge weights on the support of a host graph. Symmetric, zero outside
/// the support, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    weights: Array2<f64>,
    support: Vec<(usize, usize)>,
}

impl EdgeMask {
    /// Wraps a weight matrix for `host`, validating that weights live in
    /// [0, 1], are symmetric, and vanish outside the host's edge set.
    pub fn from_weights(host: &Graph, weights: Array2<f64>) -> Result<Self, GraphError> {
        let n = host.num_nodes();
        if weights.dim() != (n, n) {
            return Err(GraphError::MaskShapeMismatch {
                rows: weights.nrows(),
                cols: weights.ncols(),
                n,
            });
        }
        for u in 0..n {
            for v in 0..n {
                let w = weights[(u, v)];
                if !(0.0..=1.0).contains(&w) || !w.is_finite() {
                    return Err(GraphError::MaskWeightOutOfRange { u, v, value: w });
                }
                if w > 0.0 && host.adjacency()[(u, v)] == 0.0 {
                    return Err(GraphError::MaskWeightOutsideSupport { u, v, value: w });
                }
                if v > u && (w - weights[(v, u)]).abs() > SYMMETRY_TOL {
                    return Err(GraphError::NotSymmetric {
                        u,
                        v,
                        a: w,
                        b: weights[(v, u)],
                    });
                }
            }
        }
        Ok(Self {
            weights,
            support: host.edges(),
        })
    }

    /// Builds a mask from one weight per host edge, in host edge order.
    pub fn from_edge_weights(host: &Graph, per_edge: &[f64]) -> Result<Self, GraphError> {
        let support = host.edges();
        assert_eq!(
            per_edge.len(),
            support.len(),
            "one weight per host edge required"
        );
        let n = host.num_nodes();
        let mut weights = Array2::zeros((n, n));
        for (&(u, v), &w) in support.iter().zip(per_edge) {
            if !(0.0..=1.0).contains(&w) || !w.is_finite() {
                return Err(GraphError::MaskWeightOutOfRange { u, v, value: w });
            }
            weights[(u, v)] = w;
            weights[(v, u)] = w;
        }
        Ok(Self { weights, support })
    }

    /// The host graph's full adjacency as a mask (weight = adjacency entry).
    pub fn full(host: &Graph) -> Self {
        Self {
            weights: host.adjacency().clone(),
            support: host.edges(),
        }
    }

    /// The host's ground-truth mask, if present.
    pub fn from_ground_truth(host: &Graph) -> Option<Self> {
        host.gt_edge_mask().map(|m| Self {
            weights: m.clone(),
            support: host.edges(),
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Edges of the host graph this mask was built on, (u < v) ordered.
    pub fn support(&self) -> &[(usize, usize)] {
        &self.support
    }

    /// Weights in support order.
    pub fn edge_weights(&self) -> Vec<f64> {
        self.support
            .iter()
            .map(|&(u, v)| self.weights[(u, v)])
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.nrows()
    }

    /// Sum of weights over the support (each undirected edge counted once).
    pub fn total_weight(&self) -> f64 {
        self.edge_weights().iter().sum()
    }
}

/// Mask selecting what `mask` leaves out of `graph`: weight 1 - m on every
/// host edge, clipped to [0, 1].
pub fn complement_mask(graph: &Graph, mask: &EdgeMask) -> Result<EdgeMask, GraphError> {
    let n = graph.num_nodes();
    if mask.weights.dim() != (n, n) {
        return Err(GraphError::MaskShapeMismatch {
            rows: mask.weights.nrows(),
            cols: mask.weights.ncols(),
            n,
        });
    }
    // The mask must live on (a subset of) this graph's support.
    for &(u, v) in &mask.support {
        if graph.adjacency()[(u, v)] == 0.0 {
            return Err(GraphError::MaskWeightOutsideSupport {
                u,
                v,
                value: mask.weights[(u, v)],
            });
        }
    }
    let mut weights = Array2::zeros((n, n));
    for &(u, v) in &graph.edges() {
        let w = (graph.adjacency()[(u, v)] - mask.weights[(u, v)]).clamp(0.0, 1.0);
        weights[(u, v)] = w;
        weights[(v, u)] = w;
    }
    Ok(EdgeMask {
        weights,
        support: graph.edges(),
    })
}

/// Binarizes a soft adjacency at [`BINARIZE_THRESHOLD`].
pub fn binarize(adjacency: &Array2<f64>) -> Array2<f64> {
    adjacency.mapv(|x| if x > BINARIZE_THRESHOLD { 1.0 } else { 0.0 })
}

fn binary_degrees(adjacency: &Array2<f64>) -> Vec<usize> {
    let b = binarize(adjacency);
    (0..b.nrows())
        .map(|i| b.row(i).iter().filter(|&&x| x > 0.0).count())
        .collect()
}

/// Eigenvalues of the symmetric normalized Laplacian of the binarized
/// adjacency, ascending. Isolated nodes contribute eigenvalue 0 (their
/// Laplacian row is all zero). All values lie in [0, 2] up to numerics.
pub fn normalized_laplacian_spectrum(adjacency: &Array2<f64>) -> Vec<f64> {
    let b = binarize(adjacency);
    let n = b.nrows();
    let deg: Vec<f64> = (0..n).map(|i| b.row(i).sum()).collect();
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { d.powf(-0.5) } else { 0.0 })
        .collect();
    let mut l = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        if deg[i] > 0.0 {
            l[(i, i)] = 1.0;
        }
        for j in 0..n {
            if i != j && b[(i, j)] > 0.0 {
                l[(i, j)] = -inv_sqrt[i] * inv_sqrt[j];
            }
        }
    }
    let mut eig: Vec<f64> = l.symmetric_eigen().eigenvalues.iter().cloned().collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    eig
}

/// Local clustering coefficient per node on the binarized adjacency.
/// Nodes of degree < 2 get coefficient 0.
pub fn clustering_coefficients(adjacency: &Array2<f64>) -> Vec<f64> {
    let b = binarize(adjacency);
    let n = b.nrows();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let neighbors: Vec<usize> = (0..n).filter(|&j| b[(i, j)] > 0.0).collect();
        let k = neighbors.len();
        if k < 2 {
            continue;
        }
        let mut links = 0usize;
        for a in 0..k {
            for c in (a + 1)..k {
                if b[(neighbors[a], neighbors[c])] > 0.0 {
                    links += 1;
                }
            }
        }
        out[i] = 2.0 * links as f64 / (k as f64 * (k as f64 - 1.0));
    }
    out
}

/// Fraction of nodes at each binarized degree 0..=max_degree. Errors if any
/// observed degree exceeds `max_degree`.
pub fn degree_histogram(
    adjacency: &Array2<f64>,
    max_degree: usize,
) -> Result<Vec<f64>, GraphError> {
    let degrees = binary_degrees(adjacency);
    let mut counts = vec![0.0; max_degree + 1];
    for d in degrees {
        if d > max_degree {
            return Err(GraphError::DegreeOutOfRange {
                degree: d,
                max_degree,
            });
        }
        counts[d] += 1.0;
    }
    let n = adjacency.nrows() as f64;
    for c in &mut counts {
        *c /= n;
    }
    Ok(counts)
}

/// Maximum binarized degree over a set of adjacencies.
pub fn max_binary_degree<'a, I: IntoIterator<Item = &'a Array2<f64>>>(adjacencies: I) -> usize {
    adjacencies
        .into_iter()
        .flat_map(|a| binary_degrees(a))
        .max()
        .unwrap_or(0)
}
