//! Graph representation, perturbation candidates and mask application.
//!
//! Adjacency matrices are stored densely. The perturbed graph is
//! `A' = A + C_exist ∘ S_exist + C_new ∘ S_new`, where `C_exist` holds `-1`
//! on every existing edge and `C_new` holds `+1` on every missing off-diagonal
//! entry.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An edge as an ordered `(source, target)` pair.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphFile", try_from = "GraphFile")]
pub struct Graph {
    n: usize,
    adjacency: Array2<f64>,
    directed: bool,
    features: Array2<f64>,
    node_labels: Option<Vec<usize>>,
    label_names: Option<Vec<String>>,
    sensitive: Option<Vec<u8>>,
}

impl Graph {
    /// Builds a graph from an edge list. Duplicate edges are merged; self
    /// loops are rejected. For undirected graphs each edge is mirrored.
    pub fn from_edges(
        n: usize,
        directed: bool,
        edges: &[Edge],
        features: Array2<f64>,
    ) -> Result<Self> {
        let mut adjacency = Array2::zeros((n, n));
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i},{j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self loop at node {i}")));
            }
            adjacency[[i, j]] = 1.0;
            if !directed {
                adjacency[[j, i]] = 1.0;
            }
        }
        Self::from_adjacency(adjacency, directed, features)
    }

    pub fn from_adjacency(
        adjacency: Array2<f64>,
        directed: bool,
        features: Array2<f64>,
    ) -> Result<Self> {
        let n = adjacency.nrows();
        let g = Graph {
            n,
            adjacency,
            directed,
            features,
            node_labels: None,
            label_names: None,
            sensitive: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::InvalidGraph(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Self {
        self.label_names = Some(names);
        self
    }

    pub fn with_sensitive(mut self, sensitive: Vec<u8>) -> Result<Self> {
        if sensitive.len() != self.n || sensitive.iter().any(|&s| s > 1) {
            return Err(Error::InvalidGraph(
                "sensitive attribute must be a binary vector of length n".into(),
            ));
        }
        self.sensitive = Some(sensitive);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        if self.adjacency.ncols() != n {
            return Err(Error::InvalidGraph("adjacency must be square".into()));
        }
        if self.features.nrows() != n {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows, expected {n}",
                self.features.nrows()
            )));
        }
        for ((i, j), &v) in self.adjacency.indexed_iter() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidGraph(format!(
                    "non-binary entry at ({i},{j})"
                )));
            }
            if i == j && v != 0.0 {
                return Err(Error::InvalidGraph(format!("self loop at node {i}")));
            }
            if !self.directed && v != self.adjacency[[j, i]] {
                return Err(Error::InvalidGraph(format!(
                    "undirected adjacency not symmetric at ({i},{j})"
                )));
            }
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGraph("non-finite feature".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    pub fn sensitive(&self) -> Option<&[u8]> {
        self.sensitive.as_deref()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[[i, j]] != 0.0
    }

    /// Edges of the graph; undirected edges are reported once with `i < j`.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.adjacency[[i, j]] != 0.0 && (self.directed || i < j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        let total = self.adjacency.iter().filter(|&&v| v != 0.0).count();
        if self.directed {
            total
        } else {
            total / 2
        }
    }

    /// Canonical form of an edge for this graph's directedness.
    pub fn canonical(&self, (i, j): Edge) -> Edge {
        if self.directed || i < j {
            (i, j)
        } else {
            (j, i)
        }
    }

    /// Returns a copy with the given discrete edits applied. Every removal
    /// must be an existing edge and every addition a missing off-diagonal
    /// entry.
    pub fn with_edits(&self, additions: &[Edge], removals: &[Edge]) -> Result<Graph> {
        let mut g = self.clone();
        for &(i, j) in removals {
            self.check_pair(i, j)?;
            if !self.has_edge(i, j) {
                return Err(Error::InvalidMask(format!(
                    "cannot remove missing edge ({i},{j})"
                )));
            }
            g.set_edge(i, j, 0.0);
        }
        for &(i, j) in additions {
            self.check_pair(i, j)?;
            if self.has_edge(i, j) {
                return Err(Error::InvalidMask(format!(
                    "cannot add existing edge ({i},{j})"
                )));
            }
            g.set_edge(i, j, 1.0);
        }
        Ok(g)
    }

    /// Same as [`Graph::with_edits`] but skips entries that are already in
    /// the requested state.
    pub fn with_edits_lenient(&self, additions: &[Edge], removals: &[Edge]) -> Result<Graph> {
        let mut g = self.clone();
        for &(i, j) in removals {
            self.check_pair(i, j)?;
            g.set_edge(i, j, 0.0);
        }
        for &(i, j) in additions {
            self.check_pair(i, j)?;
            g.set_edge(i, j, 1.0);
        }
        Ok(g)
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.n || j >= self.n || i == j {
            return Err(Error::InvalidMask(format!(
                "({i},{j}) is not a candidate edge"
            )));
        }
        Ok(())
    }

    fn set_edge(&mut self, i: usize, j: usize, v: f64) {
        self.adjacency[[i, j]] = v;
        if !self.directed {
            self.adjacency[[j, i]] = v;
        }
    }

    /// Nodes within `hops` steps of any seed, following edges in either
    /// direction. Sorted ascending.
    pub fn k_hop_nodes(&self, seeds: &[usize], hops: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = VecDeque::new();
        for &s in seeds {
            if dist[s] == usize::MAX {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            if dist[u] == hops {
                continue;
            }
            for w in 0..self.n {
                if dist[w] == usize::MAX
                    && (self.adjacency[[u, w]] != 0.0 || self.adjacency[[w, u]] != 0.0)
                {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        (0..self.n).filter(|&v| dist[v] != usize::MAX).collect()
    }

    /// Induced subgraph on `nodes` (which must be sorted and unique). Labels
    /// and sensitive attributes are carried over.
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let m = nodes.len();
        let mut adjacency = Array2::zeros((m, m));
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                adjacency[[a, b]] = self.adjacency[[i, j]];
            }
        }
        let features = self.features.select(Axis(0), nodes);
        Graph {
            n: m,
            adjacency,
            directed: self.directed,
            features,
            node_labels: self
                .node_labels
                .as_ref()
                .map(|l| nodes.iter().map(|&v| l[v]).collect()),
            label_names: self.label_names.clone(),
            sensitive: self
                .sensitive
                .as_ref()
                .map(|s| nodes.iter().map(|&v| s[v]).collect()),
        }
    }

    /// Replaces the feature matrix, keeping topology and labels.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Graph> {
        let mut g = self.clone();
        g.features = features;
        g.validate()?;
        Ok(g)
    }
}

/// Signed candidate matrices: `c_exist ∈ {-1, 0}`, `c_new ∈ {0, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpace {
    pub c_exist: Array2<f64>,
    pub c_new: Array2<f64>,
    directed: bool,
}

impl PerturbationSpace {
    pub fn n(&self) -> usize {
        self.c_exist.nrows()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Restricts both supports to entries where `keep(i, j)` holds.
    pub fn restrict(&mut self, keep: impl Fn(usize, usize) -> bool) {
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                if !keep(i, j) {
                    self.c_exist[[i, j]] = 0.0;
                    self.c_new[[i, j]] = 0.0;
                }
            }
        }
    }

    /// Disables edge additions (sub-graph explanations only).
    pub fn without_additions(mut self) -> Self {
        self.c_new.fill(0.0);
        self
    }

    pub fn without_removals(mut self) -> Self {
        self.c_exist.fill(0.0);
        self
    }

    pub fn exist_support(&self) -> usize {
        self.c_exist.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn new_support(&self) -> usize {
        self.c_new.iter().filter(|&&v| v != 0.0).count()
    }
}

pub fn perturbation_candidates(graph: &Graph) -> PerturbationSpace {
    let n = graph.n();
    let a = graph.adjacency();
    let mut c_exist = Array2::zeros((n, n));
    let mut c_new = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // C = (11ᵀ - I - A) - A
            let c = (1.0 - a[[i, j]]) - a[[i, j]];
            if c < 0.0 {
                c_exist[[i, j]] = c;
            } else {
                c_new[[i, j]] = c;
            }
        }
    }
    PerturbationSpace {
        c_exist,
        c_new,
        directed: graph.is_directed(),
    }
}

/// Continuous edge-selection variables over the candidate supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub s_exist: Array2<f64>,
    pub s_new: Array2<f64>,
}

impl Mask {
    pub fn zeros(n: usize) -> Self {
        Mask {
            s_exist: Array2::zeros((n, n)),
            s_new: Array2::zeros((n, n)),
        }
    }

    /// Mask with `value` on every supported entry.
    pub fn filled(space: &PerturbationSpace, value: f64) -> Self {
        Mask {
            s_exist: space.c_exist.mapv(|c| if c != 0.0 { value } else { 0.0 }),
            s_new: space.c_new.mapv(|c| if c != 0.0 { value } else { 0.0 }),
        }
    }

    pub fn n(&self) -> usize {
        self.s_exist.nrows()
    }

    pub fn validate(&self, space: &PerturbationSpace) -> Result<()> {
        let n = space.n();
        if self.s_exist.dim() != (n, n) || self.s_new.dim() != (n, n) {
            return Err(Error::Dimension(format!("mask must be {n}x{n}")));
        }
        for (s, c, name) in [
            (&self.s_exist, &space.c_exist, "s_exist"),
            (&self.s_new, &space.c_new, "s_new"),
        ] {
            for ((i, j), &v) in s.indexed_iter() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidMask(format!(
                        "{name}({i},{j}) = {v} outside [0,1]"
                    )));
                }
                if v != 0.0 && c[[i, j]] == 0.0 {
                    return Err(Error::InvalidMask(format!(
                        "{name}({i},{j}) is off-support"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Clamps to `[0,1]`, zeroes off-support entries and (for undirected
    /// spaces) averages with the transpose.
    pub fn project(&mut self, space: &PerturbationSpace) {
        for (s, c) in [
            (&mut self.s_exist, &space.c_exist),
            (&mut self.s_new, &space.c_new),
        ] {
            if !space.is_directed() {
                let t = s.t().to_owned();
                *s += &t;
                *s *= 0.5;
            }
            ndarray::Zip::from(s).and(c).for_each(|v, &c| {
                *v = if c == 0.0 { 0.0 } else { v.clamp(0.0, 1.0) };
            });
        }
    }
}

/// `A' = A + C_exist ∘ S_exist + C_new ∘ S_new`.
pub fn apply_mask(graph: &Graph, space: &PerturbationSpace, mask: &Mask) -> Result<Array2<f64>> {
    mask.validate(space)?;
    Ok(apply_mask_unchecked(graph.adjacency(), space, mask))
}

pub(crate) fn apply_mask_unchecked(
    a: &Array2<f64>,
    space: &PerturbationSpace,
    mask: &Mask,
) -> Array2<f64> {
    let mut out = a.clone();
    out += &(&space.c_exist * &mask.s_exist);
    out += &(&space.c_new * &mask.s_new);
    out
}

/// Symmetric degree normalization with self loops, plus the per-node
/// `d̂^{-1/2}` factors needed for backpropagation.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    pub a_tilde: Array2<f64>,
    pub inv_sqrt_degree: Array1<f64>,
}

/// `Ã = D̂^{-1/2} (A' + I) D̂^{-1/2}` with `D̂` the row sums of `A' + I`.
pub fn normalize_adjacency(a_prime: &Array2<f64>) -> Array2<f64> {
    normalize_with_degrees(a_prime).a_tilde
}

pub fn normalize_with_degrees(a_prime: &Array2<f64>) -> NormalizedAdjacency {
    let n = a_prime.nrows();
    let mut a_hat = a_prime.clone();
    for i in 0..n {
        a_hat[[i, i]] += 1.0;
    }
    let inv_sqrt_degree: Array1<f64> = a_hat.sum_axis(Axis(1)).mapv(|d| 1.0 / d.sqrt());
    for ((i, j), v) in a_hat.indexed_iter_mut() {
        *v *= inv_sqrt_degree[i] * inv_sqrt_degree[j];
    }
    NormalizedAdjacency {
        a_tilde: a_hat,
        inv_sqrt_degree,
    }
}

/// On-disk graph format: edge lists plus dense features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub directed: bool,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive: Option<Vec<u8>>,
}

impl From<&Graph> for GraphFile {
    fn from(g: &Graph) -> Self {
        GraphFile {
            n: g.n,
            directed: g.directed,
            edges: g.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            features: matrix_to_rows(&g.features),
            labels: g.node_labels.clone(),
            label_names: g.label_names.clone(),
            sensitive: g.sensitive.clone(),
        }
    }
}

impl From<Graph> for GraphFile {
    fn from(g: Graph) -> Self {
        GraphFile::from(&g)
    }
}

impl TryFrom<GraphFile> for Graph {
    type Error = Error;

    fn try_from(f: GraphFile) -> Result<Graph> {
        let features = rows_to_matrix(&f.features, f.n)?;
        let mut seen = BTreeSet::new();
        let mut edges = Vec::with_capacity(f.edges.len());
        for [i, j] in f.edges {
            if i == j {
                return Err(Error::InvalidGraph(format!(
                    "diagonal entry ({i},{i}) in edge list"
                )));
            }
            let key = if f.directed || i < j { (i, j) } else { (j, i) };
            if seen.insert(key) {
                edges.push(key);
            }
        }
        let mut g = Graph::from_edges(f.n, f.directed, &edges, features)?;
        if let Some(labels) = f.labels {
            g = g.with_labels(labels)?;
        }
        if let Some(names) = f.label_names {
            g = g.with_label_names(names);
        }
        if let Some(s) = f.sensitive {
            g = g.with_sensitive(s)?;
        }
        Ok(g)
    }
}

impl Graph {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GraphFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Graph> {
        let f: GraphFile = serde_json::from_str(s)?;
        Graph::try_from(f)
    }
}

pub fn matrix_to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Converts nested rows into a matrix with `n` rows. An empty row list
/// yields an `n x 0` matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>], n: usize) -> Result<Array2<f64>> {
    if rows.len() != n {
        return Err(Error::Dimension(format!(
            "{} feature rows for {n} nodes",
            rows.len()
        )));
    }
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Dimension("ragged feature rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((n, width), flat).map_err(|e| Error::Dimension(e.to_string()))
}
