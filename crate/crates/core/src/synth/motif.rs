use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rng, split};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};

/// Node-classification graph with planted motifs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifDataset {
    pub family: String,
    /// Carries the role labels as node labels.
    pub graph: Graph,
    /// Edges internal to planted motifs, `i < j`. Attachment edges excluded.
    pub motif_edges: Vec<Edge>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl MotifDataset {
    pub fn labels(&self) -> &[usize] {
        self.graph
            .node_labels()
            .expect("motif datasets are labelled")
    }

    /// Nodes that belong to some motif.
    pub fn motif_nodes(&self) -> Vec<usize> {
        self.labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0)
            .map(|(v, _)| v)
            .collect()
    }

    pub fn is_motif_edge(&self, e: Edge) -> bool {
        let e = if e.0 < e.1 { e } else { (e.1, e.0) };
        self.motif_edges.binary_search(&e).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaShapesConfig {
    pub base_n: usize,
    pub ba_m: usize,
    pub n_motifs: usize,
    pub noise_edge_frac: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for BaShapesConfig {
    fn default() -> Self {
        BaShapesConfig {
            base_n: 300,
            ba_m: 5,
            n_motifs: 80,
            noise_edge_frac: 0.1,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub tree_depth: u32,
    pub n_motifs: usize,
    /// Cycle length for Tree-Cycles, grid side for Tree-Grid.
    pub motif_size: usize,
    pub noise_edge_frac: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl TreeConfig {
    pub fn cycles() -> Self {
        TreeConfig {
            tree_depth: 8,
            n_motifs: 80,
            motif_size: 6,
            noise_edge_frac: 0.0,
            train_frac: 0.8,
            seed: 0,
        }
    }

    pub fn grid() -> Self {
        TreeConfig {
            motif_size: 3,
            ..Self::cycles()
        }
    }
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self::cycles()
    }
}

struct Motif {
    size: usize,
    edges: Vec<Edge>,
    roles: Vec<usize>,
}

fn house() -> Motif {
    Motif {
        size: 5,
        edges: vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4)],
        roles: vec![1, 2, 2, 3, 3],
    }
}

fn cycle(len: usize) -> Motif {
    Motif {
        size: len,
        edges: (0..len).map(|k| (k, (k + 1) % len)).collect(),
        roles: vec![1; len],
    }
}

fn grid(side: usize) -> Motif {
    let id = |r: usize, c: usize| r * side + c;
    let mut edges = Vec::new();
    for r in 0..side {
        for c in 0..side {
            if c + 1 < side {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < side {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    Motif {
        size: side * side,
        edges,
        roles: vec![1; side * side],
    }
}

/// Preferential attachment: each new node links to `m` distinct existing
/// nodes drawn proportionally to degree.
fn barabasi_albert(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Edge> {
    let mut edges = Vec::new();
    let mut repeated: Vec<usize> = Vec::new();
    let mut targets: Vec<usize> = (0..m).collect();
    for source in m..n {
        for &t in &targets {
            edges.push((t, source));
        }
        repeated.extend(&targets);
        repeated.extend(std::iter::repeat_n(source, m));
        let mut picked = BTreeSet::new();
        while picked.len() < m {
            picked.insert(repeated[rng.random_range(0..repeated.len())]);
        }
        targets = picked.into_iter().collect();
    }
    edges
}

fn balanced_tree(depth: u32) -> (usize, Vec<Edge>) {
    let n = (1usize << depth) - 1;
    let edges = (1..n).map(|v| ((v - 1) / 2, v)).collect();
    (n, edges)
}

#[allow(clippy::too_many_arguments)]
fn attach(
    family: &str,
    base_n: usize,
    base_edges: Vec<Edge>,
    motif: &Motif,
    n_motifs: usize,
    noise_frac: f64,
    train_frac: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MotifDataset> {
    if !(0.0..=1.0).contains(&noise_frac) || !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::InvalidConfig("fractions must lie in [0,1]".into()));
    }
    let n = base_n + n_motifs * motif.size;
    let mut labels = vec![0usize; n];
    let mut group = vec![usize::MAX; n];
    let mut edges: BTreeSet<Edge> = base_edges
        .into_iter()
        .map(|(i, j)| (i.min(j), i.max(j)))
        .collect();
    let mut motif_edges = Vec::new();
    for k in 0..n_motifs {
        let offset = base_n + k * motif.size;
        for (local, &role) in motif.roles.iter().enumerate() {
            labels[offset + local] = role;
            group[offset + local] = k;
        }
        for &(a, b) in &motif.edges {
            let e = ((offset + a).min(offset + b), (offset + a).max(offset + b));
            edges.insert(e);
            motif_edges.push(e);
        }
        let anchor = rng.random_range(0..base_n);
        let local = rng.random_range(0..motif.size);
        edges.insert((anchor, offset + local));
    }
    let n_noise = (noise_frac * n as f64).floor() as usize;
    let max_edges = n * (n - 1) / 2;
    let mut added = 0;
    while added < n_noise && edges.len() < max_edges {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j || (group[i] != usize::MAX && group[i] == group[j]) {
            continue;
        }
        if edges.insert((i.min(j), i.max(j))) {
            added += 1;
        }
    }
    motif_edges.sort_unstable();
    let edge_list: Vec<Edge> = edges.into_iter().collect();
    let graph =
        Graph::from_edges(n, false, &edge_list, Array2::ones((n, 1)))?.with_labels(labels)?;
    let (train, test) = split(n, train_frac, rng);
    Ok(MotifDataset {
        family: family.to_string(),
        graph,
        motif_edges,
        train,
        test,
    })
}

/// Barabási–Albert base with attached five-node houses; classes are base,
/// house top, house middle, house bottom.
pub fn gen_ba_shapes(config: &BaShapesConfig) -> Result<MotifDataset> {
    if config.ba_m == 0 || config.ba_m >= config.base_n {
        return Err(Error::InvalidConfig(format!(
            "ba_m must satisfy 1 <= ba_m < base_n (got {} and {})",
            config.ba_m, config.base_n
        )));
    }
    let mut rng = rng(config.seed);
    let base = barabasi_albert(config.base_n, config.ba_m, &mut rng);
    attach(
        "ba_shapes",
        config.base_n,
        base,
        &house(),
        config.n_motifs,
        config.noise_edge_frac,
        config.train_frac,
        &mut rng,
    )
}

fn tree_family(family: &str, config: &TreeConfig, motif: Motif) -> Result<MotifDataset> {
    if config.tree_depth == 0 || config.tree_depth > 20 {
        return Err(Error::InvalidConfig("tree_depth must be in 1..=20".into()));
    }
    let mut rng = rng(config.seed);
    let (n, edges) = balanced_tree(config.tree_depth);
    attach(
        family,
        n,
        edges,
        &motif,
        config.n_motifs,
        config.noise_edge_frac,
        config.train_frac,
        &mut rng,
    )
}

/// Balanced binary tree with attached cycles; binary classes.
pub fn gen_tree_cycles(config: &TreeConfig) -> Result<MotifDataset> {
    if config.motif_size < 3 {
        return Err(Error::InvalidConfig("cycles need at least 3 nodes".into()));
    }
    tree_family("tree_cycles", config, cycle(config.motif_size))
}

/// Balanced binary tree with attached square grids; binary classes.
pub fn gen_tree_grid(config: &TreeConfig) -> Result<MotifDataset> {
    if config.motif_size < 2 {
        return Err(Error::InvalidConfig("grid side must be at least 2".into()));
    }
    tree_family("tree_grid", config, grid(config.motif_size))
}
