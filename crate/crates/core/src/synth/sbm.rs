use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{rng, split};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};

/// Two-group social graph with a binary task label and a sensitive
/// attribute stored on the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedSocialDataset {
    pub graph: Graph,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl BiasedSocialDataset {
    pub fn labels(&self) -> &[usize] {
        self.graph
            .node_labels()
            .expect("social datasets are labelled")
    }

    pub fn sensitive(&self) -> &[u8] {
        self.graph
            .sensitive()
            .expect("social datasets carry a sensitive attribute")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub n_per_group: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    /// 0 makes labels independent of group; 1 makes group 0 all positive and
    /// group 1 all negative.
    pub label_group_correlation: f64,
    pub feature_dim: usize,
    /// Mean shift of the label-bearing feature half.
    pub label_signal: f64,
    /// Mean shift of the group-bearing feature half.
    pub group_signal: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            n_per_group: 200,
            p_intra: 0.05,
            p_inter: 0.005,
            label_group_correlation: 0.5,
            feature_dim: 8,
            label_signal: 0.5,
            group_signal: 0.5,
            train_frac: 0.5,
            seed: 0,
        }
    }
}

/// Two-block stochastic block model. Nodes `0..n_per_group` form group 0.
/// `P(y=1 | s) = (1 ± label_group_correlation) / 2`, plus for group 0 and
/// minus for group 1. Features are unit Gaussians whose first half is
/// shifted by `±label_signal` and second half by `±group_signal`.
pub fn gen_biased_sbm(config: &SbmConfig) -> Result<BiasedSocialDataset> {
    let prob = |p: f64| (0.0..=1.0).contains(&p);
    if !prob(config.p_intra) || !prob(config.p_inter) || !prob(config.train_frac) {
        return Err(Error::InvalidConfig(
            "probabilities must lie in [0,1]".into(),
        ));
    }
    if config.p_intra < config.p_inter {
        return Err(Error::InvalidConfig(
            "p_intra must be at least p_inter".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.label_group_correlation) {
        return Err(Error::InvalidConfig(
            "label_group_correlation must lie in [0,1]".into(),
        ));
    }
    if config.n_per_group == 0 || config.feature_dim < 2 {
        return Err(Error::InvalidConfig(
            "need nodes in both groups and feature_dim >= 2".into(),
        ));
    }
    let mut rng = rng(config.seed);
    let n = 2 * config.n_per_group;
    let sensitive: Vec<u8> = (0..n).map(|v| u8::from(v >= config.n_per_group)).collect();
    let labels: Vec<usize> = sensitive
        .iter()
        .map(|&s| {
            let sign = if s == 0 { 1.0 } else { -1.0 };
            let p = 0.5 * (1.0 + sign * config.label_group_correlation);
            usize::from(rng.random::<f64>() < p)
        })
        .collect();
    let mut edges: Vec<Edge> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if sensitive[i] == sensitive[j] {
                config.p_intra
            } else {
                config.p_inter
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let half = config.feature_dim / 2;
    let features =
        Array2::from_shape_fn((n, config.feature_dim), |_| StandardNormal.sample(&mut rng));
    let mut features: Array2<f64> = features;
    for v in 0..n {
        let ysign = if labels[v] == 1 { 1.0 } else { -1.0 };
        let ssign = if sensitive[v] == 0 { 1.0 } else { -1.0 };
        for k in 0..config.feature_dim {
            features[[v, k]] += if k < half {
                ysign * config.label_signal
            } else {
                ssign * config.group_signal
            };
        }
    }
    let graph = Graph::from_edges(n, false, &edges, features)?
        .with_labels(labels)?
        .with_sensitive(sensitive)?;
    let (train, test) = split(n, config.train_frac, &mut rng);
    Ok(BiasedSocialDataset { graph, train, test })
}
