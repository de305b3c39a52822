use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{rng, split};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};

/// Multi-label instances sharing one directed label co-occurrence graph.
///
/// Each instance's features hold one row per label: a noisy label
/// presence indicator followed by a constant 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelDataset {
    pub graph: Graph,
    pub instances: Vec<Array2<f64>>,
    pub labels: Vec<Vec<u8>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MultiLabelDataset {
    pub fn true_labels(&self, instance: usize) -> Vec<usize> {
        self.labels[instance]
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == 1)
            .map(|(c, _)| c)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiLabelConfig {
    pub n_labels: usize,
    pub n_instances: usize,
    pub cooccurrence_threshold: f64,
    pub n_topics: usize,
    pub topic_size: usize,
    /// Chance that each label of an active topic is present.
    pub topic_label_prob: f64,
    /// Chance of any label appearing outside its topics.
    pub background_prob: f64,
    /// Chance that a present label's indicator is zeroed.
    pub feature_drop: f64,
    pub feature_noise: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for MultiLabelConfig {
    fn default() -> Self {
        MultiLabelConfig {
            n_labels: 20,
            n_instances: 500,
            cooccurrence_threshold: 0.4,
            n_topics: 5,
            topic_size: 5,
            topic_label_prob: 0.7,
            background_prob: 0.02,
            feature_drop: 0.4,
            feature_noise: 0.3,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

/// Directed edge `i -> j` whenever `P(j | i) >= threshold` over `label_sets`.
pub fn cooccurrence_graph(n_labels: usize, label_sets: &[&[u8]], threshold: f64) -> Vec<Edge> {
    let mut count = vec![0usize; n_labels];
    let mut joint = Array2::<usize>::zeros((n_labels, n_labels));
    for y in label_sets {
        let present: Vec<usize> = (0..n_labels).filter(|&c| y[c] == 1).collect();
        for &i in &present {
            count[i] += 1;
            for &j in &present {
                joint[[i, j]] += 1;
            }
        }
    }
    let mut edges = Vec::new();
    for i in 0..n_labels {
        if count[i] == 0 {
            continue;
        }
        for j in 0..n_labels {
            if i != j && joint[[i, j]] as f64 / count[i] as f64 >= threshold {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// One row per label: the noisy presence indicator and a constant 1.
pub(crate) fn indicator_features(indicator: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((indicator.len(), 2), |(i, k)| {
        if k == 0 {
            indicator[i]
        } else {
            1.0
        }
    })
}

/// Latent topics generate label sets; the label graph is built from
/// co-occurrence over the training split.
pub fn gen_multilabel(config: &MultiLabelConfig) -> Result<MultiLabelDataset> {
    let c = config;
    if c.n_labels < 2 || c.n_instances < 2 || c.n_topics == 0 {
        return Err(Error::InvalidConfig(
            "need at least 2 labels, 2 instances and 1 topic".into(),
        ));
    }
    if c.topic_size == 0 || c.topic_size > c.n_labels {
        return Err(Error::InvalidConfig(
            "topic_size must be in 1..=n_labels".into(),
        ));
    }
    for p in [
        c.topic_label_prob,
        c.background_prob,
        c.feature_drop,
        c.train_frac,
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(
                "probabilities must lie in [0,1]".into(),
            ));
        }
    }
    let noise =
        Normal::new(0.0, c.feature_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = rng(c.seed);
    let topics: Vec<Vec<usize>> = (0..c.n_topics)
        .map(|_| sample(&mut rng, c.n_labels, c.topic_size).into_vec())
        .collect();

    let mut labels = Vec::with_capacity(c.n_instances);
    let mut instances = Vec::with_capacity(c.n_instances);
    for _ in 0..c.n_instances {
        let n_active = if c.n_topics > 1 && rng.random::<f64>() < 0.4 {
            2
        } else {
            1
        };
        let active = sample(&mut rng, c.n_topics, n_active).into_vec();
        let mut y = vec![0u8; c.n_labels];
        for &t in &active {
            for &l in &topics[t] {
                if rng.random::<f64>() < c.topic_label_prob {
                    y[l] = 1;
                }
            }
        }
        for yl in y.iter_mut() {
            if rng.random::<f64>() < c.background_prob {
                *yl = 1;
            }
        }
        if y.iter().all(|&v| v == 0) {
            let t = &topics[active[0]];
            y[t[rng.random_range(0..t.len())]] = 1;
        }
        let indicator: Vec<f64> = y
            .iter()
            .map(|&v| {
                let shown = v == 1 && rng.random::<f64>() >= c.feature_drop;
                f64::from(u8::from(shown)) + noise.sample(&mut rng)
            })
            .collect();
        instances.push(indicator_features(&indicator));
        labels.push(y);
    }
    let (train, test) = split(c.n_instances, c.train_frac, &mut rng);
    let train_sets: Vec<&[u8]> = train.iter().map(|&i| labels[i].as_slice()).collect();
    let edges = cooccurrence_graph(c.n_labels, &train_sets, c.cooccurrence_threshold);
    let mut warnings = Vec::new();
    if edges.is_empty() {
        warnings.push(format!(
            "co-occurrence threshold {} produced no edges",
            c.cooccurrence_threshold
        ));
    }
    let names = (0..c.n_labels).map(|l| format!("label_{l:02}")).collect();
    let graph = Graph::from_edges(
        c.n_labels,
        true,
        &edges,
        indicator_features(&vec![0.0; c.n_labels]),
    )?
    .with_label_names(names);
    Ok(MultiLabelDataset {
        graph,
        instances,
        labels,
        train,
        test,
        warnings,
    })
}
