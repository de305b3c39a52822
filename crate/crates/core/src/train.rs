//! Full-batch Adam training for [`GcnModel`].

use ndarray::{Array2, Ix1, Ix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{cross_entropy_logit_grad, GcnModel, Gradients, Head, Readout, Target};
use crate::graph::Graph;
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub weight_decay: f64,
    /// Independent initialisations tried (seeds `seed, seed+1, ...`); the
    /// one with the best training accuracy is kept.
    #[serde(default = "one")]
    pub restarts: usize,
    /// Half-width of the uniform hidden-bias initialisation.
    #[serde(default = "one_f")]
    pub bias_init: f64,
}

fn one_f() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            lr: 0.01,
            seed: 0,
            hidden_dims: vec![20, 20, 20],
            weight_decay: 0.0,
            restarts: 1,
            bias_init: 1.0,
        }
    }
}

impl TrainConfig {
    /// Two-layer default used for label-graph (multi-label) models.
    pub fn multilabel() -> Self {
        TrainConfig {
            hidden_dims: vec![16, 16],
            ..Default::default()
        }
    }
}

/// Labelled data for training.
pub enum TrainData<'a> {
    /// Node classification on one graph.
    Nodes {
        graph: &'a Graph,
        labels: &'a [usize],
        train: &'a [usize],
        test: &'a [usize],
    },
    /// Multi-label prediction: a shared label graph with one feature matrix
    /// per instance.
    Instances {
        graph: &'a Graph,
        features: &'a [Array2<f64>],
        labels: &'a [Vec<u8>],
        train: &'a [usize],
        test: &'a [usize],
    },
}

struct AdamSet {
    layers: Vec<Adam<Ix2>>,
    biases: Vec<Adam<Ix1>>,
    out_weight: Adam<Ix2>,
    out_bias: Adam<Ix1>,
}

impl AdamSet {
    fn new(model: &GcnModel, lr: f64) -> Self {
        AdamSet {
            layers: model
                .layers
                .iter()
                .map(|w| Adam::new(w.raw_dim(), lr))
                .collect(),
            biases: model
                .biases
                .iter()
                .map(|b| Adam::new(b.raw_dim(), lr))
                .collect(),
            out_weight: Adam::new(model.out_weight.raw_dim(), lr),
            out_bias: Adam::new(model.out_bias.raw_dim(), lr),
        }
    }

    fn step(&mut self, model: &mut GcnModel, g: &Gradients) {
        for ((opt, w), gw) in self.layers.iter_mut().zip(&mut model.layers).zip(&g.layers) {
            opt.descend(w, gw);
        }
        for ((opt, b), gb) in self.biases.iter_mut().zip(&mut model.biases).zip(&g.biases) {
            opt.descend(b, gb);
        }
        self.out_weight
            .descend(&mut model.out_weight, &g.out_weight);
        self.out_bias.descend(&mut model.out_bias, &g.out_bias);
    }
}

/// Trains a model; deterministic for a fixed seed.
pub fn train(data: &TrainData<'_>, config: &TrainConfig) -> Result<GcnModel> {
    if config.epochs == 0 || config.lr <= 0.0 || config.restarts == 0 {
        return Err(Error::InvalidConfig(
            "epochs, lr and restarts must be positive".into(),
        ));
    }
    let mut best: Option<GcnModel> = None;
    for k in 0..config.restarts {
        let model = train_once(data, config, config.seed.wrapping_add(k as u64))?;
        if best
            .as_ref()
            .is_none_or(|b| model.meta.train_accuracy > b.meta.train_accuracy)
        {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn train_once(data: &TrainData<'_>, config: &TrainConfig, seed: u64) -> Result<GcnModel> {
    let mut model = match data {
        TrainData::Nodes {
            graph,
            labels,
            train,
            ..
        } => {
            if train.is_empty() {
                return Err(Error::InvalidConfig("empty training split".into()));
            }
            if labels.len() != graph.n() {
                return Err(Error::InvalidTarget("one label per node required".into()));
            }
            let k = labels.iter().max().map_or(1, |m| m + 1).max(2);
            let mut dims = vec![graph.features().ncols()];
            dims.extend(&config.hidden_dims);
            GcnModel::init_with_bias(&dims, k, Head::NodeSoftmax, seed, config.bias_init)?
        }
        TrainData::Instances {
            graph,
            features,
            labels,
            train,
            ..
        } => {
            if train.is_empty() || features.len() != labels.len() {
                return Err(Error::InvalidConfig(
                    "instances and labels must align and be non-empty".into(),
                ));
            }
            let width = features[0].ncols();
            if features.iter().any(|x| x.dim() != (graph.n(), width)) {
                return Err(Error::Dimension("instance feature shapes differ".into()));
            }
            let mut dims = vec![width];
            dims.extend(&config.hidden_dims);
            GcnModel::init_with_bias(
                &dims,
                1,
                Head::GraphMultilabelSigmoid,
                seed,
                config.bias_init,
            )?
        }
    };
    let mut opt = AdamSet::new(&model, config.lr);
    for epoch in 0..config.epochs {
        let (value, mut grads) = epoch_gradient(&model, data)?;
        if !value.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite {
                step: epoch,
                what: format!("training loss {value}"),
            });
        }
        if config.weight_decay > 0.0 {
            for (g, w) in grads.layers.iter_mut().zip(&model.layers) {
                g.scaled_add(config.weight_decay, w);
            }
        }
        opt.step(&mut model, &grads);
    }
    model.meta.epochs = config.epochs;
    let (train_split, test_split) = match data {
        TrainData::Nodes { train, test, .. } | TrainData::Instances { train, test, .. } => {
            (*train, *test)
        }
    };
    model.meta.train_accuracy = Some(accuracy(&model, data, train_split)?);
    model.meta.accuracy = if test_split.is_empty() {
        None
    } else {
        Some(accuracy(&model, data, test_split)?)
    };
    Ok(model)
}

fn epoch_gradient(model: &GcnModel, data: &TrainData<'_>) -> Result<(f64, Gradients)> {
    match data {
        TrainData::Nodes {
            graph,
            labels,
            train,
            ..
        } => {
            let targets: Vec<_> = train
                .iter()
                .map(|&v| (Readout::Node(v), Target::Class(labels[v])))
                .collect();
            let cache = model.forward_cached(graph.adjacency(), graph.features())?;
            let (value, dlogits) = cross_entropy_logit_grad(&cache.output, &targets)?;
            let (g, _) = model.backward(&cache, &dlogits, true, false);
            Ok((value, g.expect("weights requested")))
        }
        TrainData::Instances {
            graph,
            features,
            labels,
            train,
            ..
        } => {
            let mut total = Gradients::zeros_like(model);
            let mut value = 0.0;
            for &i in train.iter() {
                let cache = model.forward_cached(graph.adjacency(), &features[i])?;
                let targets = [(Readout::Graph, Target::Labels(labels[i].clone()))];
                let (v, dlogits) = cross_entropy_logit_grad(&cache.output, &targets)?;
                let (g, _) = model.backward(&cache, &dlogits, true, false);
                total.add_assign(&g.expect("weights requested"));
                value += v;
            }
            let scale = 1.0 / train.len() as f64;
            total.scale(scale);
            Ok((value * scale, total))
        }
    }
}

/// Fraction of `split` predicted correctly: argmax for node tasks, top-1
/// label inside the true set for multi-label tasks.
pub fn accuracy(model: &GcnModel, data: &TrainData<'_>, split: &[usize]) -> Result<f64> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let hits = match data {
        TrainData::Nodes { graph, labels, .. } => {
            let out = model.output(graph.adjacency(), graph.features())?;
            split
                .iter()
                .filter(|&&v| out.prediction(Readout::Node(v)).top1() == labels[v])
                .count()
        }
        TrainData::Instances {
            graph,
            features,
            labels,
            ..
        } => {
            let mut hits = 0;
            for &i in split {
                let p = model.predict_with(graph.adjacency(), &features[i], Readout::Graph)?;
                if labels[i][p.top1()] == 1 {
                    hits += 1;
                }
            }
            hits
        }
    };
    Ok(hits as f64 / split.len() as f64)
}
