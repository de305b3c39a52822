//! Workspace operations shared by the HTTP API and the CLI. Every function
//! is synchronous; callers run them on a blocking pool.

use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use topoexplain::explain::{group_explain, optimize_mask, ExplainConfig, Member, Mode};
use topoexplain::graph::GraphFile;
use topoexplain::metrics::{MetricRecord, WalkTest};
use topoexplain::protocol::{
    fairness_config, fairness_curve, motif_auc, multilabel_outcomes, promote_pvalue, summarize,
};
use topoexplain::synth::{
    gen_ba_shapes, gen_biased_sbm, gen_multilabel, gen_tree_cycles, gen_tree_grid, BaShapesConfig,
    Dataset, MultiLabelConfig, SbmConfig, TreeConfig,
};
use topoexplain::{train, Edge, GcnModel, Graph, Prediction, Readout, TrainConfig, TrainData};

use crate::error::{Result, ServiceError};
use crate::workspace::{sha256_hex, validate_id, Family, StoredDataset, Workspace};

pub struct Engine {
    ws: Workspace,
    /// Largest accepted `steps`; `None` accepts any.
    steps_cap: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct GenSummary {
    pub id: String,
    pub family: Family,
    pub path: String,
    pub nodes: usize,
    pub edges: usize,
    pub instances: usize,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub dataset: String,
    pub path: String,
    pub sha256: String,
    pub train_accuracy: Option<f64>,
    pub accuracy: Option<f64>,
    pub config: TrainConfig,
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    pub id: String,
    pub family: Family,
    pub nodes: usize,
    pub edges: usize,
    pub directed: bool,
    pub instances: usize,
    pub label_names: Option<Vec<String>>,
    pub has_model: bool,
}

#[derive(Debug, Serialize)]
pub struct GraphView {
    pub id: String,
    pub family: Family,
    pub graph: GraphFile,
    /// Planted motif edges, motif families only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motif_edges: Option<Vec<Edge>>,
}

#[derive(Debug, Serialize)]
pub struct InstanceView {
    pub id: usize,
    /// `train` or `test`.
    pub split: &'static str,
    pub truth: Vec<usize>,
    /// Absent until a model is trained.
    pub prediction: Option<Prediction>,
}

#[derive(Debug, Serialize)]
pub struct InstanceList {
    pub dataset: String,
    pub label_names: Option<Vec<String>>,
    /// The parsed filter; every listed instance carries all of these labels.
    pub filter: Vec<usize>,
    pub instances: Vec<InstanceView>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub dataset: String,
    pub instance: usize,
    pub mode: Mode,
    /// Overrides on top of the mode defaults.
    #[serde(default)]
    pub config: Value,
}

pub struct ExplainOutput {
    /// Serialized explanation, byte-identical across cache hits.
    pub body: Vec<u8>,
    pub key: String,
    pub cached: bool,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEditRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<usize>,
    #[serde(default)]
    pub additions: Vec<Edge>,
    #[serde(default)]
    pub removals: Vec<Edge>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub dataset: String,
    pub instance: usize,
    #[serde(default)]
    pub edits: EdgeEditRequest,
}

#[derive(Debug, Serialize)]
pub struct PredictResponse {
    pub dataset: String,
    pub instance: usize,
    /// Net edits applied after cancelling remove-then-re-add pairs.
    pub additions: Vec<Edge>,
    pub removals: Vec<Edge>,
    pub original: Prediction,
    pub updated: Prediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    /// Explanation AUC against planted motifs.
    Auc,
    /// Preserve explanation quality on multi-label instances.
    Eq,
    /// Equalized-odds gap before and after promote-guided additions.
    Deo,
    /// Walk-count permutation test of promote suggestions.
    Pvalue,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Explain every `stride`-th motif node.
    pub stride: usize,
    pub budgets: Vec<usize>,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            stride: 7,
            budgets: vec![50, 100, 500],
            k: 3,
            trials: 1000,
            seed: 0,
        }
    }
}

/// `defaults` with the fields of the JSON object `overrides` replaced.
/// Unknown fields are rejected.
pub fn overlay<T: Serialize + DeserializeOwned>(defaults: &T, overrides: &Value) -> Result<T> {
    let mut value = serde_json::to_value(defaults)?;
    match overrides {
        Value::Null => {}
        Value::Object(map) => {
            let target = value
                .as_object_mut()
                .ok_or_else(|| ServiceError::Internal("defaults are not an object".into()))?;
            for (k, v) in map {
                if !target.contains_key(k) {
                    return Err(ServiceError::BadRequest(format!(
                        "unknown config field '{k}'"
                    )));
                }
                target.insert(k.clone(), v.clone());
            }
        }
        _ => {
            return Err(ServiceError::BadRequest(
                "config must be a JSON object".into(),
            ))
        }
    }
    serde_json::from_value(value).map_err(|e| ServiceError::BadRequest(format!("config: {e}")))
}

/// Training defaults per family.
pub fn default_train_config(family: Family) -> TrainConfig {
    match family {
        Family::BaShapes | Family::TreeCycles | Family::TreeGrid => TrainConfig::default(),
        Family::BiasedSbm => TrainConfig {
            epochs: 200,
            hidden_dims: vec![16, 16],
            ..TrainConfig::default()
        },
        Family::Multilabel => TrainConfig::multilabel(),
    }
}

/// Generates a dataset of `family` from its default configuration
/// overlaid with `overrides`.
pub fn generate(family: Family, overrides: &Value) -> Result<(Value, Dataset)> {
    fn run<C: Serialize + DeserializeOwned>(
        defaults: C,
        overrides: &Value,
        f: impl Fn(&C) -> topoexplain::Result<Dataset>,
    ) -> Result<(Value, Dataset)> {
        let cfg = overlay(&defaults, overrides)?;
        let d = f(&cfg)?;
        Ok((serde_json::to_value(&cfg)?, d))
    }
    match family {
        Family::BaShapes => run(BaShapesConfig::default(), overrides, |c| {
            gen_ba_shapes(c).map(Dataset::Motif)
        }),
        Family::TreeCycles => run(TreeConfig::cycles(), overrides, |c| {
            gen_tree_cycles(c).map(Dataset::Motif)
        }),
        Family::TreeGrid => run(TreeConfig::grid(), overrides, |c| {
            gen_tree_grid(c).map(Dataset::Motif)
        }),
        Family::BiasedSbm => run(SbmConfig::default(), overrides, |c| {
            gen_biased_sbm(c).map(Dataset::Social)
        }),
        Family::Multilabel => run(MultiLabelConfig::default(), overrides, |c| {
            gen_multilabel(c).map(Dataset::MultiLabel)
        }),
    }
}

fn instance_count(d: &Dataset) -> usize {
    match d {
        Dataset::MultiLabel(m) => m.instances.len(),
        other => other.graph().n(),
    }
}

fn train_data(d: &Dataset) -> TrainData<'_> {
    match d {
        Dataset::Motif(m) => TrainData::Nodes {
            graph: &m.graph,
            labels: m.labels(),
            train: &m.train,
            test: &m.test,
        },
        Dataset::Social(s) => TrainData::Nodes {
            graph: &s.graph,
            labels: s.labels(),
            train: &s.train,
            test: &s.test,
        },
        Dataset::MultiLabel(m) => TrainData::Instances {
            graph: &m.graph,
            features: &m.instances,
            labels: &m.labels,
            train: &m.train,
            test: &m.test,
        },
    }
}

fn truth(d: &Dataset, instance: usize) -> Vec<usize> {
    match d {
        Dataset::MultiLabel(m) => m.true_labels(instance),
        other => other
            .graph()
            .node_labels()
            .map(|l| vec![l[instance]])
            .unwrap_or_default(),
    }
}

fn check_instance(d: &StoredDataset, instance: usize) -> Result<()> {
    let n = instance_count(&d.data);
    if instance >= n {
        return Err(ServiceError::NotFound(format!(
            "dataset '{}' has no instance {instance} ({n} instances)",
            d.id
        )));
    }
    Ok(())
}

/// Prediction for `instance` on `graph`, which must share the dataset's
/// node set.
fn predict_on(d: &Dataset, model: &GcnModel, graph: &Graph, instance: usize) -> Result<Prediction> {
    Ok(match d {
        Dataset::MultiLabel(m) => {
            model.predict_with(graph.adjacency(), &m.instances[instance], Readout::Graph)?
        }
        _ => model.predict(graph, Readout::Node(instance))?,
    })
}

/// Label ids named by `tokens`: numeric ids or label names. Tokens naming
/// no label map to an id no instance carries.
fn parse_labels(tokens: &[String], names: Option<&[String]>) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            names
                .and_then(|ns| ns.iter().position(|n| n == t))
                .or_else(|| t.parse().ok())
                .unwrap_or(usize::MAX)
        })
        .collect()
}

impl Engine {
    pub fn new(ws: Workspace, steps_cap: Option<usize>) -> Self {
        Engine { ws, steps_cap }
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn gen_data(
        &self,
        family: Family,
        id: Option<&str>,
        overrides: &Value,
    ) -> Result<GenSummary> {
        let id = id.unwrap_or(family.default_id()).to_string();
        validate_id(&id)?;
        let (config, data) = generate(family, overrides)?;
        let g = data.graph();
        let summary = GenSummary {
            id: id.clone(),
            family,
            path: String::new(),
            nodes: g.n(),
            edges: g.edge_count(),
            instances: instance_count(&data),
        };
        let path = self.ws.save_dataset(&StoredDataset {
            id,
            family,
            config,
            data,
        })?;
        Ok(GenSummary {
            path: path.display().to_string(),
            ..summary
        })
    }

    /// Trains the model for dataset `id` from the family defaults overlaid
    /// with `overrides` and stores it, replacing any earlier model.
    pub fn train(&self, id: &str, overrides: &Value) -> Result<TrainSummary> {
        let d = self.ws.load_dataset(id)?.value;
        let config = overlay(&default_train_config(d.family), overrides)?;
        let model = train(&train_data(&d.data), &config)?;
        let (path, sha256) = self.ws.save_model(id, &model)?;
        Ok(TrainSummary {
            dataset: id.to_string(),
            path: path.display().to_string(),
            sha256,
            train_accuracy: model.meta.train_accuracy,
            accuracy: model.meta.accuracy,
            config,
        })
    }

    pub fn datasets(&self) -> Result<Vec<DatasetSummary>> {
        self.ws
            .dataset_ids()?
            .into_iter()
            .map(|id| {
                let d = self.ws.load_dataset(&id)?.value;
                let g = d.data.graph();
                Ok(DatasetSummary {
                    family: d.family,
                    nodes: g.n(),
                    edges: g.edge_count(),
                    directed: g.is_directed(),
                    instances: instance_count(&d.data),
                    label_names: g.label_names().map(<[String]>::to_vec),
                    has_model: self.ws.has_model(&id),
                    id,
                })
            })
            .collect()
    }

    pub fn graph_view(&self, id: &str) -> Result<GraphView> {
        let d = self.ws.load_dataset(id)?.value;
        let motif_edges = match &d.data {
            Dataset::Motif(m) => Some(m.motif_edges.clone()),
            _ => None,
        };
        Ok(GraphView {
            id: d.id,
            family: d.family,
            graph: GraphFile::from(d.data.graph()),
            motif_edges,
        })
    }

    /// Instances whose truth set contains every label in `labels`, with
    /// predictions when a model exists.
    pub fn instances(&self, id: &str, labels: &[String]) -> Result<InstanceList> {
        let d = self.ws.load_dataset(id)?.value;
        let model = if self.ws.has_model(id) {
            Some(self.ws.load_model(id)?.value)
        } else {
            None
        };
        let g = d.data.graph();
        let names = g.label_names().map(<[String]>::to_vec);
        let filter = parse_labels(labels, names.as_deref());
        let (train, _) = d.data.splits();
        let train: BTreeSet<usize> = train.iter().copied().collect();
        // One forward pass serves every node of a node-level dataset.
        let node_out = match (&model, &d.data) {
            (Some(m), Dataset::Motif(_) | Dataset::Social(_)) => {
                Some(m.output(g.adjacency(), g.features())?)
            }
            _ => None,
        };
        let mut instances = Vec::new();
        for i in 0..instance_count(&d.data) {
            let t = truth(&d.data, i);
            if !filter.iter().all(|l| t.contains(l)) {
                continue;
            }
            let prediction = match (&model, &node_out) {
                (_, Some(out)) => Some(out.prediction(Readout::Node(i))),
                (Some(m), None) => Some(predict_on(&d.data, m, g, i)?),
                (None, None) => None,
            };
            instances.push(InstanceView {
                id: i,
                split: if train.contains(&i) { "train" } else { "test" },
                truth: t,
                prediction,
            });
        }
        Ok(InstanceList {
            dataset: id.to_string(),
            label_names: names,
            filter,
            instances,
        })
    }

    /// Resolved configuration for a request; rejects step counts above the
    /// cap.
    pub fn resolve_config(&self, req: &ExplainRequest) -> Result<ExplainConfig> {
        let cfg = ExplainConfig::with_overrides(req.mode, &req.config)?;
        if let Some(cap) = self.steps_cap {
            if cfg.steps > cap {
                return Err(ServiceError::BadRequest(format!(
                    "steps {} exceed the service cap of {cap}",
                    cfg.steps
                )));
            }
        }
        Ok(cfg)
    }

    /// Explains one instance, serving repeated requests from the cache.
    pub fn explain(&self, req: &ExplainRequest) -> Result<ExplainOutput> {
        let config = self.resolve_config(req)?;
        let dataset = self.ws.load_dataset(&req.dataset)?;
        check_instance(&dataset.value, req.instance)?;
        let model = self.ws.load_model(&req.dataset)?;

        #[derive(Serialize)]
        struct Key<'a> {
            dataset: &'a str,
            dataset_sha256: &'a str,
            model_sha256: &'a str,
            instance: usize,
            mode: Mode,
            config: &'a ExplainConfig,
        }
        let key = sha256_hex(
            serde_json::to_string(&Key {
                dataset: &req.dataset,
                dataset_sha256: &dataset.sha256,
                model_sha256: &model.sha256,
                instance: req.instance,
                mode: req.mode,
                config: &config,
            })?
            .as_bytes(),
        );
        if let Some(body) = self.ws.cached_explanation(&key)? {
            return Ok(ExplainOutput {
                body,
                key,
                cached: true,
            });
        }

        let d = &dataset.value.data;
        let (model, graph) = (&model.value, d.graph());
        let result = match d {
            Dataset::MultiLabel(m) => {
                let omega = match (&config.target_labels, config.mode) {
                    (Some(_), _) | (None, Mode::Preserve) => None,
                    (None, _) => Some(m.true_labels(req.instance)),
                };
                let member = Member::instance(m.instances[req.instance].clone(), omega);
                group_explain(model, graph, &[member], &config)?
            }
            _ => optimize_mask(model, graph, Readout::Node(req.instance), &config)?,
        };
        let body = self
            .ws
            .store_explanation(&key, result.to_json()?.into_bytes())?;
        Ok(ExplainOutput {
            body,
            key,
            cached: false,
        })
    }

    /// Re-runs the model on the instance's graph after `edits`. Removals
    /// apply first, so removing and re-adding an edge cancels out.
    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        if let Some(i) = req.edits.instance {
            if i != req.instance {
                return Err(ServiceError::BadRequest(format!(
                    "edits target instance {i} but the request names {}",
                    req.instance
                )));
            }
        }
        let d = self.ws.load_dataset(&req.dataset)?.value;
        check_instance(&d, req.instance)?;
        let model = self.ws.load_model(&req.dataset)?.value;
        let graph = d.data.graph();
        let (additions, removals) = net_edits(graph, &req.edits)?;
        let edited = graph.with_edits(&additions, &removals)?;
        Ok(PredictResponse {
            dataset: req.dataset.clone(),
            instance: req.instance,
            original: predict_on(&d.data, &model, graph, req.instance)?,
            updated: predict_on(&d.data, &model, &edited, req.instance)?,
            additions,
            removals,
        })
    }

    pub fn eval(&self, id: &str, metric: Metric, opts: &EvalOptions) -> Result<MetricRecord> {
        let d = self.ws.load_dataset(id)?.value;
        let model = self.ws.load_model(id)?.value;
        let wrong = |needs: &str| {
            ServiceError::BadRequest(format!(
                "metric {metric:?} needs a {needs} dataset; '{id}' is {:?}",
                d.family
            ))
        };
        let record = match (metric, &d.data) {
            (Metric::Auc, Dataset::Motif(m)) => {
                let study = motif_auc(m, &model, &ExplainConfig::default(), opts.stride)?;
                MetricRecord::new("auc", id, study.ours.auc, &study)?
            }
            (Metric::Auc, _) => return Err(wrong("motif")),
            (Metric::Deo, Dataset::Social(s)) => {
                let study = fairness_curve(s, &model, &fairness_config(), &opts.budgets)?;
                let last = study
                    .steps
                    .last()
                    .map_or(study.baseline.delta_eo, |s| s.report.delta_eo);
                MetricRecord::new("deo", id, last, &study)?
            }
            (Metric::Deo, _) => return Err(wrong("biased-sbm")),
            (Metric::Eq, Dataset::MultiLabel(m)) => {
                let summary = summarize(&multilabel_outcomes(m, &model)?)?;
                let value = summary.preserve_quality.ok_or_else(|| {
                    ServiceError::BadRequest(
                        "explanation quality is undefined on every instance".into(),
                    )
                })?;
                MetricRecord::new("eq", id, value, &summary)?
            }
            (Metric::Eq, _) => return Err(wrong("multilabel")),
            (Metric::Pvalue, Dataset::MultiLabel(m)) => {
                let outcomes = multilabel_outcomes(m, &model)?;
                let test = WalkTest {
                    trials: opts.trials,
                    seed: opts.seed,
                    ..WalkTest::default()
                };
                let report = promote_pvalue(&m.graph, &outcomes, opts.k, &test)?;
                MetricRecord::new("pvalue", id, report.p_value, &report)?
            }
            (Metric::Pvalue, _) => return Err(wrong("multilabel")),
        };
        Ok(record)
    }
}

/// Validated, canonical edit lists with remove-then-re-add pairs cancelled.
fn net_edits(graph: &Graph, edits: &EdgeEditRequest) -> Result<(Vec<Edge>, Vec<Edge>)> {
    let n = graph.n();
    let canon = |&(i, j): &Edge| -> Result<Edge> {
        if i >= n || j >= n || i == j {
            return Err(ServiceError::BadRequest(format!(
                "({i},{j}) is not a candidate edge of a {n}-node graph"
            )));
        }
        Ok(graph.canonical((i, j)))
    };
    let mut removals = BTreeSet::new();
    for e in &edits.removals {
        let e = canon(e)?;
        if !graph.has_edge(e.0, e.1) {
            return Err(ServiceError::BadRequest(format!(
                "cannot remove missing edge ({},{})",
                e.0, e.1
            )));
        }
        removals.insert(e);
    }
    let mut additions = BTreeSet::new();
    for e in &edits.additions {
        let e = canon(e)?;
        if graph.has_edge(e.0, e.1) && !removals.contains(&e) {
            return Err(ServiceError::BadRequest(format!(
                "cannot add existing edge ({},{})",
                e.0, e.1
            )));
        }
        additions.insert(e);
    }
    let cancelled: BTreeSet<Edge> = additions.intersection(&removals).copied().collect();
    Ok((
        additions.difference(&cancelled).copied().collect(),
        removals.difference(&cancelled).copied().collect(),
    ))
}
