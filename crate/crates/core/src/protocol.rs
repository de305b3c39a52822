//! End-to-end evaluation protocols on the synthetic benchmarks, shared by
//! the command-line tool and the acceptance suite.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{group_explain, optimize_mask, AdditionScope, ExplainConfig, Member, Mode};
use crate::gcn::{GcnModel, Prediction, Readout};
use crate::graph::{Edge, Graph};
use crate::metrics::{
    auc, delta_eo, explanation_quality, map_top3, non_edges, pooled_walk_pvalue,
    preserve_consistency, AucReport, FairnessReport, PValueReport, WalkCase, WalkTest,
};
use crate::saliency::grad_baseline_scores;
use crate::synth::{BiasedSocialDataset, MotifDataset, MultiLabelDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifStudy {
    pub ours: AucReport,
    pub grad: AucReport,
    pub explained_nodes: usize,
}

/// Explanation AUC of preserve-mode importance and of the Grad baseline.
///
/// Every `stride`-th motif node is explained; each contributes the existing
/// edges of its `L`-hop computation subgraph, labelled by motif membership,
/// and all contributions are pooled into one AUC per method.
pub fn motif_auc(
    d: &MotifDataset,
    model: &GcnModel,
    config: &ExplainConfig,
    stride: usize,
) -> Result<MotifStudy> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be at least 1".into()));
    }
    let motif: BTreeSet<Edge> = d
        .motif_edges
        .iter()
        .map(|&e| d.graph.canonical(e))
        .collect();
    let nodes: Vec<usize> = d.motif_nodes().into_iter().step_by(stride).collect();
    let per_node = nodes
        .par_iter()
        .map(|&v| {
            let field: BTreeSet<usize> = d
                .graph
                .k_hop_nodes(&[v], model.n_layers())
                .into_iter()
                .collect();
            let inside = |e: &Edge| field.contains(&e.0) && field.contains(&e.1);
            let r = optimize_mask(model, &d.graph, Readout::Node(v), config)?;
            let ours: Vec<(f64, bool)> = r
                .importance
                .iter()
                .map(|s| ((s.i, s.j), s.score))
                .filter(|(e, _)| inside(e))
                .map(|(e, s)| (s, motif.contains(&e)))
                .collect();
            let class = r.original_prediction.top1();
            let grad: Vec<(f64, bool)> =
                grad_baseline_scores(model, &d.graph, Readout::Node(v), class)?
                    .into_iter()
                    .filter(|(e, _)| inside(e))
                    .map(|(e, s)| (s, motif.contains(&e)))
                    .collect();
            Ok((ours, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ours, grad): (Vec<_>, Vec<_>) = per_node.into_iter().unzip();
    Ok(MotifStudy {
        ours: auc(&ours.concat())?,
        grad: auc(&grad.concat())?,
        explained_nodes: nodes.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessStep {
    pub budget: usize,
    pub added: usize,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessStudy {
    pub baseline: FairnessReport,
    /// Sensitive group with the lower true-positive rate.
    pub disadvantaged_group: u8,
    /// Nodes whose promote masks were pooled.
    pub promoted_nodes: usize,
    pub candidates: usize,
    pub steps: Vec<FairnessStep>,
}

/// Promote configuration for the fairness protocol: positive label,
/// inter-group additions only, no removals.
pub fn fairness_config() -> ExplainConfig {
    ExplainConfig {
        target_labels: Some(vec![1]),
        addition_scope: AdditionScope::InterGroup,
        budget_add: 10,
        budget_remove: 0,
        ..ExplainConfig::for_mode(Mode::Promote)
    }
}

/// Equalized-odds gap on the test split after promote-guided additions.
///
/// Every false-negative node of the disadvantaged group is promoted towards
/// the positive label on its own; candidate additions are ranked by their
/// largest mask value over those runs, and the top `budget` are added for
/// each budget.
pub fn fairness_curve(
    d: &BiasedSocialDataset,
    model: &GcnModel,
    config: &ExplainConfig,
    budgets: &[usize],
) -> Result<FairnessStudy> {
    let eval = |g: &Graph| -> Result<FairnessReport> {
        let out = model.output(g.adjacency(), g.features())?;
        let predicted: Vec<usize> = d
            .test
            .iter()
            .map(|&v| out.prediction(Readout::Node(v)).top1())
            .collect();
        let labels: Vec<usize> = d.test.iter().map(|&v| d.labels()[v]).collect();
        let sensitive: Vec<u8> = d.test.iter().map(|&v| d.sensitive()[v]).collect();
        delta_eo(&predicted, &labels, &sensitive)
    };
    let baseline = eval(&d.graph)?;
    let low = u8::from(baseline.tpr[1] < baseline.tpr[0]);
    let out = model.output(d.graph.adjacency(), d.graph.features())?;
    let promoted: Vec<usize> = (0..d.graph.n())
        .filter(|&v| {
            d.labels()[v] == 1
                && d.sensitive()[v] == low
                && out.prediction(Readout::Node(v)).top1() == 0
        })
        .collect();
    let masks = promoted
        .par_iter()
        .map(|&v| optimize_mask(model, &d.graph, Readout::Node(v), config).map(|r| r.mask.new))
        .collect::<Result<Vec<_>>>()?;
    let mut pooled: BTreeMap<Edge, f64> = BTreeMap::new();
    for entry in masks.iter().flatten() {
        let s = pooled.entry((entry.i, entry.j)).or_insert(0.0);
        *s = s.max(entry.value);
    }
    let ranked = rank(pooled);
    let mut steps = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let added = budget.min(ranked.len());
        let g = d.graph.with_edits(&ranked[..added], &[])?;
        steps.push(FairnessStep {
            budget,
            added,
            report: eval(&g)?,
        });
    }
    Ok(FairnessStudy {
        baseline,
        disadvantaged_group: low,
        promoted_nodes: promoted.len(),
        candidates: ranked.len(),
        steps,
    })
}

/// Keys by descending value, ties by ascending edge.
fn rank(scores: BTreeMap<Edge, f64>) -> Vec<Edge> {
    let mut v: Vec<(Edge, f64)> = scores.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(e, _)| e).collect()
}

/// Explanations of one multi-label test instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub instance: usize,
    pub truth: Vec<usize>,
    pub original: Prediction,
    /// Attack against the true label set.
    pub attacked: Prediction,
    /// Preserve of the original top-3 on the kept top edges.
    pub preserved: Prediction,
    pub preserve_quality: Option<f64>,
    /// Promote of the true label set.
    pub promoted: Prediction,
    /// Proposed additions by descending promote mask value.
    pub promote_ranking: Vec<Edge>,
}

/// Runs attack, preserve and promote on every test instance.
pub fn multilabel_outcomes(
    d: &MultiLabelDataset,
    model: &GcnModel,
) -> Result<Vec<InstanceOutcome>> {
    let attack = ExplainConfig::for_mode(Mode::Attack);
    let preserve = ExplainConfig::for_mode(Mode::Preserve);
    let promote = ExplainConfig::for_mode(Mode::Promote);
    d.test
        .par_iter()
        .map(|&i| {
            let x = &d.instances[i];
            let truth = d.true_labels(i);
            let original = model.predict_with(d.graph.adjacency(), x, Readout::Graph)?;
            let top3 = original.top_k(3);
            let run = |omega: &[usize], cfg: &ExplainConfig| {
                group_explain(
                    model,
                    &d.graph,
                    &[Member::instance(x.clone(), Some(omega.to_vec()))],
                    cfg,
                )
            };
            let a = run(&truth, &attack)?;
            let p = run(&top3, &preserve)?;
            let kept = p
                .a_prime_discrete
                .as_ref()
                .expect("discrete graph is always set");
            let quality =
                explanation_quality(d.graph.adjacency(), kept.adjacency(), &top3, 1)?.fraction;
            let pr = run(&truth, &promote)?;
            let scores = pr.mask.new.iter().map(|e| ((e.i, e.j), e.value)).collect();
            Ok(InstanceOutcome {
                instance: i,
                truth,
                original,
                attacked: a.updated_prediction,
                preserved: p.updated_prediction,
                preserve_quality: quality,
                promoted: pr.updated_prediction,
                promote_ranking: rank(scores),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelSummary {
    pub instances: usize,
    pub map_original: f64,
    pub map_attacked: f64,
    pub map_promoted: f64,
    /// Share of instances whose top-1 label the attack changed.
    pub attack_top1_changed: f64,
    /// Mean share of the original top-3 still in the preserved top-3.
    pub preserve_consistency: f64,
    /// Mean explanation quality (k = 1) over instances where it is defined.
    pub preserve_quality: Option<f64>,
}

pub fn summarize(outcomes: &[InstanceOutcome]) -> Result<MultiLabelSummary> {
    if outcomes.is_empty() {
        return Err(Error::Degenerate("no instances".into()));
    }
    let n = outcomes.len() as f64;
    let truths: Vec<Vec<usize>> = outcomes.iter().map(|o| o.truth.clone()).collect();
    let map = |f: fn(&InstanceOutcome) -> &Prediction| {
        let preds: Vec<Prediction> = outcomes.iter().map(|o| f(o).clone()).collect();
        map_top3(&preds, &truths)
    };
    let changed = outcomes
        .iter()
        .filter(|o| o.attacked.top1() != o.original.top1())
        .count();
    let mut consistency = 0.0;
    for o in outcomes {
        consistency += preserve_consistency(&o.original.top_k(3), &o.preserved)?;
    }
    let qualities: Vec<f64> = outcomes.iter().filter_map(|o| o.preserve_quality).collect();
    Ok(MultiLabelSummary {
        instances: outcomes.len(),
        map_original: map(|o| &o.original)?,
        map_attacked: map(|o| &o.attacked)?,
        map_promoted: map(|o| &o.promoted)?,
        attack_top1_changed: changed as f64 / n,
        preserve_consistency: consistency / n,
        preserve_quality: (!qualities.is_empty())
            .then(|| qualities.iter().sum::<f64>() / qualities.len() as f64),
    })
}

/// Pooled walk-count test of the top-`k` promote suggestions over all
/// instances that proposed at least `k` additions.
pub fn promote_pvalue(
    graph: &Graph,
    outcomes: &[InstanceOutcome],
    k: usize,
    test: &WalkTest,
) -> Result<PValueReport> {
    let cases: Vec<WalkCase> = outcomes
        .iter()
        .filter(|o| o.promote_ranking.len() >= k)
        .map(|o| WalkCase {
            true_labels: o.truth.clone(),
            proposed: o.promote_ranking.clone(),
        })
        .collect();
    pooled_walk_pvalue(graph, &cases, k, test)
}

/// The same test with uniformly random proposals in place of promote
/// suggestions, repeated `replicates` times with independent seeds.
pub fn random_pvalues(
    graph: &Graph,
    truths: &[Vec<usize>],
    k: usize,
    replicates: usize,
    test: &WalkTest,
) -> Result<Vec<f64>> {
    let candidates = non_edges(graph);
    (0..replicates)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
            rng.set_stream(1 + r as u64);
            let cases: Vec<WalkCase> = truths
                .iter()
                .map(|t| {
                    let mut proposed = candidates.clone();
                    proposed.shuffle(&mut rng);
                    proposed.truncate(k);
                    WalkCase {
                        true_labels: t.clone(),
                        proposed,
                    }
                })
                .collect();
            let seeded = WalkTest {
                seed: test.seed.wrapping_add(1 + r as u64),
                ..*test
            };
            Ok(pooled_walk_pvalue(graph, &cases, k, &seeded)?.p_value)
        })
        .collect()
}
