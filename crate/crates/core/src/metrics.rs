//! Evaluation metrics: explanation AUC, multi-label accuracy, k-hop
//! explanation quality, equalized-odds gap and the walk-count permutation
//! test.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::Prediction;
use crate::graph::{Edge, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Rank-based AUC over `(score, is_positive)` pairs; tied scores share
/// their average rank.
pub fn auc(samples: &[(f64, bool)]) -> Result<AucReport> {
    let n_pos = samples.iter().filter(|s| s.1).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "AUC needs both classes (pos {n_pos}, neg {n_neg})"
        )));
    }
    if samples.iter().any(|s| s.0.is_nan()) {
        return Err(Error::Degenerate("AUC scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].0.total_cmp(&samples[b].0));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && samples[order[end]].0 == samples[order[start]].0 {
            end += 1;
        }
        // Ranks start + 1 ..= end share their mean.
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        let pos = order[start..end].iter().filter(|&&i| samples[i].1).count();
        rank_sum += mean_rank * pos as f64;
        start = end;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok(AucReport {
        auc: (rank_sum - p * (p + 1.0) / 2.0) / (p * q),
        n_pos,
        n_neg,
    })
}

/// AUC of edge scores against ground-truth motif edges.
pub fn explanation_auc(scores: &[(Edge, f64)], motif_edges: &BTreeSet<Edge>) -> Result<AucReport> {
    let samples: Vec<(f64, bool)> = scores
        .iter()
        .map(|(e, s)| (*s, motif_edges.contains(e)))
        .collect();
    auc(&samples)
}

/// Share of Ω found among the top-|Ω| labels of `perturbed`.
pub fn preserve_consistency(omega: &[usize], perturbed: &Prediction) -> Result<f64> {
    if omega.is_empty() {
        return Err(Error::InvalidTarget(
            "consistency needs a non-empty label set".into(),
        ));
    }
    let top = perturbed.top_k(omega.len());
    Ok(omega.iter().filter(|c| top.contains(c)).count() as f64 / omega.len() as f64)
}

/// Average precision of the top-3 ranked labels against `truth`,
/// normalised by `min(|truth|, 3)`.
pub fn average_precision_at3(ranking: &[usize], truth: &[usize]) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, c) in ranking.iter().take(3).enumerate() {
        if truth.contains(c) {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / truth.len().min(3) as f64)
}

/// Mean top-3 average precision; instances without true labels are skipped.
pub fn map_top3(predictions: &[Prediction], truths: &[Vec<usize>]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} label sets",
            predictions.len(),
            truths.len()
        )));
    }
    let aps: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .filter_map(|(p, t)| average_precision_at3(&p.ranking(), t))
        .collect();
    if aps.is_empty() {
        return Err(Error::Degenerate("no instance has a true label".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub relevant: usize,
    pub hit: usize,
    /// `hit / relevant`; `None` when nothing is relevant.
    pub fraction: Option<f64>,
}

/// Ordered label pairs `(i, j)`, `i != j`, both in Ω, joined by a walk of
/// length at most `k` in `a` (the relevant set) and of those, the pairs
/// still joined in `a_prime`.
pub fn explanation_quality(
    a: &Array2<f64>,
    a_prime: &Array2<f64>,
    omega: &[usize],
    k: usize,
) -> Result<QualityReport> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "explanation quality needs k >= 1".into(),
        ));
    }
    if a.dim() != a_prime.dim() || a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "adjacency shapes {:?} vs {:?}",
            a.dim(),
            a_prime.dim()
        )));
    }
    if let Some(&c) = omega.iter().find(|&&c| c >= a.nrows()) {
        return Err(Error::InvalidTarget(format!("label {c} out of range")));
    }
    let reach = |m: &Array2<f64>| reachable_within(m, k);
    let (r, r_prime) = (reach(a), reach(a_prime));
    let (mut relevant, mut hit) = (0, 0);
    for &i in omega {
        for &j in omega {
            if i != j && r[[i, j]] {
                relevant += 1;
                if r_prime[[i, j]] {
                    hit += 1;
                }
            }
        }
    }
    let fraction = (relevant > 0).then(|| hit as f64 / relevant as f64);
    Ok(QualityReport {
        relevant,
        hit,
        fraction,
    })
}

fn reachable_within(a: &Array2<f64>, k: usize) -> Array2<bool> {
    let b = a.mapv(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let mut power = b.clone();
    let mut reach = b.mapv(|v| v > 0.0);
    for _ in 1..k {
        power = power.dot(&b).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        reach.zip_mut_with(&power, |r, &p| *r |= p > 0.0);
    }
    reach
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub delta_eo: f64,
    /// `P(ŷ=1 | y=1, s=g)` for `g = 0, 1`.
    pub tpr: [f64; 2],
}

/// Equalized-odds gap `|TPR_0 - TPR_1|` for binary labels and groups.
pub fn delta_eo(predicted: &[usize], labels: &[usize], sensitive: &[u8]) -> Result<FairnessReport> {
    if predicted.len() != labels.len() || labels.len() != sensitive.len() {
        return Err(Error::Dimension(
            "predictions, labels and groups differ in length".into(),
        ));
    }
    if labels.iter().chain(predicted).any(|&v| v > 1) || sensitive.iter().any(|&s| s > 1) {
        return Err(Error::InvalidTarget(
            "labels, predictions and groups must be binary".into(),
        ));
    }
    let mut pos = [0usize; 2];
    let mut tp = [0usize; 2];
    let mut correct = 0;
    for ((&p, &y), &s) in predicted.iter().zip(labels).zip(sensitive) {
        correct += usize::from(p == y);
        if y == 1 {
            pos[s as usize] += 1;
            tp[s as usize] += usize::from(p == 1);
        }
    }
    if pos.contains(&0) {
        return Err(Error::Degenerate(
            "a sensitive group has no positive-label nodes".into(),
        ));
    }
    let tpr = [tp[0] as f64 / pos[0] as f64, tp[1] as f64 / pos[1] as f64];
    Ok(FairnessReport {
        accuracy: correct as f64 / labels.len() as f64,
        delta_eo: (tpr[0] - tpr[1]).abs(),
        tpr,
    })
}

/// Walks of length `1..=max_len` between distinct nodes of the `h`-hop
/// expansion of `nodes`. Symmetric adjacencies count each pair once,
/// asymmetric ones count both directions.
pub fn walk_count(
    adjacency: &Array2<f64>,
    nodes: &[usize],
    max_len: usize,
    h: usize,
) -> Result<u64> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::Dimension("adjacency must be square".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidConfig(
            "walk length must be at least 1".into(),
        ));
    }
    if let Some(&v) = nodes.iter().find(|&&v| v >= n) {
        return Err(Error::InvalidTarget(format!("node {v} out of range")));
    }
    let b: Array2<u64> = adjacency.mapv(|v| u64::from(v != 0.0));
    let symmetric = b == b.t();
    let set = expand(&b, nodes, h);
    let mut power = b.clone();
    let mut total = 0u64;
    for len in 1..=max_len {
        if len > 1 {
            power = power.dot(&b);
        }
        for &i in &set {
            for &j in &set {
                if i != j && (!symmetric || i < j) {
                    total = total.saturating_add(power[[i, j]]);
                }
            }
        }
    }
    Ok(total)
}

/// Nodes within `h` hops of `nodes`, ignoring edge direction.
fn expand(b: &Array2<u64>, nodes: &[usize], h: usize) -> Vec<usize> {
    let n = b.nrows();
    let mut inside = vec![false; n];
    let mut frontier: Vec<usize> = nodes.to_vec();
    for &v in nodes {
        inside[v] = true;
    }
    for _ in 0..h {
        let mut next = Vec::new();
        for &u in &frontier {
            for w in 0..n {
                if !inside[w] && (b[[u, w]] != 0 || b[[w, u]] != 0) {
                    inside[w] = true;
                    next.push(w);
                }
            }
        }
        frontier = next;
    }
    (0..n).filter(|&v| inside[v]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    pub m: u64,
    pub samples: Vec<u64>,
    pub p_value: f64,
    pub k_edges: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkTest {
    pub trials: usize,
    pub max_len: usize,
    pub hop: usize,
    pub seed: u64,
}

impl Default for WalkTest {
    fn default() -> Self {
        WalkTest {
            trials: 1000,
            max_len: 2,
            hop: 0,
            seed: 0,
        }
    }
}

/// Right-tail permutation test: walk count `m` after adding the first
/// `k_edges` of `proposed`, against `trials` graphs with `k_edges` uniformly
/// random non-edges added; `p = (#{n_i >= m} + 1) / (trials + 1)`.
pub fn walk_pvalue(
    graph: &Graph,
    true_labels: &[usize],
    proposed: &[Edge],
    k_edges: usize,
    test: &WalkTest,
) -> Result<PValueReport> {
    if k_edges == 0 {
        return Err(Error::InvalidConfig("k_edges must be at least 1".into()));
    }
    if test.trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if proposed.len() < k_edges {
        return Err(Error::Degenerate(format!(
            "only {} proposed edges for k = {k_edges}",
            proposed.len()
        )));
    }
    let candidates = non_edges(graph);
    if candidates.len() < k_edges {
        return Err(Error::Degenerate(format!(
            "only {} candidate non-edges for k = {k_edges}",
            candidates.len()
        )));
    }
    let count = |adds: &[Edge]| -> Result<u64> {
        let g = graph.with_edits(adds, &[])?;
        walk_count(g.adjacency(), true_labels, test.max_len, test.hop)
    };
    let m = count(&proposed[..k_edges])?;
    let samples = (0..test.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
            rng.set_stream(t as u64);
            let adds: Vec<Edge> = sample(&mut rng, candidates.len(), k_edges)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            count(&adds)
        })
        .collect::<Result<Vec<u64>>>()?;
    let at_least = samples.iter().filter(|&&s| s >= m).count();
    let p_value = (at_least + 1) as f64 / (test.trials + 1) as f64;
    Ok(PValueReport {
        m,
        samples,
        p_value,
        k_edges,
    })
}

/// One instance of a pooled walk test: its true labels and ranked proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkCase {
    pub true_labels: Vec<usize>,
    pub proposed: Vec<Edge>,
}

/// Pooled right-tail test over many instances sharing one graph: the
/// statistic is the walk count summed over cases, and every trial draws
/// `k_edges` random non-edges independently for each case.
pub fn pooled_walk_pvalue(
    graph: &Graph,
    cases: &[WalkCase],
    k_edges: usize,
    test: &WalkTest,
) -> Result<PValueReport> {
    if cases.is_empty() {
        return Err(Error::Degenerate("no cases".into()));
    }
    if k_edges == 0 || test.trials == 0 {
        return Err(Error::InvalidConfig(
            "k_edges and trials must be at least 1".into(),
        ));
    }
    if let Some(c) = cases.iter().find(|c| c.proposed.len() < k_edges) {
        return Err(Error::Degenerate(format!(
            "only {} proposed edges for k = {k_edges}",
            c.proposed.len()
        )));
    }
    let candidates = non_edges(graph);
    if candidates.len() < k_edges {
        return Err(Error::Degenerate(format!(
            "only {} candidate non-edges for k = {k_edges}",
            candidates.len()
        )));
    }
    let count = |labels: &[usize], adds: &[Edge]| -> Result<u64> {
        let g = graph.with_edits(adds, &[])?;
        walk_count(g.adjacency(), labels, test.max_len, test.hop)
    };
    let mut m = 0u64;
    for c in cases {
        m += count(&c.true_labels, &c.proposed[..k_edges])?;
    }
    let samples = (0..test.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
            rng.set_stream(t as u64);
            let mut total = 0u64;
            for c in cases {
                let adds: Vec<Edge> = sample(&mut rng, candidates.len(), k_edges)
                    .into_iter()
                    .map(|i| candidates[i])
                    .collect();
                total += count(&c.true_labels, &adds)?;
            }
            Ok(total)
        })
        .collect::<Result<Vec<u64>>>()?;
    let at_least = samples.iter().filter(|&&s| s >= m).count();
    let p_value = (at_least + 1) as f64 / (test.trials + 1) as f64;
    Ok(PValueReport {
        m,
        samples,
        p_value,
        k_edges,
    })
}

/// Absent off-diagonal pairs; `i < j` for undirected graphs.
pub fn non_edges(graph: &Graph) -> Vec<Edge> {
    let n = graph.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (graph.is_directed() || i < j) && !graph.has_edge(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

/// One named metric value with its full report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub dataset: String,
    pub value: f64,
    #[serde(default)]
    pub detail: serde_json::Value,
}

impl MetricRecord {
    pub fn new(metric: &str, dataset: &str, value: f64, detail: impl Serialize) -> Result<Self> {
        Ok(MetricRecord {
            metric: metric.into(),
            dataset: dataset.into(),
            value,
            detail: serde_json::to_value(detail)?,
        })
    }
}

/// `metric,dataset,value` rows with a header line.
pub fn records_to_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from("metric,dataset,value\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{}\n",
            csv_field(&r.metric),
            csv_field(&r.dataset),
            r.value
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
