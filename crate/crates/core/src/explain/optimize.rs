use ndarray::{Array2, Ix2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::select::{bernoulli_samples, ranked_entries, select_budget, threshold, EdgeEdits};
use super::utility::{Mode, Utility};
use super::{
    AdditionScope, Discretize, EdgeScore, ExplainConfig, ExplanationResult, MaskEntry,
    MemberOutcome, SparseMask,
};
use crate::error::{Error, Result};
use crate::gcn::{check_readout, GcnModel, Prediction, Readout};
use crate::graph::{
    apply_mask_unchecked, perturbation_candidates, Edge, Graph, Mask, PerturbationSpace,
};
use crate::optim::Adam;

/// One prediction whose utility enters a (group) objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub readout: Readout,
    /// Instance features; `None` uses the graph's own feature matrix.
    pub features: Option<Array2<f64>>,
    /// Ω for this member; overrides `ExplainConfig::target_labels`.
    pub omega: Option<Vec<usize>>,
}

impl Member {
    pub fn node(v: usize) -> Self {
        Member {
            readout: Readout::Node(v),
            features: None,
            omega: None,
        }
    }

    pub fn instance(features: Array2<f64>, omega: Option<Vec<usize>>) -> Self {
        Member {
            readout: Readout::Graph,
            features: Some(features),
            omega,
        }
    }
}

/// Feature matrix plus the utilities read out of one forward pass.
struct Block {
    x: Array2<f64>,
    targets: Vec<(Readout, Utility)>,
}

/// Mean utility over every target of every block, as a function of `A'`.
struct Objective<'a> {
    model: &'a GcnModel,
    blocks: Vec<Block>,
    count: usize,
}

impl Objective<'_> {
    fn new<'m>(model: &'m GcnModel, blocks: Vec<Block>) -> Objective<'m> {
        let count = blocks.iter().map(|b| b.targets.len()).sum();
        Objective {
            model,
            blocks,
            count,
        }
    }

    /// Mean utility and per-target values.
    fn evaluate(&self, a_prime: &Array2<f64>) -> Result<(f64, Vec<f64>)> {
        let mut values = Vec::with_capacity(self.count);
        for b in &self.blocks {
            let out = self.model.output(a_prime, &b.x)?;
            for (r, u) in &b.targets {
                values.push(u.value(&out.prediction(*r).probs));
            }
        }
        Ok((values.iter().sum::<f64>() / self.count as f64, values))
    }

    /// Mean utility and its gradient with respect to `A'`.
    fn value_and_grad(&self, a_prime: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let n = a_prime.nrows();
        let mut total = 0.0;
        let mut grad = Array2::zeros((n, n));
        let scale = 1.0 / self.count as f64;
        for b in &self.blocks {
            let cache = self.model.forward_cached(a_prime, &b.x)?;
            let out = &cache.output;
            let mut dprobs = Array2::zeros(out.probs.dim());
            for (r, u) in &b.targets {
                let (v, g) = u.value_and_grad(&out.prediction(*r).probs);
                total += v;
                match r {
                    Readout::Node(i) => {
                        for (k, gk) in g.into_iter().enumerate() {
                            dprobs[[*i, k]] += scale * gk;
                        }
                    }
                    Readout::Graph => {
                        for (k, gk) in g.into_iter().enumerate() {
                            dprobs[[k, 0]] += scale * gk;
                        }
                    }
                }
            }
            let dlogits = out.probs_to_logits_grad(&dprobs);
            let (_, d_adj) = self.model.backward(&cache, &dlogits, false, true);
            grad += &d_adj.expect("adjacency gradient requested");
        }
        Ok((total * scale, grad))
    }
}

fn mask_grad(d_adj: &Array2<f64>, space: &PerturbationSpace) -> Mask {
    Mask {
        s_exist: d_adj * &space.c_exist,
        s_new: d_adj * &space.c_new,
    }
}

/// Utility `R(A'(S))` at `mask` and its gradient with respect to
/// `S_exist` and `S_new`, restricted to the candidate supports.
pub fn grad_adjacency(
    model: &GcnModel,
    graph: &Graph,
    space: &PerturbationSpace,
    mask: &Mask,
    readout: Readout,
    utility: &Utility,
) -> Result<(f64, Mask)> {
    mask.validate(space)?;
    check_readout(model.head, readout, graph.n())?;
    utility.validate(model.n_outputs_for(graph.n()))?;
    let a_prime = apply_mask_unchecked(graph.adjacency(), space, mask);
    let obj = Objective::new(
        model,
        vec![Block {
            x: graph.features().clone(),
            targets: vec![(readout, utility.clone())],
        }],
    );
    let (value, d_adj) = obj.value_and_grad(&a_prime)?;
    Ok((value, mask_grad(&d_adj, space)))
}

/// Explains one prediction (or, with `subset_utility`, the mean utility over
/// `node_subset`).
pub fn optimize_mask(
    model: &GcnModel,
    graph: &Graph,
    readout: Readout,
    config: &ExplainConfig,
) -> Result<ExplanationResult> {
    config.validate()?;
    let members: Vec<Member> = match (&config.node_subset, config.subset_utility) {
        (Some(theta), true) => theta.iter().map(|&v| Member::node(v)).collect(),
        _ => vec![Member {
            readout,
            features: None,
            omega: None,
        }],
    };
    group_explain(model, graph, &members, config)
}

/// Node-id translation between the explained region and the full graph.
struct Region {
    graph: Graph,
    /// Local index -> global node id; `None` when the region is the whole graph.
    nodes: Option<Vec<usize>>,
}

impl Region {
    fn global(&self, v: usize) -> usize {
        self.nodes.as_ref().map_or(v, |m| m[v])
    }

    fn local(&self, v: usize) -> Option<usize> {
        match &self.nodes {
            None => Some(v),
            Some(m) => m.binary_search(&v).ok(),
        }
    }

    fn global_edge(&self, (i, j): Edge) -> Edge {
        (self.global(i), self.global(j))
    }
}

/// One shared mask optimised against the mean utility of `members`.
pub fn group_explain(
    model: &GcnModel,
    graph: &Graph,
    members: &[Member],
    config: &ExplainConfig,
) -> Result<ExplanationResult> {
    group_explain_observed(model, graph, members, config, &mut |_, _| {})
}

/// [`group_explain`] calling `observer(step, mask)` after every projected
/// step. Masks are in region-local node ids (global ids when `local` is off
/// or the region is the whole graph).
pub fn group_explain_observed(
    model: &GcnModel,
    graph: &Graph,
    members: &[Member],
    config: &ExplainConfig,
    observer: &mut dyn FnMut(usize, &Mask),
) -> Result<ExplanationResult> {
    config.validate()?;
    model.validate()?;
    if members.is_empty() {
        return Err(Error::InvalidConfig(
            "explanation needs at least one member".into(),
        ));
    }
    let n = graph.n();
    let k = model.n_outputs_for(n);
    for m in members {
        check_readout(model.head, m.readout, n)?;
    }

    // Original predictions and targets on the full graph.
    let mut originals = Vec::with_capacity(members.len());
    let mut utilities = Vec::with_capacity(members.len());
    for m in members {
        let x = m.features.as_ref().unwrap_or(graph.features());
        let pred = model.predict_with(graph.adjacency(), x, m.readout)?;
        let omega = target_set(config, m, graph, &pred)?;
        let u = Utility::for_mode(config.mode, omega, config.kappa);
        u.validate(k)?;
        originals.push(pred);
        utilities.push(u);
    }

    let region = region_for(model, graph, members, config);
    let local_readout = |r: Readout| match r {
        Readout::Node(v) => Readout::Node(region.local(v).expect("member inside region")),
        Readout::Graph => Readout::Graph,
    };

    // Members sharing the graph's features share one forward pass.
    let mut shared = Block {
        x: region.graph.features().clone(),
        targets: Vec::new(),
    };
    let mut blocks = Vec::new();
    for (m, u) in members.iter().zip(&utilities) {
        match &m.features {
            None => shared.targets.push((local_readout(m.readout), u.clone())),
            Some(x) => blocks.push(Block {
                x: x.clone(),
                targets: vec![(m.readout, u.clone())],
            }),
        }
    }
    if !shared.targets.is_empty() {
        blocks.insert(0, shared);
    }
    let objective = Objective::new(model, blocks);

    let mut diagnostics = Vec::new();
    let space = restricted_space(&region, config, &mut diagnostics)?;
    let a_local = region.graph.adjacency().clone();

    let mut mask = initial_mask(&space, config.seed);
    let mut adam_e = Adam::<Ix2>::new(mask.s_exist.raw_dim(), config.lr);
    let mut adam_n = Adam::<Ix2>::new(mask.s_new.raw_dim(), config.lr);
    let mut utility_trace = Vec::with_capacity(config.steps);
    let mut raw_trace = Vec::with_capacity(config.steps);
    let empty = space.exist_support() == 0 && space.new_support() == 0;
    let mut best: Option<(f64, Mask)> = None;
    if empty {
        diagnostics.push(
            "no perturbation candidates in the allowed support; returning the original graph"
                .into(),
        );
    } else {
        let on_exist = space.c_exist.mapv(|c| f64::from(u8::from(c != 0.0)));
        let on_new = space.c_new.mapv(|c| f64::from(u8::from(c != 0.0)));
        for step in 0..config.steps {
            let a_prime = apply_mask_unchecked(&a_local, &space, &mask);
            let (r, d_adj) = objective.value_and_grad(&a_prime)?;
            let objective_value =
                r + config.lambda1 * mask.s_exist.sum() - config.lambda2 * mask.s_new.sum();
            if !objective_value.is_finite() || d_adj.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    what: format!("explanation objective {objective_value}"),
                });
            }
            raw_trace.push(r);
            utility_trace.push(objective_value);
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, mask.clone()));
            }
            let mut g = mask_grad(&d_adj, &space);
            g.s_exist.scaled_add(config.lambda1, &on_exist);
            g.s_new.scaled_add(-config.lambda2, &on_new);
            if !space.is_directed() {
                // S_ij and S_ji are one variable; Adam must see its full gradient.
                g.s_exist = &g.s_exist + &g.s_exist.t();
                g.s_new = &g.s_new + &g.s_new.t();
            }
            adam_e.ascend(&mut mask.s_exist, &g.s_exist);
            adam_n.ascend(&mut mask.s_new, &g.s_new);
            mask.project(&space);
            observer(step, &mask);
        }
    }

    // Discrete edits in local ids.
    let directed = region.graph.is_directed();
    let mut importance = Vec::new();
    let local_edits = if config.mode == Mode::Preserve {
        let scored: Vec<(Edge, f64)> = ranked_support(&space.c_exist, directed)
            .into_iter()
            .map(|e| (e, 1.0 - mask.s_exist[[e.0, e.1]]))
            .collect();
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| {
            scored[b]
                .1
                .total_cmp(&scored[a].1)
                .then(scored[a].0.cmp(&scored[b].0))
        });
        let mut kept = vec![false; scored.len()];
        for &idx in order.iter().take(config.keep_top) {
            kept[idx] = true;
        }
        let mut removals = Vec::new();
        for (idx, &(e, s)) in scored.iter().enumerate() {
            let (i, j) = region.global_edge(e);
            importance.push(EdgeScore {
                i,
                j,
                score: s,
                kept: kept[idx],
            });
            if !kept[idx] {
                removals.push(e);
            }
        }
        EdgeEdits {
            additions: Vec::new(),
            removals,
        }
    } else {
        for e in ranked_support(&space.c_exist, directed) {
            let (i, j) = region.global_edge(e);
            importance.push(EdgeScore {
                i,
                j,
                score: mask.s_exist[[e.0, e.1]],
                kept: false,
            });
        }
        if empty {
            EdgeEdits::default()
        } else {
            let mut edits = discrete_edits(&objective, &a_local, &mask, config, directed)?;
            // The best iterate can sit past a peak the final mask drifted away
            // from; keep whichever discrete result scores higher.
            if let Some((_, best_mask)) = &best {
                if best_mask != &mask {
                    let alt = discrete_edits(&objective, &a_local, best_mask, config, directed)?;
                    let score = |e: &EdgeEdits| {
                        objective
                            .evaluate(&edited(&a_local, e, directed))
                            .map(|v| v.0)
                    };
                    if score(&alt)? > score(&edits)? {
                        edits = alt;
                    }
                }
            }
            edits
        }
    };

    let additions: Vec<Edge> = local_edits
        .additions
        .iter()
        .map(|&e| region.global_edge(e))
        .collect();
    let removals: Vec<Edge> = local_edits
        .removals
        .iter()
        .map(|&e| region.global_edge(e))
        .collect();
    let discrete = graph.with_edits(&additions, &removals)?;

    let mut outcomes = Vec::with_capacity(members.len());
    for ((m, u), original) in members.iter().zip(&utilities).zip(originals) {
        let x = m.features.as_ref().unwrap_or(graph.features());
        let updated = model.predict_with(discrete.adjacency(), x, m.readout)?;
        outcomes.push(MemberOutcome {
            node: match m.readout {
                Readout::Node(v) => Some(v),
                Readout::Graph => None,
            },
            omega: u.omega(),
            utility_original: u.value(&original.probs),
            utility_discrete: u.value(&updated.probs),
            original,
            updated,
        });
    }

    Ok(ExplanationResult {
        mode: config.mode,
        config: config.clone(),
        mask: sparse_mask(&mask, &region, directed),
        importance,
        additions,
        removals,
        utility_trace,
        raw_utility_trace: raw_trace,
        original_prediction: outcomes[0].original.clone(),
        updated_prediction: outcomes[0].updated.clone(),
        members: outcomes,
        diagnostics,
        a_prime_discrete: Some(discrete),
    })
}

fn target_set(
    config: &ExplainConfig,
    member: &Member,
    graph: &Graph,
    pred: &Prediction,
) -> Result<Vec<usize>> {
    if let Some(o) = member.omega.as_ref().or(config.target_labels.as_ref()) {
        return Ok(o.clone());
    }
    let predicted = || {
        if pred.predicted.is_empty() {
            vec![pred.top1()]
        } else {
            pred.predicted.clone()
        }
    };
    let truth = match (member.readout, graph.node_labels()) {
        (Readout::Node(v), Some(labels)) => Some(vec![labels[v]]),
        _ => None,
    };
    match config.mode {
        Mode::Preserve => Ok(predicted()),
        Mode::Attack => Ok(truth.unwrap_or_else(predicted)),
        Mode::Promote => {
            truth.ok_or_else(|| Error::InvalidConfig("promote mode needs target_labels".into()))
        }
    }
}

fn region_for(
    model: &GcnModel,
    graph: &Graph,
    members: &[Member],
    config: &ExplainConfig,
) -> Region {
    let whole = || Region {
        graph: graph.clone(),
        nodes: None,
    };
    if !config.local || members.iter().any(|m| m.features.is_some()) {
        return whole();
    }
    let seeds: Option<Vec<usize>> = members
        .iter()
        .map(|m| match m.readout {
            Readout::Node(v) => Some(v),
            Readout::Graph => None,
        })
        .collect();
    let Some(seeds) = seeds else { return whole() };
    let ball = graph.k_hop_nodes(&seeds, model.n_layers() + 1);
    if ball.len() == graph.n() {
        return whole();
    }
    Region {
        graph: graph.induced(&ball),
        nodes: Some(ball),
    }
}

fn restricted_space(
    region: &Region,
    config: &ExplainConfig,
    diagnostics: &mut Vec<String>,
) -> Result<PerturbationSpace> {
    let mut space = perturbation_candidates(&region.graph);
    let removals_allowed = config.mode == Mode::Preserve || config.budget_remove > 0;
    let additions_allowed = config.mode != Mode::Preserve && config.budget_add > 0;
    if !removals_allowed {
        space = space.without_removals();
    }
    if !additions_allowed {
        space = space.without_additions();
    }
    if config.subset_support {
        let theta = config.node_subset.as_ref().expect("validated");
        let mut inside = vec![false; region.graph.n()];
        for &v in theta {
            if let Some(l) = region.local(v) {
                inside[l] = true;
            }
        }
        space.restrict(|i, j| inside[i] && inside[j]);
    }
    if config.addition_scope == AdditionScope::InterGroup {
        let s = region
            .graph
            .sensitive()
            .ok_or_else(|| {
                Error::InvalidConfig("inter-group additions need a sensitive attribute".into())
            })?
            .to_vec();
        Zip::indexed(&mut space.c_new).for_each(|(i, j), c| {
            if s[i] == s[j] {
                *c = 0.0;
            }
        });
    }
    if removals_allowed && space.exist_support() == 0 {
        diagnostics.push("no removable edges in the allowed support".into());
    }
    if additions_allowed && space.new_support() == 0 {
        diagnostics.push("no addable edges in the allowed support".into());
    }
    Ok(space)
}

/// Supported entries 0.1 plus seeded jitter in `[0, 0.01]`.
fn initial_mask(space: &PerturbationSpace, seed: u64) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = space.n();
    let mut mask = Mask::zeros(n);
    for (s, c) in [
        (&mut mask.s_exist, &space.c_exist),
        (&mut mask.s_new, &space.c_new),
    ] {
        for i in 0..n {
            for j in 0..n {
                let jitter: f64 = rng.random_range(0.0..=0.01);
                if c[[i, j]] != 0.0 {
                    s[[i, j]] = 0.1 + jitter;
                }
            }
        }
    }
    mask.project(space);
    mask
}

/// Supported edges in ascending order, each undirected pair once.
fn ranked_support(c: &Array2<f64>, directed: bool) -> Vec<Edge> {
    c.indexed_iter()
        .filter(|&((i, j), &v)| v != 0.0 && (directed || i < j))
        .map(|(e, _)| e)
        .collect()
}

fn discrete_edits(
    objective: &Objective<'_>,
    a_local: &Array2<f64>,
    mask: &Mask,
    config: &ExplainConfig,
    directed: bool,
) -> Result<EdgeEdits> {
    let pick = |binary: &Mask| {
        let gated = Mask {
            s_exist: &mask.s_exist * &binary.s_exist,
            s_new: &mask.s_new * &binary.s_new,
        };
        select_budget(
            &gated,
            config.budget_add,
            config.budget_remove,
            config.budget_total,
            directed,
        )
    };
    match config.discretize {
        Discretize::Threshold => Ok(pick(&threshold(mask))),
        Discretize::Bernoulli { samples } => {
            let mut best: Option<(f64, EdgeEdits)> = None;
            for sample in bernoulli_samples(mask, samples, directed, config.seed) {
                let edits = pick(&sample);
                let a = edited(a_local, &edits, directed);
                let (value, _) = objective.evaluate(&a)?;
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, edits));
                }
            }
            Ok(best.expect("at least one sample").1)
        }
    }
}

fn edited(a: &Array2<f64>, edits: &EdgeEdits, directed: bool) -> Array2<f64> {
    let mut out = a.clone();
    let mut set = |(i, j): Edge, v: f64| {
        out[[i, j]] = v;
        if !directed {
            out[[j, i]] = v;
        }
    };
    for &e in &edits.additions {
        set(e, 1.0);
    }
    for &e in &edits.removals {
        set(e, 0.0);
    }
    out
}

fn sparse_mask(mask: &Mask, region: &Region, directed: bool) -> SparseMask {
    let entries = |s: &Array2<f64>| {
        let mut v: Vec<MaskEntry> = ranked_entries(s, directed)
            .into_iter()
            .map(|(e, value)| {
                let (i, j) = region.global_edge(e);
                MaskEntry { i, j, value }
            })
            .collect();
        v.sort_by_key(|e| (e.i, e.j));
        v
    };
    SparseMask {
        exist: entries(&mask.s_exist),
        new: entries(&mask.s_new),
    }
}
