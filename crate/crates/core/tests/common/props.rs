//! Randomised invariant checks. Each property runs a deterministic
//! proptest runner and reports the first counterexample as an error string,
//! so the same checks back both the property tests and the acceptance suite.

use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topoexplain::explain::{
    group_explain_observed, optimize_mask, ranked_entries, select_budget, ExplainConfig, Member,
    Mode,
};
use topoexplain::gcn::{GcnModel, Head, Readout};
use topoexplain::graph::{apply_mask, normalize_adjacency, perturbation_candidates, Graph, Mask};
use topoexplain::metrics::{auc, delta_eo, walk_count, walk_pvalue, WalkTest};
use topoexplain::saliency::classify;
use topoexplain::synth::{
    cooccurrence_graph, gen_ba_shapes, gen_biased_sbm, gen_multilabel, gen_tree_cycles,
    gen_tree_grid, BaShapesConfig, MotifDataset, MultiLabelConfig, SbmConfig, TreeConfig,
};

use super::{instance, jsm_identity_error, mask_grad_error, relu_margin, toy, weight_grad_error};

pub const CASES: u32 = 100;

pub struct Property {
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        max_shrink_iters: 64,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Random graph with `n` nodes and edge probability `p`, 3 random features.
pub fn random_graph(seed: u64, n: usize, directed: bool, p: f64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (directed || i < j) && rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
    Graph::from_edges(n, directed, &edges, x).unwrap()
}

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (any::<u64>(), 1usize..=9, any::<bool>(), 0.0f64..=1.0)
        .prop_map(|(s, n, d, p)| random_graph(s, n, d, p))
}

/// Mask on the candidate supports of `graph`; `binary` draws 0/1 entries.
fn random_mask(graph: &Graph, seed: u64, binary: bool) -> Mask {
    let space = perturbation_candidates(graph);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Mask::filled(&space, 0.0);
    let n = graph.n();
    for (s, c) in [
        (&mut mask.s_exist, &space.c_exist),
        (&mut mask.s_new, &space.c_new),
    ] {
        for i in 0..n {
            for j in 0..n {
                if c[[i, j]] == 0.0 || (!graph.is_directed() && j < i) {
                    continue;
                }
                let v = if binary {
                    f64::from(u8::from(rng.random_bool(0.5)))
                } else {
                    rng.random_range(0.0..=1.0)
                };
                s[[i, j]] = v;
                if !graph.is_directed() {
                    s[[j, i]] = v;
                }
            }
        }
    }
    mask
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

pub fn candidate_invariants() -> Result<(), String> {
    check(CASES, graph_strategy(), |g| {
        let s = perturbation_candidates(&g);
        let a = g.adjacency();
        let n = g.n();
        for i in 0..n {
            for j in 0..n {
                let (ce, cn) = (s.c_exist[[i, j]], s.c_new[[i, j]]);
                let supplement = if i == j { 0.0 } else { 1.0 - a[[i, j]] };
                ensure(
                    ce + cn == if i == j { 0.0 } else { supplement - a[[i, j]] },
                    || format!("C != Abar - A at {i},{j}"),
                )?;
                ensure(ce * cn == 0.0, || "supports overlap".into())?;
                ensure((ce == -1.0) == (a[[i, j]] == 1.0), || {
                    "c_exist support".into()
                })?;
                ensure((cn == 1.0) == (i != j && a[[i, j]] == 0.0), || {
                    "c_new support".into()
                })?;
            }
        }
        if !g.is_directed() {
            ensure(s.c_exist == s.c_exist.t() && s.c_new == s.c_new.t(), || {
                "asymmetric candidates".into()
            })?;
        }
        Ok(())
    })
}

pub fn apply_mask_box() -> Result<(), String> {
    check(CASES, (graph_strategy(), any::<u64>()), |(g, seed)| {
        let space = perturbation_candidates(&g);
        let a = apply_mask(&g, &space, &random_mask(&g, seed, false)).unwrap();
        ensure(a.iter().all(|&v| (0.0..=1.0).contains(&v)), || {
            "entry outside [0,1]".into()
        })?;
        ensure(a.diag().iter().all(|&v| v == 0.0), || {
            "non-zero diagonal".into()
        })
    })
}

pub fn binary_mask_flips() -> Result<(), String> {
    check(CASES, (graph_strategy(), any::<u64>()), |(g, seed)| {
        let space = perturbation_candidates(&g);
        let mask = random_mask(&g, seed, true);
        let a_prime = apply_mask(&g, &space, &mask).unwrap();
        let a = g.adjacency();
        for ((i, j), &v) in a_prime.indexed_iter() {
            let flipped = mask.s_exist[[i, j]] == 1.0 || mask.s_new[[i, j]] == 1.0;
            let expect = if flipped { 1.0 - a[[i, j]] } else { a[[i, j]] };
            ensure(v == expect, || format!("entry {i},{j}: {v} vs {expect}"))?;
        }
        Ok(())
    })
}

pub fn all_ones_gives_supplement() -> Result<(), String> {
    check(CASES, graph_strategy(), |g| {
        let space = perturbation_candidates(&g);
        let a_prime = apply_mask(&g, &space, &Mask::filled(&space, 1.0)).unwrap();
        let n = g.n();
        let supplement = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                1.0 - g.adjacency()[[i, j]]
            }
        });
        ensure(a_prime == supplement, || "not the supplement graph".into())
    })
}

pub fn normalize_matches_oracle() -> Result<(), String> {
    check(CASES, (graph_strategy(), any::<u64>()), |(g, seed)| {
        let space = perturbation_candidates(&g);
        let a_prime = apply_mask(&g, &space, &random_mask(&g, seed, false)).unwrap();
        let t = normalize_adjacency(&a_prime);
        let n = g.n();
        let hat = |i: usize, j: usize| a_prime[[i, j]] + if i == j { 1.0 } else { 0.0 };
        let degree: Vec<f64> = (0..n).map(|i| (0..n).map(|j| hat(i, j)).sum()).collect();
        for i in 0..n {
            for j in 0..n {
                let expect = hat(i, j) / (degree[i] * degree[j]).sqrt();
                ensure((t[[i, j]] - expect).abs() <= 1e-12, || {
                    format!("entry {i},{j}")
                })?;
            }
        }
        if a_prime == a_prime.t() {
            ensure(
                t.iter()
                    .zip(t.t().iter())
                    .all(|(x, y)| (x - y).abs() <= 1e-15),
                || "asymmetric".into(),
            )?;
        }
        Ok(())
    })
}

fn random_model(seed: u64, m0: usize, head: Head) -> GcnModel {
    let layers = 2 + (seed % 2) as usize;
    let mut dims = vec![m0];
    dims.extend(std::iter::repeat_n(4, layers));
    GcnModel::init_with_bias(&dims, 3, head, seed, 0.5).unwrap()
}

pub fn softmax_rows_sum_to_one() -> Result<(), String> {
    check(CASES, (graph_strategy(), any::<u64>()), |(g, seed)| {
        let m = random_model(seed, 3, Head::NodeSoftmax);
        let out = m.output(g.adjacency(), g.features()).unwrap();
        for v in 0..g.n() {
            let p = out.prediction(Readout::Node(v)).probs;
            ensure((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9, || {
                format!("node {v} sums to {}", p.iter().sum::<f64>())
            })?;
        }
        let sig = random_model(seed, 3, Head::GraphMultilabelSigmoid);
        let p = sig.predict(&g, Readout::Graph).unwrap().probs;
        ensure(p.iter().all(|&v| v > 0.0 && v < 1.0), || {
            "sigmoid outside (0,1)".into()
        })
    })
}

pub fn forward_permutation_equivariant() -> Result<(), String> {
    let strategy = (graph_strategy(), any::<u64>()).prop_flat_map(|(g, seed)| {
        let n = g.n();
        (
            Just(g),
            Just(seed),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
    });
    check(CASES, strategy, |(g, seed, perm)| {
        let n = g.n();
        let a = g.adjacency();
        let ap = Array2::from_shape_fn((n, n), |(i, j)| {
            let (oi, oj) = (
                perm.iter().position(|&p| p == i).unwrap(),
                perm.iter().position(|&p| p == j).unwrap(),
            );
            a[[oi, oj]]
        });
        let x = g.features();
        let xp = Array2::from_shape_fn(x.dim(), |(i, k)| {
            x[[perm.iter().position(|&p| p == i).unwrap(), k]]
        });
        for head in [Head::NodeSoftmax, Head::GraphMultilabelSigmoid] {
            let m = random_model(seed, 3, head);
            let (o, op) = (m.output(a, x).unwrap(), m.output(&ap, &xp).unwrap());
            for v in 0..n {
                let (p, q) = match head {
                    Head::NodeSoftmax => (
                        o.prediction(Readout::Node(v)).probs,
                        op.prediction(Readout::Node(perm[v])).probs,
                    ),
                    Head::GraphMultilabelSigmoid => (
                        vec![o.prediction(Readout::Graph).probs[v]],
                        vec![op.prediction(Readout::Graph).probs[perm[v]]],
                    ),
                };
                ensure(
                    p.iter().zip(&q).all(|(x, y)| (x - y).abs() <= 1e-10),
                    || format!("node {v} differs"),
                )?;
            }
        }
        Ok(())
    })
}

pub fn zero_mask_is_identity() -> Result<(), String> {
    check(CASES, (graph_strategy(), any::<u64>()), |(g, seed)| {
        let space = perturbation_candidates(&g);
        let a_prime = apply_mask(&g, &space, &Mask::filled(&space, 0.0)).unwrap();
        ensure(a_prime == g.adjacency(), || "A'(0) != A".into())?;
        let m = random_model(seed, 3, Head::NodeSoftmax);
        let (o1, o2) = (
            m.output(&a_prime, g.features()).unwrap(),
            m.output(g.adjacency(), g.features()).unwrap(),
        );
        ensure(o1.probs == o2.probs && o1.logits == o2.logits, || {
            "forward differs".into()
        })
    })
}

pub fn gradients_match_differences() -> Result<(), String> {
    check(CASES, 0u64..1_000_000, |seed| {
        let inst = instance(seed);
        // A ReLU within a step of its kink invalidates central differences.
        prop_assume!(relu_margin(&inst) > 1e-3);
        let (e1, e2, e3) = (
            mask_grad_error(&inst),
            weight_grad_error(&inst),
            jsm_identity_error(&inst),
        );
        ensure(e1 < 1e-4 && e2 < 1e-4 && e3 < 1e-6, || {
            format!("seed {seed}: {e1:e} {e2:e} {e3:e}")
        })
    })
}

pub fn classify_depends_on_signs() -> Result<(), String> {
    check(
        CASES * 10,
        (prop::bool::ANY, -10.0f64..10.0, 1e-6f64..1e6),
        |(edge, j, scale)| {
            let a = f64::from(u8::from(edge));
            let base = classify(a, j);
            ensure(classify(a, j * scale) == base, || {
                format!("rescale changes tag of {j}")
            })?;
            ensure(classify(a, 0.0) == classify(a, -0.0), || {
                "signed zero".into()
            })
        },
    )
}

fn explain_case() -> impl Strategy<Value = (Graph, u64, Mode, f64)> {
    (
        any::<u64>(),
        3usize..=8,
        any::<bool>(),
        0.1f64..0.7,
        any::<u64>(),
        0usize..3,
        -0.05f64..0.05,
    )
        .prop_map(|(gs, n, d, p, seed, mode, lambda)| {
            let mode = [Mode::Preserve, Mode::Promote, Mode::Attack][mode];
            (random_graph(gs, n, d, p), seed, mode, lambda)
        })
}

fn explain_config(mode: Mode, seed: u64, lambda: f64) -> ExplainConfig {
    ExplainConfig {
        steps: 25,
        seed,
        lambda1: lambda,
        lambda2: lambda,
        local: false,
        target_labels: Some(vec![(seed % 3) as usize]),
        ..ExplainConfig::for_mode(mode)
    }
}

pub fn mask_iterates_valid() -> Result<(), String> {
    check(CASES, explain_case(), |(g, seed, mode, lambda)| {
        let m = random_model(seed, 3, Head::NodeSoftmax);
        let space = perturbation_candidates(&g);
        let cfg = explain_config(mode, seed, lambda);
        let mut bad = None;
        let r = group_explain_observed(&m, &g, &[Member::node(0)], &cfg, &mut |step, mask| {
            if bad.is_none() {
                if let Err(e) = mask.validate(&space) {
                    bad = Some(format!("step {step}: {e}"));
                } else if !g.is_directed()
                    && (mask.s_exist != mask.s_exist.t() || mask.s_new != mask.s_new.t())
                {
                    bad = Some(format!("step {step}: asymmetric mask"));
                }
            }
        })
        .unwrap();
        ensure(bad.is_none(), || bad.clone().unwrap())?;
        ensure(
            r.utility_trace
                .iter()
                .chain(&r.raw_utility_trace)
                .all(|v| v.is_finite()),
            || "non-finite trace".into(),
        )?;
        let mut best = f64::NEG_INFINITY;
        for &v in &r.raw_utility_trace {
            let next = best.max(v);
            ensure(next >= best, || "running maximum decreased".into())?;
            best = next;
        }
        ensure(
            r.importance.iter().all(|s| (0.0..=1.0).contains(&s.score)),
            || "importance outside [0,1]".into(),
        )?;
        let within = if mode == Mode::Preserve {
            r.additions.is_empty()
        } else {
            r.additions.len() <= cfg.budget_add && r.removals.len() <= cfg.budget_remove
        };
        ensure(within, || "budget exceeded".into())
    })
}

pub fn no_additions_gives_subgraph() -> Result<(), String> {
    check(CASES, explain_case(), |(g, seed, mode, lambda)| {
        let m = random_model(seed, 3, Head::NodeSoftmax);
        let space = perturbation_candidates(&g);
        let cfg = ExplainConfig {
            budget_add: 0,
            lambda2: lambda * 10.0,
            ..explain_config(mode, seed, lambda)
        };
        let mut worst = 0.0f64;
        let r = group_explain_observed(&m, &g, &[Member::node(0)], &cfg, &mut |_, mask| {
            let a_prime = apply_mask(&g, &space, mask).unwrap();
            worst = worst.max(
                (&a_prime - g.adjacency())
                    .iter()
                    .fold(0.0f64, |w, &v| w.max(v)),
            );
        })
        .unwrap();
        ensure(worst == 0.0, || format!("A' exceeds A by {worst}"))?;
        ensure(r.additions.is_empty(), || "discrete additions".into())
    })
}

pub fn select_budget_matches_sorted_oracle() -> Result<(), String> {
    let strategy = (
        any::<u64>(),
        2usize..=7,
        any::<bool>(),
        0usize..6,
        0usize..6,
    );
    check(CASES, strategy, |(seed, n, directed, ba, br)| {
        let g = random_graph(seed, n, directed, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut mask = random_mask(&g, seed, false);
        // Coarse values force ties.
        mask.s_exist.mapv_inplace(|v| (v * 4.0).round() / 4.0);
        mask.s_new.mapv_inplace(|v| (v * 4.0).round() / 4.0);
        let edits = select_budget(&mask, ba, br, None, directed);
        let oracle = |s: &Array2<f64>, k: usize| {
            let mut all: Vec<((usize, usize), f64)> = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && (directed || i < j) && s[[i, j]] > 0.0 {
                        all.push(((i, j), s[[i, j]]));
                    }
                }
            }
            // Stable sort of a lexicographic list keeps ties in (i, j) order.
            all.sort_by(|a, b| b.1.total_cmp(&a.1));
            all.into_iter().take(k).map(|(e, _)| e).collect::<Vec<_>>()
        };
        ensure(edits.additions == oracle(&mask.s_new, ba), || {
            "additions differ".into()
        })?;
        ensure(edits.removals == oracle(&mask.s_exist, br), || {
            "removals differ".into()
        })?;
        // Relabelling nodes with distinct values relabels the selection.
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            p
        };
        let jitter = Array2::from_shape_fn((n, n), |(i, j)| {
            let (a, b) = if directed || i < j { (i, j) } else { (j, i) };
            (a * n + b) as f64 * 1e-6
        });
        let distinct = Mask {
            s_exist: &mask.s_exist
                + &(&jitter * &mask.s_exist.mapv(|v| f64::from(u8::from(v > 0.0)))),
            s_new: &mask.s_new + &(&jitter * &mask.s_new.mapv(|v| f64::from(u8::from(v > 0.0)))),
        };
        let permute = |s: &Array2<f64>| {
            let mut out = Array2::zeros((n, n));
            for ((i, j), &v) in s.indexed_iter() {
                out[[perm[i], perm[j]]] = v;
            }
            out
        };
        let moved = Mask {
            s_exist: permute(&distinct.s_exist),
            s_new: permute(&distinct.s_new),
        };
        let canon = |(i, j): (usize, usize)| if directed || i < j { (i, j) } else { (j, i) };
        let set = |v: &[(usize, usize)]| {
            v.iter()
                .map(|&(i, j)| canon((perm[i], perm[j])))
                .collect::<BTreeSet<_>>()
        };
        let a = select_budget(&distinct, ba, br, None, directed);
        let b = select_budget(&moved, ba, br, None, directed);
        ensure(
            set(&a.additions) == b.additions.iter().copied().collect(),
            || "additions not equivariant".into(),
        )?;
        ensure(
            set(&a.removals) == b.removals.iter().copied().collect(),
            || "removals not equivariant".into(),
        )?;
        ensure(
            ranked_entries(&mask.s_new, directed).len() >= edits.additions.len(),
            || "ranking shorter".into(),
        )
    })
}

pub fn attack_success_changes_prediction() -> Result<(), String> {
    check(CASES, 0u64..100_000, |seed| {
        let t = toy(seed);
        let n = t.graph.n();
        let cfg = ExplainConfig {
            budget_add: n * n,
            budget_remove: n * n,
            local: false,
            ..ExplainConfig::for_mode(Mode::Attack)
        };
        let r = optimize_mask(&t.model, &t.graph, Readout::Node(t.node), &cfg).unwrap();
        let reached = r.raw_utility_trace.iter().any(|&v| v > 0.0);
        ensure(
            !reached || r.updated_prediction.top1() != r.original_prediction.top1(),
            || format!("seed {seed}: positive attack utility but top-1 unchanged"),
        )
    })
}

fn small_motif(seed: u64, family: usize, motifs: usize) -> MotifDataset {
    match family {
        0 => gen_ba_shapes(&BaShapesConfig {
            base_n: 20,
            ba_m: 2,
            n_motifs: motifs,
            seed,
            ..Default::default()
        }),
        1 => gen_tree_cycles(&TreeConfig {
            tree_depth: 4,
            n_motifs: motifs,
            seed,
            noise_edge_frac: 0.1,
            ..TreeConfig::cycles()
        }),
        _ => gen_tree_grid(&TreeConfig {
            tree_depth: 4,
            n_motifs: motifs,
            seed,
            noise_edge_frac: 0.1,
            ..TreeConfig::grid()
        }),
    }
    .unwrap()
}

pub fn generators_deterministic_and_valid() -> Result<(), String> {
    check(
        CASES,
        (any::<u64>(), 0usize..3, 0usize..5),
        |(seed, family, motifs)| {
            let d = small_motif(seed, family, motifs);
            ensure(d == small_motif(seed, family, motifs), || {
                "motif generator not deterministic".into()
            })?;
            let g = &d.graph;
            let a = g.adjacency();
            ensure(a == a.t() && a.diag().iter().all(|&v| v == 0.0), || {
                "invalid graph".into()
            })?;
            ensure(g.features().nrows() == g.n(), || "feature rows".into())?;
            // Motif k occupies a contiguous block after the base nodes.
            let size = [5, 6, 9][family];
            let base = g.n() - motifs * size;
            let block = |v: usize| (v >= base).then(|| (v - base) / size);
            let truth: BTreeSet<(usize, usize)> = d.motif_edges.iter().copied().collect();
            for (i, j) in g.edges() {
                let internal = block(i).is_some() && block(i) == block(j);
                ensure(internal == truth.contains(&(i, j)), || {
                    format!("edge ({i},{j}) misclassified")
                })?;
            }
            ensure(truth.iter().all(|&(i, j)| g.has_edge(i, j)), || {
                "motif edge missing".into()
            })?;
            let sbm = |s| {
                gen_biased_sbm(&SbmConfig {
                    n_per_group: 15,
                    seed: s,
                    ..Default::default()
                })
                .unwrap()
            };
            ensure(sbm(seed) == sbm(seed), || "sbm not deterministic".into())?;
            let ml = |s| {
                gen_multilabel(&MultiLabelConfig {
                    n_instances: 30,
                    seed: s,
                    ..Default::default()
                })
                .unwrap()
            };
            ensure(ml(seed) == ml(seed), || {
                "multi-label generator not deterministic".into()
            })
        },
    )
}

pub fn cooccurrence_respects_threshold() -> Result<(), String> {
    let strategy = (
        prop::collection::vec(prop::collection::vec(0u8..2, 5), 1..30),
        0.0f64..=1.0,
    );
    check(CASES, strategy, |(sets, threshold)| {
        let refs: Vec<&[u8]> = sets.iter().map(Vec::as_slice).collect();
        let edges: BTreeSet<(usize, usize)> = cooccurrence_graph(5, &refs, threshold)
            .into_iter()
            .collect();
        for i in 0..5 {
            let with_i: Vec<&Vec<u8>> = sets.iter().filter(|y| y[i] == 1).collect();
            for j in 0..5 {
                let expect = i != j
                    && !with_i.is_empty()
                    && with_i.iter().filter(|y| y[j] == 1).count() as f64 / with_i.len() as f64
                        >= threshold;
                ensure(edges.contains(&(i, j)) == expect, || {
                    format!("pair ({i},{j})")
                })?;
            }
        }
        Ok(())
    })
}

fn auc_samples() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec(((0u8..8).prop_map(f64::from), any::<bool>()), 2..40)
        .prop_filter("both classes", |v| {
            v.iter().any(|s| s.1) && v.iter().any(|s| !s.1)
        })
}

pub fn auc_monotone_and_oracle() -> Result<(), String> {
    check(CASES, auc_samples(), |samples| {
        let a = auc(&samples).unwrap().auc;
        let transformed: Vec<(f64, bool)> = samples
            .iter()
            .map(|&(s, l)| ((s * 0.7).exp() - 3.0, l))
            .collect();
        ensure((auc(&transformed).unwrap().auc - a).abs() <= 1e-12, || {
            "not rank invariant".into()
        })?;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for p in samples.iter().filter(|s| s.1) {
            for q in samples.iter().filter(|s| !s.1) {
                pairs += 1.0;
                wins += if p.0 > q.0 {
                    1.0
                } else if p.0 == q.0 {
                    0.5
                } else {
                    0.0
                };
            }
        }
        ensure((wins / pairs - a).abs() <= 1e-12, || {
            format!("auc {a} vs oracle {}", wins / pairs)
        })
    })
}

pub fn delta_eo_group_symmetric() -> Result<(), String> {
    let strategy = prop::collection::vec((0usize..2, 0usize..2, 0u8..2), 4..60)
        .prop_filter("positives in both groups", |v| {
            (0..2u8).all(|s| v.iter().any(|&(_, y, g)| y == 1 && g == s))
        });
    check(CASES, strategy, |rows| {
        let pred: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let y: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let s: Vec<u8> = rows.iter().map(|r| r.2).collect();
        let flipped: Vec<u8> = s.iter().map(|v| 1 - v).collect();
        let (a, b) = (
            delta_eo(&pred, &y, &s).unwrap(),
            delta_eo(&pred, &y, &flipped).unwrap(),
        );
        ensure(
            a.delta_eo == b.delta_eo && (0.0..=1.0).contains(&a.delta_eo),
            || "asymmetric gap".into(),
        )
    })
}

/// Walks of length `len` from `from` to `to`, by depth-first enumeration.
fn dfs_walks(a: &Array2<f64>, from: usize, to: usize, len: usize) -> u64 {
    if len == 0 {
        return u64::from(from == to);
    }
    (0..a.nrows())
        .filter(|&w| a[[from, w]] != 0.0)
        .map(|w| dfs_walks(a, w, to, len - 1))
        .sum()
}

pub fn walk_count_matches_dfs() -> Result<(), String> {
    let strategy = (
        any::<u64>(),
        1usize..=6,
        any::<bool>(),
        0.0f64..=1.0,
        1usize..=3,
        0usize..=1,
        prop::collection::vec(0usize..6, 0..5),
    );
    check(CASES, strategy, |(seed, n, directed, p, len, h, nodes)| {
        let g = random_graph(seed, n, directed, p);
        let a = g.adjacency();
        let nodes: Vec<usize> = nodes
            .into_iter()
            .filter(|&v| v < n)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        // h-hop expansion ignoring direction.
        let mut set: BTreeSet<usize> = nodes.iter().copied().collect();
        for _ in 0..h {
            let grown: Vec<usize> = (0..n)
                .filter(|&w| set.iter().any(|&u| a[[u, w]] != 0.0 || a[[w, u]] != 0.0))
                .collect();
            set.extend(grown);
        }
        let symmetric = a == a.t();
        let mut expect = 0;
        for &i in &set {
            for &j in &set {
                if i != j && (!symmetric || i < j) {
                    expect += (1..=len).map(|l| dfs_walks(a, i, j, l)).sum::<u64>();
                }
            }
        }
        let got = walk_count(a, &nodes, len, h).unwrap();
        ensure(got == expect, || format!("matrix {got} vs dfs {expect}"))
    })
}

pub fn pvalue_in_unit_interval() -> Result<(), String> {
    let strategy = (
        any::<u64>(),
        4usize..=8,
        0.1f64..0.6,
        1usize..=3,
        1usize..=60,
    );
    check(CASES, strategy, |(seed, n, p, k, trials)| {
        let g = random_graph(seed, n, true, p);
        let free = topoexplain::metrics::non_edges(&g);
        prop_assume!(free.len() >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        let r = walk_pvalue(
            &g,
            &truth,
            &free,
            k,
            &WalkTest {
                trials,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        ensure(
            r.p_value > 0.0 && r.p_value <= 1.0 && r.samples.len() == trials,
            || format!("p = {}", r.p_value),
        )
    })
}

pub fn all() -> Vec<Property> {
    vec![
        Property {
            name: "candidates partition the supplement difference",
            run: candidate_invariants,
        },
        Property {
            name: "apply_mask stays in the box with zero diagonal",
            run: apply_mask_box,
        },
        Property {
            name: "binary masks flip exactly the selected entries",
            run: binary_mask_flips,
        },
        Property {
            name: "all-ones mask yields the supplement graph",
            run: all_ones_gives_supplement,
        },
        Property {
            name: "normalisation matches the dense oracle",
            run: normalize_matches_oracle,
        },
        Property {
            name: "softmax rows sum to one",
            run: softmax_rows_sum_to_one,
        },
        Property {
            name: "forward is permutation equivariant",
            run: forward_permutation_equivariant,
        },
        Property {
            name: "zero mask leaves the forward pass unchanged",
            run: zero_mask_is_identity,
        },
        Property {
            name: "analytic gradients match central differences",
            run: gradients_match_differences,
        },
        Property {
            name: "edge tags depend only on signs",
            run: classify_depends_on_signs,
        },
        Property {
            name: "mask iterates satisfy the mask invariants",
            run: mask_iterates_valid,
        },
        Property {
            name: "without additions the perturbed graph is a subgraph",
            run: no_additions_gives_subgraph,
        },
        Property {
            name: "budget selection matches a sorted oracle",
            run: select_budget_matches_sorted_oracle,
        },
        Property {
            name: "positive attack utility changes the top-1 label",
            run: attack_success_changes_prediction,
        },
        Property {
            name: "generators are deterministic and well formed",
            run: generators_deterministic_and_valid,
        },
        Property {
            name: "co-occurrence edges respect the threshold",
            run: cooccurrence_respects_threshold,
        },
        Property {
            name: "auc is rank based and matches all pairs",
            run: auc_monotone_and_oracle,
        },
        Property {
            name: "equalized-odds gap is group symmetric",
            run: delta_eo_group_symmetric,
        },
        Property {
            name: "walk counts match depth-first enumeration",
            run: walk_count_matches_dfs,
        },
        Property {
            name: "p-values lie in (0, 1]",
            run: pvalue_in_unit_interval,
        },
    ]
}
