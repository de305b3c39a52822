//! Seeded small instances and finite-difference oracles shared by the
//! gradient tests and the acceptance suite.
#![allow(dead_code)]

pub mod props;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use topoexplain::explain::{grad_adjacency, Utility};
use topoexplain::gcn::{grad_weights, loss, GcnModel, Head, Readout, Target};
use topoexplain::graph::{apply_mask, perturbation_candidates, Graph, Mask, PerturbationSpace};
use topoexplain::saliency::jacobian_saliency;

pub const FD_STEP: f64 = 1e-4;

pub struct Instance {
    pub graph: Graph,
    pub model: GcnModel,
    pub space: PerturbationSpace,
    pub mask: Mask,
    pub readout: Readout,
    pub utility: Utility,
    pub targets: Vec<(Readout, Target)>,
}

/// Random graph with 4..=12 nodes, a 2- or 3-layer GCN, an interior mask
/// and a utility. Every fourth instance uses the multi-label sigmoid head.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=12);
    let sigmoid = seed % 4 == 3;
    let directed = sigmoid || rng.random_bool(0.3);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (directed || i < j) && rng.random_bool(0.35) {
                edges.push((i, j));
            }
        }
    }
    let m0 = 3;
    let x = Array2::from_shape_fn((n, m0), |_| rng.random_range(-1.0..1.0));
    let graph = Graph::from_edges(n, directed, &edges, x).unwrap();
    let layers = rng.random_range(2..=3);
    let mut dims = vec![m0];
    for _ in 0..layers {
        dims.push(rng.random_range(3..=6));
    }
    let (head, k) = if sigmoid {
        (Head::GraphMultilabelSigmoid, n)
    } else {
        (Head::NodeSoftmax, 3)
    };
    let model = GcnModel::init_with_bias(&dims, 3, head, seed, 0.5).unwrap();
    let space = perturbation_candidates(&graph);
    let mut mask = Mask::filled(&space, 0.0);
    for (s, c) in [
        (&mut mask.s_exist, &space.c_exist),
        (&mut mask.s_new, &space.c_new),
    ] {
        for ((i, j), v) in s.indexed_iter_mut() {
            if c[[i, j]] != 0.0 {
                *v = rng.random_range(0.05..0.95);
            }
        }
    }
    let readout = if sigmoid {
        Readout::Graph
    } else {
        Readout::Node(rng.random_range(0..n))
    };
    let omega = vec![rng.random_range(0..k)];
    let utility = match seed % 4 {
        0 => Utility::Preserve { omega },
        // A large κ keeps the margin utilities off their clip point.
        1 => Utility::Promote { omega, kappa: 10.0 },
        2 => Utility::Attack { omega, kappa: 10.0 },
        _ => Utility::Probability(omega[0]),
    };
    let targets = if sigmoid {
        vec![(
            Readout::Graph,
            Target::Labels((0..n).map(|_| u8::from(rng.random_bool(0.4))).collect()),
        )]
    } else {
        (0..n)
            .map(|v| (Readout::Node(v), Target::Class(rng.random_range(0..k))))
            .collect()
    };
    Instance {
        graph,
        model,
        space,
        mask,
        readout,
        utility,
        targets,
    }
}

/// `||a - f||∞ / max(||a||∞, ||f||∞)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        0.0
    } else {
        inf(&diff) / scale
    }
}

fn utility_at(inst: &Instance, mask: &Mask) -> f64 {
    let a = apply_mask(&inst.graph, &inst.space, mask).unwrap();
    let p = inst
        .model
        .predict_with(&a, inst.graph.features(), inst.readout)
        .unwrap();
    inst.utility.value(&p.probs)
}

/// Analytic `∂R/∂S` against central differences on every supported entry.
pub fn mask_grad_error(inst: &Instance) -> f64 {
    let (_, g) = grad_adjacency(
        &inst.model,
        &inst.graph,
        &inst.space,
        &inst.mask,
        inst.readout,
        &inst.utility,
    )
    .unwrap();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for exist in [true, false] {
        let (c, ga) = if exist {
            (&inst.space.c_exist, &g.s_exist)
        } else {
            (&inst.space.c_new, &g.s_new)
        };
        for ((i, j), &cv) in c.indexed_iter() {
            if cv == 0.0 {
                continue;
            }
            let shifted = |d: f64| {
                let mut m = inst.mask.clone();
                let s = if exist { &mut m.s_exist } else { &mut m.s_new };
                s[[i, j]] += d;
                utility_at(inst, &m)
            };
            analytic.push(ga[[i, j]]);
            numeric.push((shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

fn mean_loss(
    model: &GcnModel,
    a: &Array2<f64>,
    x: &Array2<f64>,
    targets: &[(Readout, Target)],
) -> f64 {
    targets
        .iter()
        .map(|(r, t)| loss(&model.predict_with(a, x, *r).unwrap(), t).unwrap())
        .sum::<f64>()
        / targets.len() as f64
}

/// Analytic `∂ℓ/∂W` (all weights and biases) against central differences.
pub fn weight_grad_error(inst: &Instance) -> f64 {
    let a = apply_mask(&inst.graph, &inst.space, &inst.mask).unwrap();
    let x = inst.graph.features();
    let (_, g) = grad_weights(&inst.model, &a, x, &inst.targets).unwrap();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let fd = |edit: &dyn Fn(&mut GcnModel, f64)| {
        let mut plus = inst.model.clone();
        edit(&mut plus, FD_STEP);
        let mut minus = inst.model.clone();
        edit(&mut minus, -FD_STEP);
        (mean_loss(&plus, &a, x, &inst.targets) - mean_loss(&minus, &a, x, &inst.targets))
            / (2.0 * FD_STEP)
    };
    for (l, w) in inst.model.layers.iter().enumerate() {
        for ((r, c), _) in w.indexed_iter() {
            analytic.push(g.layers[l][[r, c]]);
            numeric.push(fd(&|m, d| m.layers[l][[r, c]] += d));
        }
        for k in 0..inst.model.biases[l].len() {
            analytic.push(g.biases[l][k]);
            numeric.push(fd(&|m, d| m.biases[l][k] += d));
        }
    }
    for ((r, c), _) in inst.model.out_weight.indexed_iter() {
        analytic.push(g.out_weight[[r, c]]);
        numeric.push(fd(&|m, d| m.out_weight[[r, c]] += d));
    }
    for k in 0..inst.model.out_bias.len() {
        analytic.push(g.out_bias[k]);
        numeric.push(fd(&|m, d| m.out_bias[k] += d));
    }
    relative_error(&analytic, &numeric)
}

/// Largest entry-wise gap between `∂p_c/∂S` at `S = 0` and `C ∘ J`.
pub fn jsm_identity_error(inst: &Instance) -> f64 {
    let c = inst.utility.omega()[0];
    let zero = Mask::filled(&inst.space, 0.0);
    let (_, g) = grad_adjacency(
        &inst.model,
        &inst.graph,
        &inst.space,
        &zero,
        inst.readout,
        &Utility::Probability(c),
    )
    .unwrap();
    let j = jacobian_saliency(&inst.model, &inst.graph, inst.readout, c)
        .unwrap()
        .j;
    let ce = &inst.space.c_exist * &j;
    let cn = &inst.space.c_new * &j;
    g.s_exist
        .iter()
        .zip(&ce)
        .chain(g.s_new.iter().zip(&cn))
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

/// A node-classification toy: random graph with 5..=8 nodes, random
/// features, labels from a structural rule (degree above the mean), and a
/// small GCN fitted to them without driving it to saturation.
pub struct Toy {
    pub graph: Graph,
    pub model: GcnModel,
    pub labels: Vec<usize>,
    pub node: usize,
}

pub fn toy(seed: u64) -> Toy {
    use topoexplain::{train, TrainConfig, TrainData};
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let n = rng.random_range(5..=8);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.4) {
                edges.push((i, j));
            }
        }
    }
    let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
    let mut degree = vec![0usize; n];
    for &(i, j) in &edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mean = 2.0 * edges.len() as f64 / n as f64;
    let labels: Vec<usize> = degree
        .iter()
        .map(|&d| usize::from(d as f64 > mean))
        .collect();
    let graph = Graph::from_edges(n, false, &edges, x)
        .unwrap()
        .with_labels(labels.clone())
        .unwrap();
    let all: Vec<usize> = (0..n).collect();
    let data = TrainData::Nodes {
        graph: &graph,
        labels: &labels,
        train: &all,
        test: &[],
    };
    let cfg = TrainConfig {
        epochs: 200,
        lr: 0.01,
        seed,
        hidden_dims: vec![8, 8],
        weight_decay: 5e-4,
        ..Default::default()
    };
    let model = train(&data, &cfg).unwrap();
    let node = rng.random_range(0..n);
    Toy {
        graph,
        model,
        labels,
        node,
    }
}

/// True-class margin `p_y - max_{t != y} p_t` of `node` on `graph`.
pub fn margin(model: &GcnModel, graph: &Graph, node: usize, y: usize) -> f64 {
    let p = model.predict(graph, Readout::Node(node)).unwrap().probs;
    let other = (0..p.len())
        .filter(|&t| t != y)
        .map(|t| p[t])
        .fold(f64::NEG_INFINITY, f64::max);
    p[y] - other
}

/// Every single-edge flip with the margin it leaves, best (lowest) first.
pub fn single_flips(toy: &Toy) -> Vec<((usize, usize), f64)> {
    let n = toy.graph.n();
    let y = toy.labels[toy.node];
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let g = if toy.graph.has_edge(i, j) {
                toy.graph.with_edits(&[], &[(i, j)])
            } else {
                toy.graph.with_edits(&[(i, j)], &[])
            }
            .unwrap();
            out.push(((i, j), margin(&toy.model, &g, toy.node, y)));
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

/// Smallest `|z|` over hidden pre-activations at the instance's mask.
/// Central differences are only valid when no ReLU sits within a step of
/// its kink.
pub fn relu_margin(inst: &Instance) -> f64 {
    let a = apply_mask(&inst.graph, &inst.space, &inst.mask).unwrap();
    let cache = inst
        .model
        .forward_cached(&a, inst.graph.features())
        .unwrap();
    let pre = cache.pre_activations();
    pre[..pre.len() - 1]
        .iter()
        .flat_map(|z| z.iter())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}
