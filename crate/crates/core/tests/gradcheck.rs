mod common;

use common::{
    instance, jsm_identity_error, mask_grad_error, relative_error, weight_grad_error, FD_STEP,
};
use topoexplain::gcn::Readout;
use topoexplain::saliency::{jacobian_saliency, sign_perturbation, Direction};

const SEEDS: std::ops::Range<u64> = 0..24;

#[test]
fn mask_gradient_matches_central_differences() {
    for seed in SEEDS {
        let err = mask_grad_error(&instance(seed));
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn weight_gradient_matches_central_differences() {
    for seed in SEEDS {
        let err = weight_grad_error(&instance(seed));
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn mask_gradient_at_zero_is_signed_saliency() {
    for seed in SEEDS {
        let err = jsm_identity_error(&instance(seed));
        assert!(err < 1e-6, "seed {seed}: max gap {err:e}");
    }
}

#[test]
fn saliency_matches_adjacency_differences() {
    for seed in SEEDS.step_by(3) {
        let inst = instance(seed);
        let c = inst.utility.omega()[0];
        let s = jacobian_saliency(&inst.model, &inst.graph, inst.readout, c).unwrap();
        let a = inst.graph.adjacency();
        let x = inst.graph.features();
        let p = |adj: &ndarray::Array2<f64>| {
            inst.model.predict_with(adj, x, inst.readout).unwrap().probs[c]
        };
        let n = inst.graph.n();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut plus = a.clone();
                plus[[i, j]] += FD_STEP;
                let mut minus = a.clone();
                minus[[i, j]] -= FD_STEP;
                analytic.push(s.j[[i, j]]);
                numeric.push((p(&plus) - p(&minus)) / (2.0 * FD_STEP));
            }
        }
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn sign_step_is_first_order_ascent() {
    for seed in SEEDS {
        let inst = instance(seed);
        let c = inst.utility.omega()[0];
        let s = jacobian_saliency(&inst.model, &inst.graph, inst.readout, c).unwrap();
        if s.j.iter().all(|&v| v == 0.0) {
            continue;
        }
        let a = inst.graph.adjacency();
        let x = inst.graph.features();
        let p = |adj: &ndarray::Array2<f64>| {
            inst.model.predict_with(adj, x, inst.readout).unwrap().probs[c]
        };
        let up = sign_perturbation(&s, 1e-4, Direction::Maximize).unwrap();
        let down = sign_perturbation(&s, 1e-4, Direction::Minimize).unwrap();
        let base = p(a);
        assert!(p(&(a + &up)) >= base, "seed {seed}");
        assert!(p(&(a + &down)) <= base, "seed {seed}");
    }
}

#[test]
fn node_readout_saliency_ignores_far_entries() {
    // Two components: entries inside the other component cannot move node 0.
    let g = topoexplain::Graph::from_edges(
        6,
        false,
        &[(0, 1), (1, 2), (3, 4), (4, 5)],
        ndarray::Array2::from_shape_fn((6, 2), |(i, k)| (i * 2 + k) as f64 * 0.1),
    )
    .unwrap();
    let m = topoexplain::GcnModel::init_with_bias(
        &[2, 4, 4],
        2,
        topoexplain::Head::NodeSoftmax,
        9,
        0.5,
    )
    .unwrap();
    let s = jacobian_saliency(&m, &g, Readout::Node(0), 1).unwrap();
    for i in 3..6 {
        for j in 3..6 {
            assert_eq!(s.j[[i, j]], 0.0);
        }
    }
}
