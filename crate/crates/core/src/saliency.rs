//! First-order saliency of a class probability with respect to adjacency
//! entries, the Grad baseline, and the sign-based reading of it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{check_readout, GcnModel, Readout};
use crate::graph::{Edge, Graph};

/// `J_ij = ∂p_c/∂A_ij`, each entry perturbed on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub j: Array2<f64>,
    pub target_class: usize,
}

pub fn jacobian_saliency(
    model: &GcnModel,
    graph: &Graph,
    readout: Readout,
    target_class: usize,
) -> Result<SaliencyMap> {
    jacobian_with(
        model,
        graph.adjacency(),
        graph.features(),
        readout,
        target_class,
    )
}

/// Saliency for an explicit adjacency and feature matrix (graph-level
/// instances carry their own features).
pub fn jacobian_with(
    model: &GcnModel,
    adjacency: &Array2<f64>,
    x: &Array2<f64>,
    readout: Readout,
    target_class: usize,
) -> Result<SaliencyMap> {
    let n = adjacency.nrows();
    check_readout(model.head, readout, n)?;
    let k = model.n_outputs_for(n);
    if target_class >= k {
        return Err(Error::InvalidTarget(format!(
            "class {target_class} out of range for {k} outputs"
        )));
    }
    let cache = model.forward_cached(adjacency, x)?;
    let mut dprobs = Array2::zeros(cache.output.probs.dim());
    match readout {
        Readout::Node(v) => dprobs[[v, target_class]] = 1.0,
        Readout::Graph => dprobs[[target_class, 0]] = 1.0,
    }
    let dlogits = cache.output.probs_to_logits_grad(&dprobs);
    let (_, d_adj) = model.backward(&cache, &dlogits, false, true);
    let mut j = d_adj.expect("adjacency gradient requested");
    j.diag_mut().fill(0.0);
    Ok(SaliencyMap { j, target_class })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

/// `ε·sign(J)` for maximisation, `-ε·sign(J)` for minimisation.
pub fn sign_perturbation(
    saliency: &SaliencyMap,
    epsilon: f64,
    direction: Direction,
) -> Result<Array2<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(
            "epsilon must be positive and finite".into(),
        ));
    }
    let s = match direction {
        Direction::Maximize => epsilon,
        Direction::Minimize => -epsilon,
    };
    Ok(saliency
        .j
        .mapv(|v| if v == 0.0 { 0.0 } else { s * v.signum() }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTag {
    /// Existing edge that supports the class.
    FactualKeep,
    /// Existing edge whose removal raises the class probability.
    FactualRemoveOrAdd,
    /// Missing edge whose addition lowers the class probability.
    CounterfactualAdd,
    /// Missing edge whose addition raises the class probability.
    FactualAdd,
    None,
}

/// Tag from the signs of `A_ij` and `J_ij` alone.
pub fn classify(a_ij: f64, j_ij: f64) -> EdgeTag {
    match (a_ij > 0.0, j_ij.partial_cmp(&0.0)) {
        (_, None) | (_, Some(std::cmp::Ordering::Equal)) => EdgeTag::None,
        (true, Some(std::cmp::Ordering::Greater)) => EdgeTag::FactualKeep,
        (true, Some(std::cmp::Ordering::Less)) => EdgeTag::FactualRemoveOrAdd,
        (false, Some(std::cmp::Ordering::Less)) => EdgeTag::CounterfactualAdd,
        (false, Some(std::cmp::Ordering::Greater)) => EdgeTag::FactualAdd,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttribution {
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub tag: EdgeTag,
}

/// Off-diagonal entries that are edges or have non-zero saliency, in
/// row-major order.
pub fn classify_edge_attribution(
    graph: &Graph,
    saliency: &SaliencyMap,
) -> Result<Vec<EdgeAttribution>> {
    let a = graph.adjacency();
    if a.dim() != saliency.j.dim() {
        return Err(Error::Dimension(format!(
            "saliency {:?} vs graph {:?}",
            saliency.j.dim(),
            a.dim()
        )));
    }
    Ok(saliency
        .j
        .indexed_iter()
        .filter(|&((i, j), &v)| i != j && (a[[i, j]] > 0.0 || v != 0.0))
        .map(|((i, j), &value)| EdgeAttribution {
            i,
            j,
            value,
            tag: classify(a[[i, j]], value),
        })
        .collect())
}

/// Grad baseline: gradient magnitude on each existing edge. An undirected
/// edge moves both `A_ij` and `A_ji`, so it scores `|J_ij + J_ji|`.
pub fn grad_baseline_scores(
    model: &GcnModel,
    graph: &Graph,
    readout: Readout,
    target_class: usize,
) -> Result<Vec<(Edge, f64)>> {
    let s = jacobian_saliency(model, graph, readout, target_class)?;
    Ok(edge_scores(graph, &s))
}

pub fn edge_scores(graph: &Graph, saliency: &SaliencyMap) -> Vec<(Edge, f64)> {
    let j = &saliency.j;
    graph
        .edges()
        .into_iter()
        .map(|(a, b)| {
            let v = if graph.is_directed() {
                j[[a, b]]
            } else {
                j[[a, b]] + j[[b, a]]
            };
            ((a, b), v.abs())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::Head;
    use ndarray::array;

    fn path() -> Graph {
        Graph::from_edges(
            4,
            false,
            &[(0, 1), (1, 2), (2, 3)],
            Array2::from_shape_fn((4, 2), |(i, k)| (i + k) as f64 * 0.3),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_saliency() {
        let m = GcnModel::init(&[2, 3], 2, Head::NodeSoftmax, 1)
            .unwrap()
            .zeroed();
        let s = jacobian_saliency(&m, &path(), Readout::Node(1), 0).unwrap();
        assert!(s.j.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_is_zero_and_class_checked() {
        let m = GcnModel::init(&[2, 3], 2, Head::NodeSoftmax, 1).unwrap();
        let s = jacobian_saliency(&m, &path(), Readout::Node(1), 1).unwrap();
        assert!(s.j.diag().iter().all(|&v| v == 0.0));
        assert!(jacobian_saliency(&m, &path(), Readout::Node(1), 2).is_err());
    }

    #[test]
    fn sign_examples() {
        let s = SaliencyMap {
            j: array![[2.0, -3.0, 0.0]],
            target_class: 0,
        };
        assert_eq!(
            sign_perturbation(&s, 0.1, Direction::Maximize).unwrap(),
            array![[0.1, -0.1, 0.0]]
        );
        assert_eq!(
            sign_perturbation(&s, 0.1, Direction::Minimize).unwrap(),
            array![[-0.1, 0.1, 0.0]]
        );
        assert!(sign_perturbation(&s, 0.0, Direction::Maximize).is_err());
    }

    #[test]
    fn tag_examples() {
        assert_eq!(classify(1.0, 0.3), EdgeTag::FactualKeep);
        assert_eq!(classify(1.0, -0.3), EdgeTag::FactualRemoveOrAdd);
        assert_eq!(classify(0.0, -0.2), EdgeTag::CounterfactualAdd);
        assert_eq!(classify(0.0, 0.2), EdgeTag::FactualAdd);
        assert_eq!(classify(0.0, 0.0), EdgeTag::None);
        assert_eq!(classify(1.0, 0.0), EdgeTag::None);
    }

    #[test]
    fn export_shape() {
        let m = GcnModel::init(&[2, 3], 2, Head::NodeSoftmax, 4).unwrap();
        let g = path();
        let s = jacobian_saliency(&m, &g, Readout::Node(0), 0).unwrap();
        let rows = classify_edge_attribution(&g, &s).unwrap();
        let v = serde_json::to_value(&rows).unwrap();
        let first = &v.as_array().unwrap()[0];
        for key in ["i", "j", "value", "tag"] {
            assert!(first.get(key).is_some());
        }
        let zero = SaliencyMap {
            j: Array2::zeros((4, 4)),
            ..s
        };
        assert!(edge_scores(&g, &zero).iter().all(|&(_, v)| v == 0.0));
    }
}
