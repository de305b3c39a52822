//! Perturbation-mask explanations: preserve, promote and attack.

mod optimize;
mod select;
mod utility;

pub use optimize::{grad_adjacency, group_explain, group_explain_observed, optimize_mask, Member};
pub use select::{
    bernoulli_samples, ranked_entries, select_budget, threshold, Discretize, EdgeEdits,
};
pub use utility::{attack_utility, preserve_utility, promote_utility, Mode, Utility};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::Prediction;
use crate::graph::{Edge, Graph};

/// Which non-edges may be proposed as additions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditionScope {
    #[default]
    Any,
    /// Only pairs whose sensitive attributes differ.
    InterGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub mode: Mode,
    /// Weight of `+λ1 Σ S_exist` in the maximised objective.
    pub lambda1: f64,
    /// Weight of `-λ2 Σ S_new` in the maximised objective.
    pub lambda2: f64,
    pub kappa: f64,
    pub steps: usize,
    pub lr: f64,
    /// Ω. Defaults: the current prediction for preserve, the ground-truth
    /// label for promote, ground truth (else prediction) for attack.
    pub target_labels: Option<Vec<usize>>,
    /// Θ, a node subset.
    pub node_subset: Option<Vec<usize>>,
    /// Average the utility over Θ instead of the explained node.
    pub subset_utility: bool,
    /// Only edges with both endpoints in Θ may change.
    pub subset_support: bool,
    pub addition_scope: AdditionScope,
    pub budget_add: usize,
    pub budget_remove: usize,
    /// Optional cap on additions plus removals, ranked jointly.
    pub budget_total: Option<usize>,
    /// Preserve mode: number of edges kept in the discrete explanation.
    pub keep_top: usize,
    pub discretize: Discretize,
    /// Node explanations run on the receptive field of the explained nodes
    /// (an `L+1`-hop induced subgraph) instead of the whole graph.
    pub local: bool,
    pub seed: u64,
}

impl ExplainConfig {
    pub fn for_mode(mode: Mode) -> Self {
        let base = ExplainConfig {
            mode,
            lambda1: 0.005,
            lambda2: 0.0,
            kappa: 0.4,
            steps: 200,
            lr: 0.1,
            target_labels: None,
            node_subset: None,
            subset_utility: false,
            subset_support: false,
            addition_scope: AdditionScope::Any,
            budget_add: 0,
            budget_remove: 0,
            budget_total: None,
            keep_top: 10,
            discretize: Discretize::Threshold,
            local: true,
            seed: 0,
        };
        // Promote and attack penalise removals and keep the best sampled
        // discretisation.
        let sampled = Discretize::Bernoulli { samples: 64 };
        match mode {
            Mode::Preserve => base,
            Mode::Promote => ExplainConfig {
                lambda1: -0.001,
                lambda2: 0.0005,
                kappa: 0.2,
                budget_add: 5,
                discretize: sampled,
                ..base
            },
            Mode::Attack => ExplainConfig {
                lambda1: -0.001,
                lambda2: 0.0005,
                kappa: 0.2,
                budget_add: 5,
                budget_remove: 5,
                discretize: sampled,
                ..base
            },
        }
    }

    /// Mode defaults overlaid with the fields present in `overrides`
    /// (a JSON object; `mode` inside it is ignored).
    pub fn with_overrides(mode: Mode, overrides: &serde_json::Value) -> Result<Self> {
        let mut value = serde_json::to_value(Self::for_mode(mode))?;
        match overrides {
            serde_json::Value::Null => {}
            serde_json::Value::Object(map) => {
                let target = value
                    .as_object_mut()
                    .expect("config serialises to an object");
                for (k, v) in map {
                    if k == "mode" {
                        continue;
                    }
                    if !target.contains_key(k) {
                        return Err(Error::InvalidConfig(format!("unknown config field '{k}'")));
                    }
                    target.insert(k.clone(), v.clone());
                }
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "config overrides must be a JSON object".into(),
                ))
            }
        }
        let cfg: ExplainConfig =
            serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(
                "lr must be positive and finite".into(),
            ));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidConfig("kappa must be non-negative".into()));
        }
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::InvalidConfig("lambdas must be finite".into()));
        }
        if let Discretize::Bernoulli { samples: 0 } = self.discretize {
            return Err(Error::InvalidConfig(
                "bernoulli discretisation needs at least one sample".into(),
            ));
        }
        if (self.subset_utility || self.subset_support)
            && self.node_subset.as_ref().is_none_or(Vec::is_empty)
        {
            return Err(Error::InvalidConfig(
                "subset options need a non-empty node_subset".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self::for_mode(Mode::Preserve)
    }
}

/// Score of one existing edge. Preserve mode scores importance `1 - s`;
/// the other modes report the removal strength `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub i: usize,
    pub j: usize,
    pub score: f64,
    /// Preserve mode: part of the kept top-k explanation.
    #[serde(default)]
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Non-zero mask entries in graph node ids. Undirected masks list each
/// pair once with `i < j`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMask {
    pub exist: Vec<MaskEntry>,
    pub new: Vec<MaskEntry>,
}

/// Per-member outcome of a (group) explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberOutcome {
    /// Explained node for node-level members.
    pub node: Option<usize>,
    pub omega: Vec<usize>,
    pub original: Prediction,
    pub updated: Prediction,
    /// Utility on the original graph and on the discrete result.
    pub utility_original: f64,
    pub utility_discrete: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationResult {
    pub mode: Mode,
    pub config: ExplainConfig,
    pub mask: SparseMask,
    pub importance: Vec<EdgeScore>,
    pub additions: Vec<Edge>,
    pub removals: Vec<Edge>,
    /// Objective `R + λ1 Σ S_exist - λ2 Σ S_new` before each step.
    pub utility_trace: Vec<f64>,
    /// `R` alone before each step.
    pub raw_utility_trace: Vec<f64>,
    pub original_prediction: Prediction,
    pub updated_prediction: Prediction,
    pub members: Vec<MemberOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    /// The full graph after applying `additions` and `removals`.
    #[serde(skip)]
    pub a_prime_discrete: Option<Graph>,
}

impl ExplanationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Importance scores keyed by canonical edge.
    pub fn importance_map(&self) -> std::collections::BTreeMap<Edge, f64> {
        self.importance
            .iter()
            .map(|e| ((e.i, e.j), e.score))
            .collect()
    }
}
