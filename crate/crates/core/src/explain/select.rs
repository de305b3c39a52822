//! Mapping relaxed masks to discrete edge edits.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Edge, Mask};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Discretize {
    /// Entry becomes 1 iff it is strictly above 0.5.
    #[default]
    Threshold,
    /// Seeded Bernoulli samples with per-entry probability `S_ij`; the
    /// caller keeps the best-scoring sample.
    Bernoulli { samples: usize },
}

pub fn threshold(mask: &Mask) -> Mask {
    let f = |v: &f64| if *v > 0.5 { 1.0 } else { 0.0 };
    Mask {
        s_exist: mask.s_exist.map(f),
        s_new: mask.s_new.map(f),
    }
}

/// `m` binary samples of `mask`. Undirected samples draw each `i < j` pair
/// once and mirror it.
pub fn bernoulli_samples(mask: &Mask, m: usize, directed: bool, seed: u64) -> Vec<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mask.n();
    let draw = |s: &Array2<f64>, rng: &mut ChaCha8Rng| {
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i == j || (!directed && j < i) {
                    continue;
                }
                let p = s[[i, j]];
                // Always consume one draw so samples stay aligned across masks.
                let u: f64 = rng.random();
                if p > 0.0 && u < p {
                    out[[i, j]] = 1.0;
                    if !directed {
                        out[[j, i]] = 1.0;
                    }
                }
            }
        }
        out
    };
    (0..m)
        .map(|_| {
            let s_exist = draw(&mask.s_exist, &mut rng);
            let s_new = draw(&mask.s_new, &mut rng);
            Mask { s_exist, s_new }
        })
        .collect()
}

/// Edge edits picked from a mask.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeEdits {
    pub additions: Vec<Edge>,
    pub removals: Vec<Edge>,
}

/// Positive entries of `values`, best first, ties by `(i, j)`. Undirected
/// matrices contribute each pair once as `(i, j)` with `i < j`.
pub fn ranked_entries(values: &Array2<f64>, directed: bool) -> Vec<(Edge, f64)> {
    let mut out: Vec<(Edge, f64)> = values
        .indexed_iter()
        .filter(|&((i, j), &v)| v > 0.0 && i != j && (directed || i < j))
        .map(|((i, j), &v)| ((i, j), v))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Top `budget_add` entries of `s_new` and top `budget_remove` entries of
/// `s_exist`. With `budget_total`, the two rankings are merged and at most
/// that many edits are kept overall (removals win ties).
pub fn select_budget(
    mask: &Mask,
    budget_add: usize,
    budget_remove: usize,
    budget_total: Option<usize>,
    directed: bool,
) -> EdgeEdits {
    let adds = ranked_entries(&mask.s_new, directed);
    let rems = ranked_entries(&mask.s_exist, directed);
    let Some(total) = budget_total else {
        return EdgeEdits {
            additions: adds.into_iter().take(budget_add).map(|(e, _)| e).collect(),
            removals: rems
                .into_iter()
                .take(budget_remove)
                .map(|(e, _)| e)
                .collect(),
        };
    };
    let mut edits = EdgeEdits::default();
    let (mut a, mut r) = (adds.into_iter().peekable(), rems.into_iter().peekable());
    while edits.additions.len() + edits.removals.len() < total {
        let can_add = edits.additions.len() < budget_add && a.peek().is_some();
        let can_rem = edits.removals.len() < budget_remove && r.peek().is_some();
        let take_add = match (can_add, can_rem) {
            (false, false) => break,
            (true, false) => true,
            (false, true) => false,
            (true, true) => {
                let (ea, va) = a.peek().unwrap();
                let (er, vr) = r.peek().unwrap();
                va > vr || (va == vr && ea < er)
            }
        };
        if take_add {
            edits.additions.push(a.next().unwrap().0);
        } else {
            edits.removals.push(r.next().unwrap().0);
        }
    }
    edits
}
