//! Utilities `R` scoring a prediction under a perturbed graph, and their
//! gradients with respect to the class probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Preserve,
    Promote,
    Attack,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preserve" => Ok(Mode::Preserve),
            "promote" => Ok(Mode::Promote),
            "attack" => Ok(Mode::Attack),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Preserve => "preserve",
            Mode::Promote => "promote",
            Mode::Attack => "attack",
        })
    }
}

/// A scalar objective over one probability vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Utility {
    /// `Σ_{c∈Ω} log p_c`.
    Preserve { omega: Vec<usize> },
    /// `min(min_{c∈Ω} p_c - max_{t∉Ω} p_t, κ)`.
    Promote { omega: Vec<usize>, kappa: f64 },
    /// `min(max_{t∉Ω} p_t - max_{c∈Ω} p_c, κ)`.
    Attack { omega: Vec<usize>, kappa: f64 },
    /// Raw class probability `p_c`.
    Probability(usize),
}

impl Utility {
    pub fn for_mode(mode: Mode, omega: Vec<usize>, kappa: f64) -> Self {
        match mode {
            Mode::Preserve => Utility::Preserve { omega },
            Mode::Promote => Utility::Promote { omega, kappa },
            Mode::Attack => Utility::Attack { omega, kappa },
        }
    }

    pub fn omega(&self) -> Vec<usize> {
        match self {
            Utility::Preserve { omega }
            | Utility::Promote { omega, .. }
            | Utility::Attack { omega, .. } => omega.clone(),
            Utility::Probability(c) => vec![*c],
        }
    }

    /// Checks Ω against the number of classes `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        let omega = self.omega();
        if omega.is_empty() {
            return Err(Error::InvalidTarget("target label set is empty".into()));
        }
        if let Some(&c) = omega.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidTarget(format!(
                "label {c} out of range for {k} classes"
            )));
        }
        let mut sorted = omega.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != omega.len() {
            return Err(Error::InvalidTarget(
                "target label set has duplicates".into(),
            ));
        }
        if matches!(self, Utility::Promote { .. } | Utility::Attack { .. }) && omega.len() >= k {
            return Err(Error::InvalidTarget(
                "margin utilities need labels outside the target set".into(),
            ));
        }
        if let Utility::Promote { kappa, .. } | Utility::Attack { kappa, .. } = self {
            if kappa.is_nan() || *kappa < 0.0 {
                return Err(Error::InvalidConfig("kappa must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn value(&self, probs: &[f64]) -> f64 {
        self.value_and_grad(probs).0
    }

    /// Value and `dR/dp`. At clip points and ties the margin branch and the
    /// lowest index are taken.
    pub fn value_and_grad(&self, probs: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; probs.len()];
        match self {
            Utility::Preserve { omega } => {
                let mut v = 0.0;
                for &c in omega {
                    let p = probs[c];
                    if p > PROB_FLOOR {
                        v += p.ln();
                        g[c] += 1.0 / p;
                    } else {
                        v += PROB_FLOOR.ln();
                    }
                }
                (v, g)
            }
            Utility::Promote { omega, kappa } => {
                let (c, pc) = arg_extreme(probs, omega.iter().copied(), false);
                let (t, pt) = arg_extreme(probs, outside(probs.len(), omega), true);
                let margin = pc - pt;
                if margin <= *kappa {
                    g[c] += 1.0;
                    g[t] -= 1.0;
                    (margin, g)
                } else {
                    (*kappa, g)
                }
            }
            Utility::Attack { omega, kappa } => {
                let (c, pc) = arg_extreme(probs, omega.iter().copied(), true);
                let (t, pt) = arg_extreme(probs, outside(probs.len(), omega), true);
                let margin = pt - pc;
                if margin <= *kappa {
                    g[t] += 1.0;
                    g[c] -= 1.0;
                    (margin, g)
                } else {
                    (*kappa, g)
                }
            }
            Utility::Probability(c) => {
                g[*c] = 1.0;
                (probs[*c], g)
            }
        }
    }
}

fn outside(k: usize, omega: &[usize]) -> impl Iterator<Item = usize> + '_ {
    (0..k).filter(move |c| !omega.contains(c))
}

/// First index attaining the max (or min) over `idx`.
fn arg_extreme(probs: &[f64], idx: impl Iterator<Item = usize>, max: bool) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for i in idx {
        let p = probs[i];
        let better = match best {
            None => true,
            Some((_, b)) => {
                if max {
                    p > b
                } else {
                    p < b
                }
            }
        };
        if better {
            best = Some((i, p));
        }
    }
    best.expect("non-empty index set")
}

pub fn preserve_utility(probs: &[f64], omega: &[usize]) -> f64 {
    Utility::Preserve {
        omega: omega.to_vec(),
    }
    .value(probs)
}

pub fn promote_utility(probs: &[f64], omega: &[usize], kappa: f64) -> f64 {
    Utility::Promote {
        omega: omega.to_vec(),
        kappa,
    }
    .value(probs)
}

pub fn attack_utility(probs: &[f64], omega: &[usize], kappa: f64) -> f64 {
    Utility::Attack {
        omega: omega.to_vec(),
        kappa,
    }
    .value(probs)
}
