//! Seeded generators for benchmark graphs.

mod motif;
mod multilabel;
mod sbm;

pub use motif::{
    gen_ba_shapes, gen_tree_cycles, gen_tree_grid, BaShapesConfig, MotifDataset, TreeConfig,
};
pub use multilabel::{cooccurrence_graph, gen_multilabel, MultiLabelConfig, MultiLabelDataset};
pub use sbm::{gen_biased_sbm, BiasedSocialDataset, SbmConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shuffled train/test split of `0..n`, both halves sorted.
pub(crate) fn split(n: usize, train_frac: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = ((n as f64) * train_frac).round() as usize;
    let mut train = idx[..cut.min(n)].to_vec();
    let mut test = idx[cut.min(n)..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Any generated dataset, tagged by family for storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dataset {
    Motif(MotifDataset),
    Social(BiasedSocialDataset),
    MultiLabel(MultiLabelDataset),
}

impl Dataset {
    pub fn graph(&self) -> &crate::graph::Graph {
        match self {
            Dataset::Motif(d) => &d.graph,
            Dataset::Social(d) => &d.graph,
            Dataset::MultiLabel(d) => &d.graph,
        }
    }

    pub fn splits(&self) -> (&[usize], &[usize]) {
        match self {
            Dataset::Motif(d) => (&d.train, &d.test),
            Dataset::Social(d) => (&d.train, &d.test),
            Dataset::MultiLabel(d) => (&d.train, &d.test),
        }
    }
}
