//! Graph convolutional network: forward pass, prediction heads and
//! reverse-mode gradients with respect to the weights and to the (relaxed)
//! adjacency matrix.
//!
//! Layer `l` computes `Z = Ã H W + 1 bᵀ`; every layer except the last is
//! followed by ReLU. The head is either a per-node softmax classifier or a
//! per-node sigmoid score (one label per node, used for label graphs).

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    matrix_to_rows, normalize_with_degrees, rows_to_matrix, Graph, NormalizedAdjacency,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    NodeSoftmax,
    GraphMultilabelSigmoid,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub train_accuracy: Option<f64>,
    #[serde(default)]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub layers: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Classifier over the last layer's node representations:
    /// `M_L x K` for softmax, `M_L x 1` for the sigmoid head.
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
    pub head: Head,
    pub meta: ModelMeta,
}

/// Which part of the graph output constitutes one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Class distribution of a single node (softmax head).
    Node(usize),
    /// One sigmoid score per node (label-graph head).
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    /// Argmax for softmax heads; classes with probability above 0.5 for
    /// sigmoid heads.
    pub predicted: Vec<usize>,
    pub multilabel: bool,
}

impl Prediction {
    fn softmax(logits: Vec<f64>, probs: Vec<f64>) -> Self {
        let predicted = vec![argmax(&probs)];
        Prediction {
            probs,
            logits,
            predicted,
            multilabel: false,
        }
    }

    fn sigmoid(logits: Vec<f64>, probs: Vec<f64>) -> Self {
        let predicted = (0..probs.len()).filter(|&c| probs[c] > 0.5).collect();
        Prediction {
            probs,
            logits,
            predicted,
            multilabel: true,
        }
    }

    pub fn top1(&self) -> usize {
        argmax(&self.probs)
    }

    /// Class indices ordered by descending probability (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut r = self.ranking();
        r.truncate(k);
        r
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Whole-graph output: one row per node.
#[derive(Debug, Clone)]
pub struct GraphOutput {
    pub head: Head,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl GraphOutput {
    pub fn prediction(&self, readout: Readout) -> Prediction {
        match (self.head, readout) {
            (Head::NodeSoftmax, Readout::Node(v)) => {
                Prediction::softmax(self.logits.row(v).to_vec(), self.probs.row(v).to_vec())
            }
            (Head::GraphMultilabelSigmoid, _) => Prediction::sigmoid(
                self.logits.column(0).to_vec(),
                self.probs.column(0).to_vec(),
            ),
            (Head::NodeSoftmax, Readout::Graph) => {
                panic!("softmax head has no graph-level readout")
            }
        }
    }

    /// Maps a gradient with respect to the probabilities into one with
    /// respect to the logits.
    pub fn probs_to_logits_grad(&self, dprobs: &Array2<f64>) -> Array2<f64> {
        match self.head {
            Head::NodeSoftmax => {
                let mut out = Array2::zeros(self.probs.dim());
                for ((mut o, p), g) in out
                    .rows_mut()
                    .into_iter()
                    .zip(self.probs.rows())
                    .zip(dprobs.rows())
                {
                    let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut o)
                        .and(&p)
                        .and(&g)
                        .for_each(|o, &p, &g| *o = p * (g - dot));
                }
                out
            }
            Head::GraphMultilabelSigmoid => {
                let mut out = dprobs.clone();
                Zip::from(&mut out)
                    .and(&self.probs)
                    .for_each(|o, &p| *o *= p * (1.0 - p));
                out
            }
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub norm: NormalizedAdjacency,
    /// `H^(l-1)` for each layer (the first entry is the feature matrix).
    inputs: Vec<Array2<f64>>,
    /// `Ã H^(l-1)` for each layer.
    propagated: Vec<Array2<f64>>,
    /// Pre-activations `Z^(l)`.
    pre: Vec<Array2<f64>>,
    last: Array2<f64>,
    pub output: GraphOutput,
}

impl ForwardCache {
    /// Pre-activations `Z^(l)` of every layer.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &GcnModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|w| Array2::zeros(w.dim()))
                .collect(),
            biases: model
                .biases
                .iter()
                .map(|b| Array1::zeros(b.len()))
                .collect(),
            out_weight: Array2::zeros(model.out_weight.dim()),
            out_bias: Array1::zeros(model.out_bias.len()),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
        self.out_weight += &other.out_weight;
        self.out_bias += &other.out_bias;
    }

    pub fn is_finite(&self) -> bool {
        let fin = |x: &f64| x.is_finite();
        self.layers.iter().all(|a| a.iter().all(fin))
            && self.biases.iter().all(|a| a.iter().all(fin))
            && self.out_weight.iter().all(fin)
            && self.out_bias.iter().all(fin)
    }

    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|a| *a *= s);
        self.biases.iter_mut().for_each(|a| *a *= s);
        self.out_weight *= s;
        self.out_bias *= s;
    }
}

impl GcnModel {
    /// Glorot-uniform initialised model. `dims` lists `M_0, M_1, ..., M_L`;
    /// `n_out` is the class count (softmax) and is ignored for the sigmoid
    /// head.
    pub fn init(dims: &[usize], n_out: usize, head: Head, seed: u64) -> Result<Self> {
        Self::init_with_bias(dims, n_out, head, seed, 0.0)
    }

    /// As [`GcnModel::init`], with hidden-layer biases drawn uniformly from
    /// `[-bias_scale, bias_scale]`. Non-zero biases matter when every node
    /// carries the same feature row: with zero biases the ReLU layers then
    /// start out rank one.
    pub fn init_with_bias(
        dims: &[usize],
        n_out: usize,
        head: Head,
        seed: u64,
        bias_scale: f64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "a GCN needs at least one layer".into(),
            ));
        }
        let n_out = match head {
            Head::NodeSoftmax => n_out,
            Head::GraphMultilabelSigmoid => 1,
        };
        if n_out == 0 {
            return Err(Error::InvalidConfig("no output classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |r: usize, c: usize| {
            let bound = (6.0 / (r + c) as f64).sqrt();
            Array2::from_shape_fn((r, c), |_| rng.random_range(-bound..bound))
        };
        let layers: Vec<_> = dims.windows(2).map(|w| glorot(w[0], w[1])).collect();
        let last = *dims.last().unwrap();
        let out_weight = glorot(last, n_out);
        let bias_scale = bias_scale.abs();
        Ok(GcnModel {
            biases: dims[1..]
                .iter()
                .map(|&d| Array1::from_shape_fn(d, |_| rng.random_range(-bias_scale..=bias_scale)))
                .collect(),
            layers,
            out_weight,
            out_bias: Array1::zeros(n_out),
            head,
            meta: ModelMeta {
                seed,
                ..Default::default()
            },
        })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        m.layers.iter_mut().for_each(|w| w.fill(0.0));
        m.biases.iter_mut().for_each(|b| b.fill(0.0));
        m.out_weight.fill(0.0);
        m.out_bias.fill(0.0);
        m
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].nrows()];
        d.extend(self.layers.iter().map(|w| w.ncols()));
        d
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.out_weight.ncols()
    }

    /// Length of one prediction's probability vector on an `n`-node graph:
    /// the class count for softmax, `n` for the per-node sigmoid head.
    pub fn n_outputs_for(&self, n: usize) -> usize {
        match self.head {
            Head::NodeSoftmax => self.n_outputs(),
            Head::GraphMultilabelSigmoid => n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.len() != self.biases.len() {
            return Err(Error::Dimension("layer/bias count mismatch".into()));
        }
        for (l, (w, b)) in self.layers.iter().zip(&self.biases).enumerate() {
            if w.ncols() != b.len() {
                return Err(Error::Dimension(format!("bias {l} has wrong width")));
            }
            if l > 0 && self.layers[l - 1].ncols() != w.nrows() {
                return Err(Error::Dimension(format!("layer {l} input width mismatch")));
            }
        }
        let last = self.layers.last().unwrap().ncols();
        if self.out_weight.nrows() != last || self.out_weight.ncols() != self.out_bias.len() {
            return Err(Error::Dimension("classifier shape mismatch".into()));
        }
        if self.head == Head::GraphMultilabelSigmoid && self.out_weight.ncols() != 1 {
            return Err(Error::Dimension("sigmoid head must have one output".into()));
        }
        let finite = self
            .layers
            .iter()
            .chain(std::iter::once(&self.out_weight))
            .all(|w| w.iter().all(|v| v.is_finite()))
            && self
                .biases
                .iter()
                .chain(std::iter::once(&self.out_bias))
                .all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidConfig("non-finite weights".into()));
        }
        Ok(())
    }

    /// Forward pass given an already normalised adjacency.
    pub fn forward(&self, a_tilde: &Array2<f64>, x: &Array2<f64>) -> Result<GraphOutput> {
        self.check_inputs(a_tilde, x)?;
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().zip(&self.biases).enumerate() {
            let mut z = a_tilde.dot(&h).dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(relu);
            }
            h = z;
        }
        Ok(self.head_output(&h))
    }

    /// Forward pass on an unnormalised (possibly relaxed) adjacency,
    /// keeping everything the backward pass needs.
    pub fn forward_cached(&self, a_prime: &Array2<f64>, x: &Array2<f64>) -> Result<ForwardCache> {
        let norm = normalize_with_degrees(a_prime);
        self.check_inputs(&norm.a_tilde, x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut propagated = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().zip(&self.biases).enumerate() {
            let p = norm.a_tilde.dot(&h);
            let mut z = p.dot(w);
            z += b;
            let next = if l < last { z.mapv(relu) } else { z.clone() };
            inputs.push(std::mem::replace(&mut h, next));
            propagated.push(p);
            pre.push(z);
        }
        let output = self.head_output(&h);
        Ok(ForwardCache {
            norm,
            inputs,
            propagated,
            pre,
            last: h,
            output,
        })
    }

    fn check_inputs(&self, a: &Array2<f64>, x: &Array2<f64>) -> Result<()> {
        let n = a.nrows();
        if a.ncols() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "adjacency {:?} incompatible with features {:?}",
                a.dim(),
                x.dim()
            )));
        }
        if x.ncols() != self.layers[0].nrows() {
            return Err(Error::Dimension(format!(
                "features have {} columns, model expects {}",
                x.ncols(),
                self.layers[0].nrows()
            )));
        }
        Ok(())
    }

    fn head_output(&self, h: &Array2<f64>) -> GraphOutput {
        let mut logits = h.dot(&self.out_weight);
        logits += &self.out_bias;
        let probs = match self.head {
            Head::NodeSoftmax => {
                let mut p = logits.clone();
                for mut row in p.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - max).exp());
                    let s = row.sum();
                    row /= s;
                }
                p
            }
            Head::GraphMultilabelSigmoid => logits.mapv(sigmoid),
        };
        GraphOutput {
            head: self.head,
            logits,
            probs,
        }
    }

    /// Prediction on a graph's own adjacency and features.
    pub fn predict(&self, graph: &Graph, readout: Readout) -> Result<Prediction> {
        self.predict_with(graph.adjacency(), graph.features(), readout)
    }

    pub fn predict_with(
        &self,
        adjacency: &Array2<f64>,
        x: &Array2<f64>,
        readout: Readout,
    ) -> Result<Prediction> {
        let norm = normalize_with_degrees(adjacency);
        let out = self.forward(&norm.a_tilde, x)?;
        check_readout(self.head, readout, adjacency.nrows())?;
        Ok(out.prediction(readout))
    }

    pub fn output(&self, adjacency: &Array2<f64>, x: &Array2<f64>) -> Result<GraphOutput> {
        let norm = normalize_with_degrees(adjacency);
        self.forward(&norm.a_tilde, x)
    }

    /// Reverse pass from a gradient on the logits. Returns weight gradients
    /// and/or the gradient with respect to the unnormalised adjacency `A'`
    /// (differentiating through the degree normalisation).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &Array2<f64>,
        want_weights: bool,
        want_adjacency: bool,
    ) -> (Option<Gradients>, Option<Array2<f64>>) {
        let n = dlogits.nrows();
        let mut grads = want_weights.then(|| Gradients::zeros_like(self));
        if let Some(g) = grads.as_mut() {
            g.out_weight = cache.last.t().dot(dlogits);
            g.out_bias = dlogits.sum_axis(Axis(0));
        }
        let mut d_tilde = want_adjacency.then(|| Array2::<f64>::zeros((n, n)));
        let mut d_h = dlogits.dot(&self.out_weight.t());
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            let dz = if l < last {
                let mut dz = d_h;
                Zip::from(&mut dz).and(&cache.pre[l]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                dz
            } else {
                d_h
            };
            if let Some(g) = grads.as_mut() {
                g.layers[l] = cache.propagated[l].t().dot(&dz);
                g.biases[l] = dz.sum_axis(Axis(0));
            }
            let dp = dz.dot(&self.layers[l].t());
            if let Some(dt) = d_tilde.as_mut() {
                *dt += &dp.dot(&cache.inputs[l].t());
            }
            if l == 0 {
                break;
            }
            d_h = cache.norm.a_tilde.t().dot(&dp);
        }
        let d_adj = d_tilde.map(|dt| tilde_to_adjacency_grad(&cache.norm, &dt));
        (grads, d_adj)
    }
}

/// Chain rule through `Ã_ij = Â_ij r_i r_j`, `r = d^{-1/2}`, `d = Â 1`.
fn tilde_to_adjacency_grad(norm: &NormalizedAdjacency, d_tilde: &Array2<f64>) -> Array2<f64> {
    let r = &norm.inv_sqrt_degree;
    let prod = d_tilde * &norm.a_tilde;
    let row = prod.sum_axis(Axis(1));
    let col = prod.sum_axis(Axis(0));
    // dL/dd_k = -1/2 r_k^2 (Σ_j dÃ_kj Ã_kj + Σ_i dÃ_ik Ã_ik)
    let d_deg: Array1<f64> = Zip::from(r)
        .and(&row)
        .and(&col)
        .map_collect(|&r, &a, &b| -0.5 * r * r * (a + b));
    let mut out = d_tilde.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v * r[i] * r[j] + d_deg[i];
    }
    out
}

pub(crate) fn check_readout(head: Head, readout: Readout, n: usize) -> Result<()> {
    match (head, readout) {
        (Head::NodeSoftmax, Readout::Node(v)) if v < n => Ok(()),
        (Head::NodeSoftmax, Readout::Node(v)) => {
            Err(Error::InvalidTarget(format!("node {v} out of range")))
        }
        (Head::NodeSoftmax, Readout::Graph) => Err(Error::InvalidTarget(
            "softmax head needs a node readout".into(),
        )),
        (Head::GraphMultilabelSigmoid, _) => Ok(()),
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Classification target for [`loss`].
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Labels(Vec<u8>),
}

const LOG_FLOOR: f64 = 1e-12;

/// Cross-entropy of one prediction: `-ln p_y` for a class target and the
/// summed binary cross-entropy for a label vector.
pub fn loss(prediction: &Prediction, target: &Target) -> Result<f64> {
    match target {
        Target::Class(c) => {
            let p = prediction
                .probs
                .get(*c)
                .ok_or_else(|| Error::InvalidTarget(format!("class {c} out of range")))?;
            Ok(-p.max(LOG_FLOOR).ln())
        }
        Target::Labels(y) => {
            if y.len() != prediction.probs.len() || y.iter().any(|&v| v > 1) {
                return Err(Error::InvalidTarget(
                    "label vector must be binary with one entry per class".into(),
                ));
            }
            Ok(y.iter()
                .zip(&prediction.probs)
                .map(|(&y, &p)| {
                    if y == 1 {
                        -p.max(LOG_FLOOR).ln()
                    } else {
                        -(1.0 - p).max(LOG_FLOOR).ln()
                    }
                })
                .sum())
        }
    }
}

/// Mean cross-entropy over the target nodes of one graph, together with
/// its gradient with respect to the logits.
pub fn cross_entropy_logit_grad(
    output: &GraphOutput,
    targets: &[(Readout, Target)],
) -> Result<(f64, Array2<f64>)> {
    let mut d = Array2::zeros(output.logits.dim());
    let mut total = 0.0;
    let scale = 1.0 / targets.len().max(1) as f64;
    for (readout, target) in targets {
        let pred = output.prediction(*readout);
        total += loss(&pred, target)?;
        match (output.head, readout, target) {
            (Head::NodeSoftmax, Readout::Node(v), Target::Class(c)) => {
                for k in 0..output.probs.ncols() {
                    let y = if k == *c { 1.0 } else { 0.0 };
                    d[[*v, k]] += scale * (output.probs[[*v, k]] - y);
                }
            }
            (Head::GraphMultilabelSigmoid, _, Target::Labels(y)) => {
                for (k, &yk) in y.iter().enumerate() {
                    d[[k, 0]] += scale * (output.probs[[k, 0]] - yk as f64);
                }
            }
            _ => {
                return Err(Error::InvalidTarget(
                    "target does not match model head".into(),
                ))
            }
        }
    }
    Ok((total * scale, d))
}

/// Gradients of the mean cross-entropy with respect to every weight.
pub fn grad_weights(
    model: &GcnModel,
    a_prime: &Array2<f64>,
    x: &Array2<f64>,
    targets: &[(Readout, Target)],
) -> Result<(f64, Gradients)> {
    let cache = model.forward_cached(a_prime, x)?;
    let (value, dlogits) = cross_entropy_logit_grad(&cache.output, targets)?;
    let (grads, _) = model.backward(&cache, &dlogits, true, false);
    Ok((value, grads.expect("weights requested")))
}

/// On-disk model format. `layers` holds the GCN weights row by row; the
/// classifier is stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub layers: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub out_weight: Vec<Vec<f64>>,
    pub out_bias: Vec<f64>,
    pub head: Head,
    pub dims: Vec<usize>,
    pub meta: ModelMeta,
}

impl From<&GcnModel> for ModelFile {
    fn from(m: &GcnModel) -> Self {
        ModelFile {
            layers: m.layers.iter().map(matrix_to_rows).collect(),
            biases: m.biases.iter().map(|b| b.to_vec()).collect(),
            out_weight: matrix_to_rows(&m.out_weight),
            out_bias: m.out_bias.to_vec(),
            head: m.head,
            dims: m.dims(),
            meta: m.meta.clone(),
        }
    }
}

impl TryFrom<ModelFile> for GcnModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let layers = f
            .layers
            .iter()
            .map(|w| rows_to_matrix(w, w.len()))
            .collect::<Result<Vec<_>>>()?;
        let model = GcnModel {
            layers,
            biases: f.biases.into_iter().map(Array1::from_vec).collect(),
            out_weight: rows_to_matrix(&f.out_weight, f.out_weight.len())?,
            out_bias: Array1::from_vec(f.out_bias),
            head: f.head,
            meta: f.meta,
        };
        if model.layers.is_empty() {
            return Err(Error::Dimension("model has no layers".into()));
        }
        model.validate()?;
        if model.dims() != f.dims {
            return Err(Error::Dimension(format!(
                "dims {:?} disagree with weights {:?}",
                f.dims,
                model.dims()
            )));
        }
        Ok(model)
    }
}

impl GcnModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        f.try_into()
    }
}
