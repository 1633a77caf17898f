//! The point transformer: an input embedding, four stages of (local vector
//! attention + downsampling abstraction), and a two-head classifier.
//!
//! Stage `i` maps `(m, c)` features to `(m/4, 2c)`: the transformer block
//! attends over each point's k nearest neighbours in coordinate space with a
//! relative position encoding, and the abstraction block picks `m/4` points
//! (farthest point sampling in coordinate space, or farthest cosine sampling
//! in feature space), then max-pools an MLP over each pick's neighbourhood.
//! The main head `f_c` is shared across sites during federated training; the
//! auxiliary head `f_aux` stays site-local.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{Graph, GraphError, NodeId};
use crate::points::PointSet;
use crate::rng::Rng;
use crate::sampling;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Width of the slide-level feature produced by the classifier head.
pub const HEAD_WIDTH: usize = 64;
pub const N_STAGES: usize = 4;
pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelError(pub String);

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "model error: {}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}

impl From<GraphError> for ModelError {
    fn from(e: GraphError) -> Self {
        ModelError(format!("{e}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// Farthest point sampling in coordinate space.
    Fps,
    /// Farthest cosine sampling in feature space.
    Fcs,
}

/// What the position-encoding branch sees. Sampling and neighbourhood search
/// always run on the real coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionMode {
    Real,
    AllZero,
    AllOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_points: usize,
    pub d_in: usize,
    /// Entry width; stage widths double from here: `base_width * 2^i`.
    pub base_width: usize,
    pub k_neighbors: usize,
    pub sampling: SamplingMode,
    pub position_mode: PositionMode,
    /// Collapse the attention score MLP to a single linear map.
    pub w_q_single_linear: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_points: 1024,
            d_in: 32,
            base_width: 32,
            k_neighbors: 16,
            sampling: SamplingMode::Fcs,
            position_mode: PositionMode::Real,
            w_q_single_linear: false,
        }
    }
}

impl ModelConfig {
    /// Per-stage widths, entry width first: `[w, 2w, 4w, 8w, 16w]`.
    pub fn stage_dims(&self) -> [usize; N_STAGES + 1] {
        let mut dims = [0; N_STAGES + 1];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = self.base_width << i;
        }
        dims
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let full = DOWNSAMPLE.pow(N_STAGES as u32);
        if self.n_points == 0 || self.n_points % full != 0 {
            return Err(ModelError(format!(
                "n_points must be a positive multiple of {full}, got {}",
                self.n_points
            )));
        }
        if self.d_in == 0 || self.base_width == 0 || self.k_neighbors == 0 {
            return Err(ModelError(String::from(
                "d_in, base_width and k_neighbors must be positive",
            )));
        }
        Ok(())
    }
}

// ---- weights ---------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Participates in federated aggregation and broadcast.
    pub synced: bool,
    /// Updated by the optimizer (running statistics are not).
    pub trainable: bool,
}

/// Named parameter collection, ordered and indexed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ModelWeights {
    /// Initialize weights for `cfg`. Linear layers draw from
    /// `U(-sqrt(1/fan_in), sqrt(1/fan_in))`; batch-norm starts at identity.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        if cfg.d_in == 0 || cfg.base_width == 0 || cfg.k_neighbors == 0 {
            return Err(ModelError(String::from(
                "d_in, base_width and k_neighbors must be positive",
            )));
        }
        let dims = cfg.stage_dims();
        let mut w = ModelWeights {
            entries: Vec::new(),
            index: BTreeMap::new(),
        };

        w.add_linear("embed.l1", dims[0], cfg.d_in, true, rng);
        w.add_batch_norm("embed.bn1", dims[0]);
        w.add_linear("embed.l2", dims[0], dims[0], true, rng);
        w.add_batch_norm("embed.bn2", dims[0]);

        for s in 1..=N_STAGES {
            let c = dims[s - 1];
            let prefix = format!("s{s}");
            for gate in ["wi", "wj", "wv"] {
                w.add_linear(&format!("{prefix}.attn.{gate}"), c, c, true, rng);
            }
            // zero-initialized output projection: each block starts as the
            // identity and attention fades in as W_z grows
            w.push(
                format!("{prefix}.attn.wz.w"),
                Tensor::zeros(&[c, c]),
                true,
                true,
            );
            w.push(format!("{prefix}.attn.wz.b"), Tensor::zeros(&[c]), true, true);
            if cfg.w_q_single_linear {
                w.add_linear(&format!("{prefix}.attn.wq"), c, c, true, rng);
            } else {
                w.add_linear(&format!("{prefix}.attn.wq1"), c, c, true, rng);
                w.add_linear(&format!("{prefix}.attn.wq2"), c, c, true, rng);
            }
            w.add_linear(&format!("{prefix}.attn.pe1"), c, 3, true, rng);
            w.add_linear(&format!("{prefix}.attn.pe2"), c, c, true, rng);

            let out = 2 * c;
            w.add_linear(&format!("{prefix}.group.l1"), out, c, true, rng);
            w.add_batch_norm(&format!("{prefix}.group.bn1"), out);
            w.add_linear(&format!("{prefix}.group.l2"), out, out, true, rng);
            w.add_batch_norm(&format!("{prefix}.group.bn2"), out);
        }

        w.add_linear("head.l1", HEAD_WIDTH, dims[N_STAGES], true, rng);
        w.add_linear("head.l2", HEAD_WIDTH, HEAD_WIDTH, true, rng);
        w.add_linear("f_c", 2, HEAD_WIDTH, true, rng);
        // the auxiliary classifier never syncs with the server
        w.add_linear("f_aux", 2, HEAD_WIDTH, false, rng);
        Ok(w)
    }

    fn add_linear(&mut self, name: &str, out: usize, inp: usize, synced: bool, rng: &mut Rng) {
        let bound = crate::math::sqrt(1.0 / inp as f64);
        let wdata: Vec<f64> = (0..out * inp).map(|_| rng.uniform(-bound, bound)).collect();
        let bdata: Vec<f64> = (0..out).map(|_| rng.uniform(-bound, bound)).collect();
        self.push(
            format!("{name}.w"),
            Tensor::from_vec(&[out, inp], wdata).expect("weight shape"),
            synced,
            true,
        );
        self.push(
            format!("{name}.b"),
            Tensor::from_vec(&[out], bdata).expect("bias shape"),
            synced,
            true,
        );
    }

    fn add_batch_norm(&mut self, name: &str, width: usize) {
        self.push(format!("{name}.scale"), Tensor::full(&[width], 1.0), true, true);
        self.push(format!("{name}.shift"), Tensor::zeros(&[width]), true, true);
        self.push(format!("{name}.mean"), Tensor::zeros(&[width]), true, false);
        self.push(format!("{name}.var"), Tensor::full(&[width], 1.0), true, false);
    }

    fn push(&mut self, name: String, tensor: Tensor, synced: bool, trainable: bool) {
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor,
            synced,
            trainable,
        });
    }

    /// Rebuild a weight collection from serialized entries.
    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self, ModelError> {
        let mut index = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.name.clone(), i).is_some() {
                return Err(ModelError(format!("duplicate tensor name {}", e.name)));
            }
        }
        Ok(ModelWeights { entries, index })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self.index[name];
        &self.entries[i].tensor
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.entries[i].tensor
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn is_synced(&self, name: &str) -> bool {
        self.entries[self.index[name]].synced
    }

    /// Names of non-synced (auxiliary) tensors.
    pub fn aux_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| !e.synced)
            .map(|e| e.name.clone())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &ModelWeights) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.tensor.max_abs_diff(&b.tensor))
            .fold(0.0, f64::max)
    }
}

// ---- graph binding ---------------------------------------------------------

/// Model weights registered into a graph: trainable tensors become parameter
/// leaves, running statistics become constants.
pub struct GraphWeights {
    nodes: BTreeMap<String, NodeId>,
}

impl GraphWeights {
    pub fn bind(g: &mut Graph, weights: &ModelWeights) -> Self {
        let mut nodes = BTreeMap::new();
        for e in weights.entries() {
            let id = if e.trainable {
                g.param(&e.name, e.tensor.clone())
            } else {
                g.constant(e.tensor.clone())
            };
            nodes.insert(e.name.clone(), id);
        }
        GraphWeights { nodes }
    }

    pub fn node(&self, name: &str) -> NodeId {
        self.nodes[name]
    }
}

// ---- forward ---------------------------------------------------------------

/// Training mode carries the stream that draws sampler start points;
/// evaluation mode is fully deterministic.
pub enum Phase<'a> {
    Train { sampling_rng: &'a mut Rng },
    Eval,
}

impl Phase<'_> {
    fn is_train(&self) -> bool {
        matches!(self, Phase::Train { .. })
    }
}

/// Geometry of a batch at one stage: `n_slides` slides, each holding `m`
/// points, with coordinates concatenated slide-major. Feature rows of the
/// accompanying tensor follow the same layout, so batch-norm statistics run
/// across the whole batch while sampling and neighbourhoods stay per slide.
#[derive(Clone, Debug)]
pub struct StageBatch {
    pub n_slides: usize,
    pub m: usize,
    /// `(n_slides * m) x 3`, row-major.
    pub coords: Vec<f64>,
    /// Coordinates as seen by the position-encoding branch.
    pub pe_coords: Vec<f64>,
}

impl StageBatch {
    pub fn single(coords: Vec<f64>, pe_coords: Vec<f64>) -> Self {
        let m = coords.len() / 3;
        StageBatch {
            n_slides: 1,
            m,
            coords,
            pe_coords,
        }
    }

    fn coords_of(&self, slide: usize) -> &[f64] {
        &self.coords[slide * self.m * 3..(slide + 1) * self.m * 3]
    }
}

pub struct TransformerOut {
    pub features: NodeId,
    /// Per-channel attention weights, shaped `[n_slides * m, k, c]`.
    pub attention: NodeId,
}

pub struct AbstractionOut {
    pub features: NodeId,
    pub batch: StageBatch,
    /// Per-slide sampled indices, local to each slide.
    pub sampled: Vec<Vec<usize>>,
    /// `(running-stat prefix, bn node)` pairs for running-stat updates.
    pub bn_nodes: Vec<(String, NodeId)>,
}

pub struct ForwardOutput {
    /// `[n_slides, 2]` row-stochastic class probabilities from `f_c`.
    pub probs: NodeId,
    /// `[n_slides, 2]` probabilities from the auxiliary head.
    pub aux_probs: NodeId,
    /// Slide-level features `F_h`, `[n_slides, 64]`.
    pub feature: NodeId,
    /// Per-slide `(points, channels)` after each stage.
    pub stage_shapes: Vec<(usize, usize)>,
    pub bn_nodes: Vec<(String, NodeId)>,
}

impl ForwardOutput {
    pub fn class_probs(&self, g: &Graph) -> [f64; 2] {
        let v = g.value(self.probs).row(0);
        [v[0], v[1]]
    }

    pub fn aux_class_probs(&self, g: &Graph) -> [f64; 2] {
        let v = g.value(self.aux_probs).row(0);
        [v[0], v[1]]
    }

    /// Positive-class score of one slide in the batch.
    pub fn positive_score_of(&self, g: &Graph, slide: usize) -> f64 {
        g.value(self.probs).row(slide)[1]
    }

    /// Score of the positive class from the main head (first slide).
    pub fn positive_score(&self, g: &Graph) -> f64 {
        self.positive_score_of(g, 0)
    }
}

fn linear_named(
    g: &mut Graph,
    gw: &GraphWeights,
    x: NodeId,
    name: &str,
) -> Result<NodeId, GraphError> {
    g.linear(x, gw.node(&format!("{name}.w")), gw.node(&format!("{name}.b")))
}

/// Local vector attention over each point's k nearest neighbours in its own
/// slide, with a residual connection. Rows are slide-major.
pub fn transformer_block(
    g: &mut Graph,
    gw: &GraphWeights,
    stage: usize,
    x: NodeId,
    batch: &StageBatch,
    cfg: &ModelConfig,
) -> Result<TransformerOut, ModelError> {
    let rows = g.value(x).rows();
    let c = g.value(x).cols();
    let m = batch.m;
    if m == 0 || rows != batch.n_slides * m {
        return Err(ModelError(format!(
            "transformer block wants {} x {} rows, got {rows}",
            batch.n_slides, m
        )));
    }
    let k = cfg.k_neighbors.min(m);
    let p = format!("s{stage}.attn");

    // per-slide neighbourhoods, offset into the batch layout
    let queries: Vec<usize> = (0..m).collect();
    let mut neighbors = Vec::with_capacity(rows * k);
    for b in 0..batch.n_slides {
        let local = sampling::knn_indices(batch.coords_of(b), 3, &queries, k)
            .map_err(|e| ModelError(format!("{e}")))?;
        neighbors.extend(local.into_iter().map(|j| j + b * m));
    }
    let query_rep: Vec<usize> = (0..rows).flat_map(|i| core::iter::repeat_n(i, k)).collect();

    // relative positions p_i - p_j feed the encoding branch
    let mut pdiff = Vec::with_capacity(rows * k * 3);
    for (&i, &j) in query_rep.iter().zip(&neighbors) {
        for axis in 0..3 {
            pdiff.push(batch.pe_coords[i * 3 + axis] - batch.pe_coords[j * 3 + axis]);
        }
    }
    let pdiff = g.constant(Tensor::from_vec(&[rows * k, 3], pdiff).expect("pdiff shape"));

    let u = linear_named(g, gw, x, &format!("{p}.wi"))?;
    let v = linear_named(g, gw, x, &format!("{p}.wj"))?;
    let w = linear_named(g, gw, x, &format!("{p}.wv"))?;

    let u_rep = g.gather_rows(u, &query_rep)?;
    let v_nb = g.gather_rows(v, &neighbors)?;
    let w_nb = g.gather_rows(w, &neighbors)?;

    let diff = g.sub(u_rep, v_nb)?;
    let score = if cfg.w_q_single_linear {
        linear_named(g, gw, diff, &format!("{p}.wq"))?
    } else {
        let h = linear_named(g, gw, diff, &format!("{p}.wq1"))?;
        let h = g.relu(h)?;
        linear_named(g, gw, h, &format!("{p}.wq2"))?
    };
    // shared position encoding, added to both the score and the value
    let pe = {
        let h = linear_named(g, gw, pdiff, &format!("{p}.pe1"))?;
        let h = g.relu(h)?;
        linear_named(g, gw, h, &format!("{p}.pe2"))?
    };

    let alpha = g.add(score, pe)?;
    let alpha3 = g.reshape(alpha, &[rows, k, c])?;
    let attention = g.softmax_axis(alpha3, 1)?;

    let values = g.add(w_nb, pe)?;
    let values3 = g.reshape(values, &[rows, k, c])?;
    let weighted = g.mul(attention, values3)?;
    let z = g.sum_reduce(weighted, 1)?;

    let wz = linear_named(g, gw, z, &format!("{p}.wz"))?;
    let features = g.add(x, wz)?;
    Ok(TransformerOut {
        features,
        attention,
    })
}

/// Downsample each slide to a quarter of its points and double the channel
/// width: per slide, sample by FCS (feature space) or FPS (coordinate
/// space) and gather each pick's k nearest neighbours; then run the grouping
/// MLP with batch-norm across the whole batch and max-pool per
/// neighbourhood. Slides smaller than the downsample factor collapse to one
/// point each.
#[allow(clippy::too_many_arguments)]
pub fn abstraction_block(
    g: &mut Graph,
    gw: &GraphWeights,
    stage: usize,
    x: NodeId,
    batch: &StageBatch,
    cfg: &ModelConfig,
    train: bool,
    starts: &[usize],
) -> Result<AbstractionOut, ModelError> {
    let rows = g.value(x).rows();
    let c = g.value(x).cols();
    let m = batch.m;
    if m == 0 || rows != batch.n_slides * m {
        return Err(ModelError(format!(
            "abstraction block wants {} x {} rows, got {rows}",
            batch.n_slides, m
        )));
    }
    if starts.len() != batch.n_slides {
        return Err(ModelError(format!(
            "{} sampler starts for {} slides",
            starts.len(),
            batch.n_slides
        )));
    }
    if m >= DOWNSAMPLE && m % DOWNSAMPLE != 0 {
        return Err(ModelError(format!(
            "abstraction wants a multiple of {DOWNSAMPLE} points per slide, got {m}"
        )));
    }
    let m_out = sampling::quarter_count(m);
    let k = cfg.k_neighbors.min(m);
    let p = format!("s{stage}.group");

    let mut sampled = Vec::with_capacity(batch.n_slides);
    let mut neighbors = Vec::with_capacity(batch.n_slides * m_out * k);
    let mut new_coords = Vec::with_capacity(batch.n_slides * m_out * 3);
    let mut new_pe = Vec::with_capacity(batch.n_slides * m_out * 3);
    for b in 0..batch.n_slides {
        let local = match cfg.sampling {
            SamplingMode::Fcs => {
                let feats = &g.value(x).data()[b * m * c..(b + 1) * m * c];
                sampling::fcs_indices(feats, c, m_out, starts[b])
            }
            SamplingMode::Fps => sampling::fps_indices(batch.coords_of(b), 3, m_out, starts[b]),
        }
        .map_err(|e| ModelError(format!("{e}")))?;
        let nb = sampling::knn_indices(batch.coords_of(b), 3, &local, k)
            .map_err(|e| ModelError(format!("{e}")))?;
        neighbors.extend(nb.into_iter().map(|j| j + b * m));
        for &i in &local {
            let gi = b * m + i;
            new_coords.extend_from_slice(&batch.coords[gi * 3..(gi + 1) * 3]);
            new_pe.extend_from_slice(&batch.pe_coords[gi * 3..(gi + 1) * 3]);
        }
        sampled.push(local);
    }

    let gathered = g.gather_rows(x, &neighbors)?;
    let mut bn_nodes = Vec::new();

    let mut h = linear_named(g, gw, gathered, &format!("{p}.l1"))?;
    h = bn_layer(g, gw, &format!("{p}.bn1"), h, train, &mut bn_nodes)?;
    h = g.relu(h)?;
    h = linear_named(g, gw, h, &format!("{p}.l2"))?;
    h = bn_layer(g, gw, &format!("{p}.bn2"), h, train, &mut bn_nodes)?;
    h = g.relu(h)?;

    let h3 = g.reshape(h, &[batch.n_slides * m_out, k, 2 * c])?;
    let features = g.max_reduce(h3, 1)?;

    Ok(AbstractionOut {
        features,
        batch: StageBatch {
            n_slides: batch.n_slides,
            m: m_out,
            coords: new_coords,
            pe_coords: new_pe,
        },
        sampled,
        bn_nodes,
    })
}

fn bn_layer(
    g: &mut Graph,
    gw: &GraphWeights,
    prefix: &str,
    x: NodeId,
    train: bool,
    bn_nodes: &mut Vec<(String, NodeId)>,
) -> Result<NodeId, GraphError> {
    let scale = gw.node(&format!("{prefix}.scale"));
    let shift = gw.node(&format!("{prefix}.shift"));
    let node = if train {
        g.batch_norm(x, scale, shift, BN_EPS)?
    } else {
        let mean = gw.node(&format!("{prefix}.mean"));
        let var = gw.node(&format!("{prefix}.var"));
        g.batch_norm_with_stats(x, scale, shift, BN_EPS, mean, var)?
    };
    bn_nodes.push((String::from(prefix), node));
    Ok(node)
}

/// Forward pass over a batch of slides (each already subsampled to
/// `cfg.n_points`). Feature rows stay slide-major throughout; batch-norm
/// statistics in training mode span all slides of the batch.
pub fn forward_batch(
    g: &mut Graph,
    gw: &GraphWeights,
    slides: &[PointSet],
    cfg: &ModelConfig,
    mut phase: Phase<'_>,
) -> Result<ForwardOutput, ModelError> {
    if slides.is_empty() {
        return Err(ModelError(String::from("empty batch")));
    }
    for points in slides {
        if points.len() != cfg.n_points {
            return Err(ModelError(format!(
                "expected {} points, got {}",
                cfg.n_points,
                points.len()
            )));
        }
        if points.feature_dim() != cfg.d_in {
            return Err(ModelError(format!(
                "expected {}-dim features, got {}",
                cfg.d_in,
                points.feature_dim()
            )));
        }
    }

    let n_slides = slides.len();
    let n = cfg.n_points;
    let mut coords = Vec::with_capacity(n_slides * n * 3);
    let mut feats = Vec::with_capacity(n_slides * n * cfg.d_in);
    for s in slides {
        coords.extend_from_slice(s.coords());
        feats.extend_from_slice(s.features());
    }
    let pe_coords: Vec<f64> = match cfg.position_mode {
        PositionMode::Real => coords.clone(),
        PositionMode::AllZero => vec![0.0; n_slides * n * 3],
        PositionMode::AllOne => vec![1.0; n_slides * n * 3],
    };
    let mut batch = StageBatch {
        n_slides,
        m: n,
        coords,
        pe_coords,
    };

    let feats = g.input(
        "batch.features",
        Tensor::from_vec(&[n_slides * n, cfg.d_in], feats).expect("feature shape"),
        false,
    );

    let mut stage_shapes = Vec::with_capacity(N_STAGES);
    let mut bn_nodes = Vec::new();

    // input embedding in the grouping-MLP style: two rounds of
    // linear + batch-norm + relu up to the entry width
    let mut x = linear_named(g, gw, feats, "embed.l1")?;
    x = bn_layer(g, gw, "embed.bn1", x, phase.is_train(), &mut bn_nodes)?;
    x = g.relu(x)?;
    x = linear_named(g, gw, x, "embed.l2")?;
    x = bn_layer(g, gw, "embed.bn2", x, phase.is_train(), &mut bn_nodes)?;
    x = g.relu(x)?;

    for stage in 1..=N_STAGES {
        let t = transformer_block(g, gw, stage, x, &batch, cfg)?;
        let m = batch.m;
        let c = g.value(t.features).cols();
        let starts: Vec<usize> = match &mut phase {
            Phase::Train { sampling_rng } => {
                (0..n_slides).map(|_| sampling_rng.below(m)).collect()
            }
            Phase::Eval => {
                let data = g.value(t.features).data();
                (0..n_slides)
                    .map(|b| sampling::max_norm_index(&data[b * m * c..(b + 1) * m * c], c))
                    .collect()
            }
        };
        let a = abstraction_block(
            g,
            gw,
            stage,
            t.features,
            &batch,
            cfg,
            phase.is_train(),
            &starts,
        )?;
        x = a.features;
        batch = a.batch;
        bn_nodes.extend(a.bn_nodes);
        stage_shapes.push((batch.m, g.value(x).cols()));
    }

    // per-slide global average pool over the surviving points
    let width = g.value(x).cols();
    let x3 = g.reshape(x, &[n_slides, batch.m, width])?;
    let pooled = g.mean_reduce(x3, 1)?;
    let mut fh = linear_named(g, gw, pooled, "head.l1")?;
    fh = g.relu(fh)?;
    fh = linear_named(g, gw, fh, "head.l2")?;
    fh = g.relu(fh)?;

    let logits = linear_named(g, gw, fh, "f_c")?;
    let probs = g.softmax_axis(logits, 1)?;
    let aux_logits = linear_named(g, gw, fh, "f_aux")?;
    let aux_probs = g.softmax_axis(aux_logits, 1)?;

    Ok(ForwardOutput {
        probs,
        aux_probs,
        feature: fh,
        stage_shapes,
        bn_nodes,
    })
}

/// Forward pass for a single slide.
pub fn forward(
    g: &mut Graph,
    gw: &GraphWeights,
    points: &PointSet,
    cfg: &ModelConfig,
    phase: Phase<'_>,
) -> Result<ForwardOutput, ModelError> {
    forward_batch(g, gw, core::slice::from_ref(points), cfg, phase)
}

/// Fold the batch statistics saved by a training forward into the running
/// statistics (the running variance uses the unbiased estimate).
pub fn update_running_stats(g: &Graph, bn_nodes: &[(String, NodeId)], weights: &mut ModelWeights) {
    for (prefix, node) in bn_nodes {
        let Some((mean, var)) = g.bn_batch_stats(*node) else {
            continue;
        };
        let rows = g.value(*node).rows() as f64;
        let correction = rows / (rows - 1.0).max(1.0);
        let mean = mean.to_vec();
        let var = var.to_vec();
        {
            let rm = weights.get_mut(&format!("{prefix}.mean"));
            for (slot, &b) in rm.data_mut().iter_mut().zip(&mean) {
                *slot = (1.0 - BN_MOMENTUM) * *slot + BN_MOMENTUM * b;
            }
        }
        {
            let rv = weights.get_mut(&format!("{prefix}.var"));
            for (slot, &b) in rv.data_mut().iter_mut().zip(&var) {
                *slot = (1.0 - BN_MOMENTUM) * *slot + BN_MOMENTUM * (b * correction);
            }
        }
    }
}
