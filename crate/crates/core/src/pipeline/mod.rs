//! Pretraining loop, frozen embeddings and downstream probes.

mod probe;
mod step;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use probe::{kfold_graph_probe, linear_probe, ProbeConfig, ProbeReport, PROBE_ITERS, PROBE_LR};
pub use step::{loss_and_grads, step_loss, train_step, StepOutcome};

use crate::augment::{make_views, AugmentConfig, ViewMode};
use crate::encoder::{encode, project, Activation, EncoderParams, ProjectionParams};
use crate::error::{Error, Result};
use crate::graph::{disjoint_union, mean_pool, normalized_adjacency, sbm_generate, FeatureMode, Graph};
use crate::mixup::{MixStrategy, MixupConfig};
use crate::numcore::{
    finite_diff_check, AdamConfig, AdamState, GradCheckReport, Matrix, ParamTensor, Parameterized, Rng,
};
use crate::objective::{alignment, uniformity, LossConfig, MetricConfig, Similarity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Node,
    Graph,
}

/// Node indices for training and evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (name, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Schema(format!("{name} index {i} out of range for {n} nodes")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Schema(format!("index {i} appears twice across the split")));
                }
            }
        }
        Ok(())
    }

    /// Stratified random split with the given train and validation fractions.
    pub fn stratified(labels: &[usize], train_frac: f64, val_frac: f64, rng: &mut Rng) -> Split {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut split = Split::default();
        for c in 0..classes {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            rng.shuffle(&mut idx);
            let n_train = (idx.len() as f64 * train_frac).round() as usize;
            let n_val = (idx.len() as f64 * val_frac).round() as usize;
            split.train.extend(&idx[..n_train]);
            split.val.extend(&idx[n_train..(n_train + n_val).min(idx.len())]);
            split.test.extend(idx.iter().skip(n_train + n_val));
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        split
    }
}

/// Pretraining input: one labeled graph with a split, or a set of labeled graphs.
#[derive(Clone, Debug)]
pub enum Dataset {
    Node { graph: Graph, split: Split },
    Graphs(Vec<Graph>),
}

impl Dataset {
    pub fn task(&self) -> Task {
        match self {
            Dataset::Node { .. } => Task::Node,
            Dataset::Graphs(_) => Task::Graph,
        }
    }

    pub fn feature_width(&self) -> usize {
        match self {
            Dataset::Node { graph, .. } => graph.d(),
            Dataset::Graphs(gs) => gs.first().map_or(0, Graph::d),
        }
    }

    /// Labels aligned with the rows of [`embed`]'s output.
    pub fn labels(&self) -> Result<Vec<usize>> {
        match self {
            Dataset::Node { graph, .. } => graph
                .node_labels()
                .map(<[usize]>::to_vec)
                .ok_or_else(|| Error::Schema("node dataset has no labels".into())),
            Dataset::Graphs(gs) => gs
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    g.graph_label()
                        .ok_or_else(|| Error::Schema(format!("graph {i} has no label")))
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// number of GCN layers
    pub layers: usize,
    /// width of every GCN layer
    pub width: usize,
    pub activation: Activation,
    pub activate_last: bool,
    pub proj_hidden: usize,
    pub proj_out: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            width: 128,
            activation: Activation::Relu,
            activate_last: true,
            proj_hidden: 128,
            proj_out: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// graphs per batch; node datasets always train on the full graph
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub view_mode: ViewMode,
    /// write elapsed seconds into the trace; off gives byte-stable traces
    pub trace_wall_time: bool,
    pub model: ModelConfig,
    pub augment_a: AugmentConfig,
    pub augment_b: AugmentConfig,
    pub mixup: MixupConfig,
    pub loss: LossConfig,
    pub metrics: MetricConfig,
    pub metric_space: MetricSpace,
}

/// Which representation the alignment and uniformity readings use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    /// encoder output, the representation used downstream
    #[default]
    Encoder,
    /// projection-head output, where the contrastive loss acts
    Projection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            lr: 5e-4,
            weight_decay: 1e-5,
            seed: 0,
            view_mode: ViewMode::Multi,
            trace_wall_time: true,
            model: ModelConfig::default(),
            augment_a: AugmentConfig::default(),
            augment_b: AugmentConfig::default(),
            mixup: MixupConfig::default(),
            loss: LossConfig::default(),
            metrics: MetricConfig::default(),
            metric_space: MetricSpace::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        let m = &self.model;
        if m.layers == 0 || m.width == 0 || m.proj_hidden == 0 || m.proj_out == 0 {
            return Err(Error::Config("model layers and widths must be positive".into()));
        }
        self.augment_a.validate()?;
        self.augment_b.validate()?;
        self.mixup.validate()?;
        self.loss.validate()?;
        self.metrics.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Encoder plus projection head.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub head: ProjectionParams,
}

impl ModelParams {
    pub fn new(input_width: usize, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![input_width];
        widths.extend(std::iter::repeat_n(cfg.width, cfg.layers));
        let mut encoder = EncoderParams::new(&widths, cfg.activation, rng)?;
        encoder.activate_last = cfg.activate_last;
        let head = ProjectionParams::new(cfg.width, cfg.proj_hidden, cfg.proj_out, cfg.activation, rng)?;
        Ok(ModelParams { encoder, head })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            encoder: self.encoder.weights().cloned().collect(),
            activation: self.encoder.activation,
            activate_last: self.encoder.activate_last,
            head_w1: self.head.w1.value().clone(),
            head_w2: self.head.w2.value().clone(),
            head_activation: self.head.activation,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut encoder = EncoderParams::from_weights(ckpt.encoder, ckpt.activation)?;
        encoder.activate_last = ckpt.activate_last;
        if encoder.output_width() != ckpt.head_w1.rows() {
            return Err(Error::dim(
                "ModelParams::from_checkpoint",
                format!("encoder output {}", encoder.output_width()),
                format!("head input {}", ckpt.head_w1.shape_str()),
            ));
        }
        let head = ProjectionParams::from_weights(ckpt.head_w1, ckpt.head_w2, ckpt.head_activation)?;
        Ok(ModelParams { encoder, head })
    }
}

impl Parameterized for ModelParams {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out = self.encoder.tensors();
        out.extend(self.head.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.head.tensors_mut());
        out
    }

    fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.head.zero_grad();
    }
}

/// Serializable weights of a [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub encoder: Vec<Matrix>,
    pub activation: Activation,
    pub activate_last: bool,
    pub head_w1: Matrix,
    pub head_w2: Matrix,
    pub head_activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    /// mean step loss over the epoch
    pub loss: f64,
    pub align: f64,
    pub uniform: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

/// Fixed inputs for the per-epoch alignment and uniformity readings.
pub struct MetricProbe {
    original: Graph,
    view_a: Graph,
    view_b: Graph,
}

impl MetricProbe {
    /// Node datasets use the whole graph; graph datasets the union of the
    /// first `batch_size` graphs.
    pub fn new(data: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let original = match data {
            Dataset::Node { graph, .. } => graph.clone(),
            Dataset::Graphs(gs) => disjoint_union(&gs[..cfg.batch_size.min(gs.len())])?.graph,
        };
        let root = Rng::new(cfg.seed).split("metrics");
        let views = make_views(&original, &cfg.augment_a, &cfg.augment_b, ViewMode::Multi, &root)?;
        Ok(MetricProbe {
            original,
            view_a: views.view_a,
            view_b: views.view_b,
        })
    }

    /// Alignment between the two fixed views and uniformity of the clean
    /// embeddings. Rows with zero norm have no
    /// direction and are left out.
    pub fn measure(&self, params: &ModelParams, cfg: &MetricConfig, space: MetricSpace) -> Result<(f64, f64)> {
        let enc = |g: &Graph| {
            let h = encode(&normalized_adjacency(g), g.features(), &params.encoder)?.0;
            match space {
                MetricSpace::Encoder => Ok(h),
                MetricSpace::Projection => project(&h, &params.head).map(|r| r.0),
            }
        };
        let (ha, hb) = (enc(&self.view_a)?, enc(&self.view_b)?);
        let keep: Vec<usize> = (0..ha.rows())
            .filter(|&i| nonzero(ha.row(i)) && nonzero(hb.row(i)))
            .collect();
        if keep.is_empty() {
            return Err(Error::Numeric("every view embedding has zero norm".into()));
        }
        let align = alignment(&ha.select_rows(&keep), &hb.select_rows(&keep), cfg)?;
        let h = enc(&self.original)?;
        let keep: Vec<usize> = (0..h.rows()).filter(|&i| nonzero(h.row(i))).collect();
        let uniform = uniformity(&h.select_rows(&keep), cfg)?;
        Ok((align, uniform))
    }
}

fn nonzero(row: &[f64]) -> bool {
    row.iter().any(|&v| v != 0.0)
}

fn with_context(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, step {step}: {msg}")),
        other => other,
    }
}

/// Self-supervised pretraining.
pub fn pretrain(data: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainTrace)> {
    pretrain_with(data, cfg, |_, _| Ok(()))
}

/// [`pretrain`] with a callback after every epoch (1-based) for checkpointing.
pub fn pretrain_with<F>(data: &Dataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<(ModelParams, TrainTrace)>
where
    F: FnMut(usize, &ModelParams) -> Result<()>,
{
    cfg.validate()?;
    if let Dataset::Graphs(gs) = data {
        if gs.is_empty() {
            return Err(Error::Schema("graph dataset is empty".into()));
        }
        if let Some(g) = gs.iter().find(|g| g.d() != gs[0].d()) {
            return Err(Error::dim(
                "pretrain",
                format!("feature width {}", gs[0].d()),
                format!("feature width {}", g.d()),
            ));
        }
    }
    let root = Rng::new(cfg.seed);
    let mut params = ModelParams::new(data.feature_width(), &cfg.model, &mut root.split("init"))?;
    let mut adam = AdamState::new(cfg.adam());
    let metric_probe = MetricProbe::new(data, cfg)?;
    let train_rng = root.split("train");
    let start = Instant::now();
    let mut trace = TrainTrace::default();

    for epoch in 1..=cfg.epochs {
        let epoch_rng = train_rng.split_index(epoch as u64);
        let mut losses = Vec::new();
        match data {
            Dataset::Node { graph, .. } => {
                let out = train_step(graph, &mut params, &mut adam, cfg, &epoch_rng.split_index(0))
                    .map_err(|e| with_context(e, epoch, 0))?;
                losses.push(out.loss);
            }
            Dataset::Graphs(gs) => {
                let order = epoch_rng.split("shuffle").permutation(gs.len());
                for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
                    let batch: Vec<Graph> = chunk.iter().map(|&i| gs[i].clone()).collect();
                    let union = disjoint_union(&batch)?;
                    let out = train_step(
                        &union.graph,
                        &mut params,
                        &mut adam,
                        cfg,
                        &epoch_rng.split_index(step as u64),
                    )
                    .map_err(|e| with_context(e, epoch, step))?;
                    losses.push(out.loss);
                }
            }
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: loss is {loss}")));
        }
        let (align, uniform) = metric_probe
            .measure(&params, &cfg.metrics, cfg.metric_space)
            .map_err(|e| with_context(e, epoch, losses.len()))?;
        let seconds = if cfg.trace_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        trace.records.push(TraceRecord {
            epoch,
            loss,
            align,
            uniform,
            seconds,
        });
        on_epoch(epoch, &params)?;
    }
    Ok((params, trace))
}

/// Augmentation-free encoder pass over the original data; graph tasks are
/// mean-pooled to one row per graph.
pub fn embed(data: &Dataset, params: &ModelParams) -> Result<Matrix> {
    match data {
        Dataset::Node { graph, .. } => embed_graph(graph, params),
        Dataset::Graphs(gs) => {
            let batch = disjoint_union(gs)?;
            let h = embed_graph(&batch.graph, params)?;
            mean_pool(&h, &batch)
        }
    }
}

/// Node embeddings of a single graph.
pub fn embed_graph(g: &Graph, params: &ModelParams) -> Result<Matrix> {
    Ok(encode(&normalized_adjacency(g), g.features(), &params.encoder)?.0)
}

/// Central-difference check of a complete training step on a seeded
/// 12-node random graph: 2-layer encoder, projection head, random mixup
/// with λ = 0.7, dot similarity, τ = 0.2.
pub fn gradient_check(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let root = Rng::new(seed);
    let graph = sbm_generate(&[6, 6], 0.5, 0.1, FeatureMode::Random, &mut root.split("graph"))?;
    let cfg = TrainConfig {
        model: ModelConfig {
            layers: 2,
            width: 8,
            proj_hidden: 8,
            proj_out: 8,
            ..Default::default()
        },
        mixup: MixupConfig {
            strategy: MixStrategy::Random,
            fixed_lambda: Some(0.7),
            ..Default::default()
        },
        loss: LossConfig {
            tau: 0.2,
            similarity: Similarity::Dot,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut params = ModelParams::new(graph.d(), &cfg.model, &mut root.split("init"))?;
    let step_rng = root.split("step");
    loss_and_grads(&graph, &mut params, &cfg, &step_rng)?;
    finite_diff_check(&mut params, eps, |p| step_loss(&graph, p, &cfg, &step_rng))
}
