//! The global residual classifier and its parameter store.
//!
//! A model is `stem -> residual blocks (in stages) -> classifier head`.
//! Blocks come in an MLP flavor (affine twice) and a conv flavor (3x3
//! convolutions twice, ResNet-style). The first block of every stage after
//! the first changes width (and, for conv, halves the spatial resolution
//! with stride 2), carrying a projection on its skip path.
//!
//! Every parameter tensor is described once by a [`TensorTemplate`]; slicing,
//! coordinate bookkeeping, extraction, and counting all derive from that
//! single description, so the layout convention cannot drift between
//! modules.
//!
//! Included block `j` computes `Y <- relu(skip(Y) + s_j * branch(Y))` where
//! `s_j` is a learnable scalar step size. A block masked out of a submodel
//! is skipped with no computation at all — except that a masked *transition*
//! block still applies its skip-path projection (the step-size-zero limit of
//! the block), since later layers need the new width and resolution.

use crate::error::{NeflError, Result};
use crate::rng::{self, Purpose};
use crate::scaling::SubmodelSpec;
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::Tensor;
use indexmap::IndexMap;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Mlp,
    Conv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: BlockKind,
    pub stages: Vec<StageConfig>,
    /// [D] for MLP models, [C,H,W] for conv models.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

/// Static facts about one residual block of the global model.
#[derive(Clone, Debug)]
pub struct BlockInfo {
    pub stage: usize,
    pub pos_in_stage: usize,
    /// First block of a later stage: changes width (conv: stride 2) and
    /// carries a projection on its skip path.
    pub has_projection: bool,
    pub in_width: usize,
    pub out_width: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(NeflError::Config("model needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks < 1 {
                return Err(NeflError::Config(format!("stage {} needs at least one block", i)));
            }
            if s.width < 4 {
                return Err(NeflError::Config(format!(
                    "stage {} width {} is below the minimum of 4",
                    i, s.width
                )));
            }
        }
        if self.num_classes < 2 {
            return Err(NeflError::Config("model needs at least two classes".into()));
        }
        match self.kind {
            BlockKind::Mlp => {
                if self.input_shape.len() != 1 || self.input_shape[0] == 0 {
                    return Err(NeflError::Config(format!(
                        "mlp input_shape must be [D], got {:?}",
                        self.input_shape
                    )));
                }
            }
            BlockKind::Conv => {
                if self.input_shape.len() != 3 || self.input_shape.iter().any(|&d| d == 0) {
                    return Err(NeflError::Config(format!(
                        "conv input_shape must be [C,H,W], got {:?}",
                        self.input_shape
                    )));
                }
                let (h, w) = (self.input_shape[1], self.input_shape[2]);
                if h < 3 || w < 3 {
                    return Err(NeflError::Config(format!(
                        "conv input {}x{} is too small for 3x3 kernels",
                        h, w
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks).sum()
    }

    /// Per-block facts in global block order (stage-major).
    pub fn block_infos(&self) -> Vec<BlockInfo> {
        let mut out = Vec::with_capacity(self.total_blocks());
        for (stage, sc) in self.stages.iter().enumerate() {
            for pos in 0..sc.blocks {
                let has_projection = stage > 0 && pos == 0;
                let in_width =
                    if has_projection { self.stages[stage - 1].width } else { sc.width };
                out.push(BlockInfo {
                    stage,
                    pos_in_stage: pos,
                    has_projection,
                    in_width,
                    out_width: sc.width,
                });
            }
        }
        out
    }
}

// ── Parameter templates ─────────────────────────────────────────────────

/// How one axis of a parameter tensor scales when a submodel is sliced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisRole {
    /// Full extent in every submodel (kernel size, raw input channels,
    /// class count, the one-element step size).
    Fixed(usize),
    /// Sliced to the submodel's width for this stage.
    Stage(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Owner {
    Stem,
    Block(usize),
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamClass {
    Weight,
    Bias,
    BnScale,
    BnShift,
    BnRunMean,
    BnRunVar,
    Step,
}

impl ParamClass {
    pub fn is_bn(self) -> bool {
        matches!(
            self,
            ParamClass::BnScale | ParamClass::BnShift | ParamClass::BnRunMean | ParamClass::BnRunVar
        )
    }

    /// Running statistics are state, not trainable parameters.
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamClass::BnRunMean | ParamClass::BnRunVar)
    }
}

/// One parameter tensor of the global model, described structurally.
#[derive(Clone, Debug)]
pub struct TensorTemplate {
    pub name: String,
    pub class: ParamClass,
    pub owner: Owner,
    /// Owned by the residual branch: absent from a submodel whose mask drops
    /// the block. Skip-path projections are *not* branch-only.
    pub branch_only: bool,
    pub axes: Vec<AxisRole>,
}

impl TensorTemplate {
    pub fn full_shape(&self, cfg: &ModelConfig) -> Vec<usize> {
        self.axes
            .iter()
            .map(|a| match a {
                AxisRole::Fixed(n) => *n,
                AxisRole::Stage(s) => cfg.stages[*s].width,
            })
            .collect()
    }

    pub fn sliced_shape(&self, spec: &SubmodelSpec) -> Vec<usize> {
        self.axes
            .iter()
            .map(|a| match a {
                AxisRole::Fixed(n) => *n,
                AxisRole::Stage(s) => spec.stage_width(*s),
            })
            .collect()
    }

    /// Whether this tensor exists in the given submodel at all.
    pub fn in_submodel(&self, spec: &SubmodelSpec) -> bool {
        match self.owner {
            Owner::Stem | Owner::Head => true,
            Owner::Block(j) => !self.branch_only || spec.mask[j],
        }
    }
}

fn bn_templates(prefix: &str, owner: Owner, branch_only: bool, stage: usize) -> Vec<TensorTemplate> {
    [
        (ParamClass::BnScale, "scale"),
        (ParamClass::BnShift, "shift"),
        (ParamClass::BnRunMean, "running_mean"),
        (ParamClass::BnRunVar, "running_var"),
    ]
    .into_iter()
    .map(|(class, part)| TensorTemplate {
        name: format!("{}.{}", prefix, part),
        class,
        owner,
        branch_only,
        axes: vec![AxisRole::Stage(stage)],
    })
    .collect()
}

/// Every parameter tensor of the model, in canonical (store) order:
/// stem, blocks in global order, head.
pub fn templates(cfg: &ModelConfig) -> Vec<TensorTemplate> {
    let mut out = Vec::new();
    let t = |name: String, class, owner, branch_only, axes| TensorTemplate {
        name,
        class,
        owner,
        branch_only,
        axes,
    };

    match cfg.kind {
        BlockKind::Mlp => {
            let d = cfg.input_shape[0];
            out.push(t(
                "stem.affine.w".into(),
                ParamClass::Weight,
                Owner::Stem,
                false,
                vec![AxisRole::Fixed(d), AxisRole::Stage(0)],
            ));
            out.push(t(
                "stem.affine.b".into(),
                ParamClass::Bias,
                Owner::Stem,
                false,
                vec![AxisRole::Stage(0)],
            ));
        }
        BlockKind::Conv => {
            let c_in = cfg.input_shape[0];
            out.push(t(
                "stem.conv.w".into(),
                ParamClass::Weight,
                Owner::Stem,
                false,
                vec![
                    AxisRole::Stage(0),
                    AxisRole::Fixed(c_in),
                    AxisRole::Fixed(3),
                    AxisRole::Fixed(3),
                ],
            ));
        }
    }
    out.extend(bn_templates("stem.bn", Owner::Stem, false, 0));

    for (j, info) in cfg.block_infos().iter().enumerate() {
        let owner = Owner::Block(j);
        let s = info.stage;
        let s_in = if info.has_projection { s - 1 } else { s };
        match cfg.kind {
            BlockKind::Mlp => {
                out.push(t(
                    format!("block{}.affine1.w", j),
                    ParamClass::Weight,
                    owner,
                    true,
                    vec![AxisRole::Stage(s_in), AxisRole::Stage(s)],
                ));
                out.push(t(
                    format!("block{}.affine1.b", j),
                    ParamClass::Bias,
                    owner,
                    true,
                    vec![AxisRole::Stage(s)],
                ));
                out.extend(bn_templates(&format!("block{}.bn1", j), owner, true, s));
                out.push(t(
                    format!("block{}.affine2.w", j),
                    ParamClass::Weight,
                    owner,
                    true,
                    vec![AxisRole::Stage(s), AxisRole::Stage(s)],
                ));
                out.push(t(
                    format!("block{}.affine2.b", j),
                    ParamClass::Bias,
                    owner,
                    true,
                    vec![AxisRole::Stage(s)],
                ));
                out.extend(bn_templates(&format!("block{}.bn2", j), owner, true, s));
                if info.has_projection {
                    out.push(t(
                        format!("block{}.proj.w", j),
                        ParamClass::Weight,
                        owner,
                        false,
                        vec![AxisRole::Stage(s_in), AxisRole::Stage(s)],
                    ));
                    out.push(t(
                        format!("block{}.proj.b", j),
                        ParamClass::Bias,
                        owner,
                        false,
                        vec![AxisRole::Stage(s)],
                    ));
                    out.extend(bn_templates(&format!("block{}.bnp", j), owner, false, s));
                }
            }
            BlockKind::Conv => {
                out.push(t(
                    format!("block{}.conv1.w", j),
                    ParamClass::Weight,
                    owner,
                    true,
                    vec![
                        AxisRole::Stage(s),
                        AxisRole::Stage(s_in),
                        AxisRole::Fixed(3),
                        AxisRole::Fixed(3),
                    ],
                ));
                out.extend(bn_templates(&format!("block{}.bn1", j), owner, true, s));
                out.push(t(
                    format!("block{}.conv2.w", j),
                    ParamClass::Weight,
                    owner,
                    true,
                    vec![
                        AxisRole::Stage(s),
                        AxisRole::Stage(s),
                        AxisRole::Fixed(3),
                        AxisRole::Fixed(3),
                    ],
                ));
                out.extend(bn_templates(&format!("block{}.bn2", j), owner, true, s));
                if info.has_projection {
                    out.push(t(
                        format!("block{}.proj.w", j),
                        ParamClass::Weight,
                        owner,
                        false,
                        vec![
                            AxisRole::Stage(s),
                            AxisRole::Stage(s_in),
                            AxisRole::Fixed(1),
                            AxisRole::Fixed(1),
                        ],
                    ));
                    out.extend(bn_templates(&format!("block{}.bnp", j), owner, false, s));
                }
            }
        }
        out.push(t(
            format!("block{}.step", j),
            ParamClass::Step,
            owner,
            true,
            vec![AxisRole::Fixed(1)],
        ));
    }

    let last = cfg.stages.len() - 1;
    out.push(t(
        "head.w".into(),
        ParamClass::Weight,
        Owner::Head,
        false,
        vec![AxisRole::Stage(last), AxisRole::Fixed(cfg.num_classes)],
    ));
    out.push(t(
        "head.b".into(),
        ParamClass::Bias,
        Owner::Head,
        false,
        vec![AxisRole::Fixed(cfg.num_classes)],
    ));
    out
}

// ── Parameter store ─────────────────────────────────────────────────────

/// Server-side state: one full-width copy of the shared (consistent)
/// parameters plus one inconsistent set per submodel (step sizes and, by
/// default, all batch-norm tensors at that submodel's widths).
#[derive(Clone, Debug)]
pub struct ParameterStore {
    pub config: ModelConfig,
    /// When true, batch-norm tensors live in `consistent` at full width and
    /// are nested-averaged like weights (ablation mode).
    pub bn_consistent: bool,
    pub consistent: IndexMap<String, Tensor>,
    pub inconsistent: Vec<IndexMap<String, Tensor>>,
}

/// Is this template stored per-submodel rather than shared?
pub fn is_inconsistent(tpl: &TensorTemplate, bn_consistent: bool) -> bool {
    tpl.class == ParamClass::Step || (tpl.class.is_bn() && !bn_consistent)
}

fn default_value(class: ParamClass) -> f64 {
    match class {
        ParamClass::BnScale | ParamClass::BnRunVar => 1.0,
        _ => 0.0,
    }
}

/// Builds a freshly initialized store. Weights get Kaiming-normal draws from
/// a stream keyed by `seed` (same seed, same store); biases and batch-norm
/// tensors get their conventional defaults; step sizes come from each spec.
pub fn build_model(
    cfg: &ModelConfig,
    specs: &[SubmodelSpec],
    bn_consistent: bool,
    seed: u64,
) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut r = rng::stream(seed, Purpose::ModelInit, 0, 0);
    let normal = rand_distr::StandardNormal;

    let mut consistent = IndexMap::new();
    let tpls = templates(cfg);
    for tpl in &tpls {
        if is_inconsistent(tpl, bn_consistent) {
            continue;
        }
        let shape = tpl.full_shape(cfg);
        let tensor = match tpl.class {
            ParamClass::Weight => {
                // Affine weights are [in, out]; conv weights [out, in, k, k].
                let fan_in: usize =
                    if shape.len() == 2 { shape[0] } else { shape[1..].iter().product() };
                let std = (2.0 / fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data: Vec<f64> =
                    (0..n).map(|_| { let z: f64 = normal.sample(&mut r); z * std }).collect();
                Tensor::from_vec(shape, data)?
            }
            class => Tensor::full(&shape, default_value(class)),
        };
        consistent.insert(tpl.name.clone(), tensor);
    }

    let mut inconsistent = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut set = IndexMap::new();
        for tpl in &tpls {
            if !is_inconsistent(tpl, bn_consistent) || !tpl.in_submodel(spec) {
                continue;
            }
            let tensor = match tpl.class {
                ParamClass::Step => {
                    let Owner::Block(j) = tpl.owner else {
                        return Err(NeflError::Contract("step template without a block".into()));
                    };
                    Tensor::scalar(spec.init_step[j])
                }
                class => Tensor::full(&tpl.sliced_shape(spec), default_value(class)),
            };
            set.insert(tpl.name.clone(), tensor);
        }
        inconsistent.push(set);
    }

    Ok(ParameterStore { config: cfg.clone(), bn_consistent, consistent, inconsistent })
}

// ── Client-side weights and the forward pass ────────────────────────────

/// What a client receives: sliced shared parameters plus its submodel's own
/// inconsistent set.
#[derive(Clone, Debug)]
pub struct SubmodelWeights {
    pub consistent: IndexMap<String, Tensor>,
    pub inconsistent: IndexMap<String, Tensor>,
}

impl SubmodelWeights {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.consistent
            .get(name)
            .or_else(|| self.inconsistent.get(name))
            .ok_or_else(|| NeflError::Contract(format!("missing parameter tensor '{}'", name)))
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        if let Some(slot) = self.consistent.get_mut(name) {
            *slot = value;
        } else if let Some(slot) = self.inconsistent.get_mut(name) {
            *slot = value;
        } else {
            return Err(NeflError::Contract(format!("missing parameter tensor '{}'", name)));
        }
        Ok(())
    }

    /// All tensors must be finite; names the first offender otherwise.
    pub fn ensure_finite(&self) -> Result<()> {
        for (name, t) in self.consistent.iter().chain(self.inconsistent.iter()) {
            t.ensure_finite(name)?;
        }
        Ok(())
    }
}

/// The tape nodes a forward pass registered for its trainable tensors.
pub struct ForwardPass {
    pub logits: NodeId,
    /// (tensor name, leaf node) for every trainable leaf, in forward order.
    pub params: Vec<(String, NodeId)>,
}

struct NetBuilder<'a> {
    tape: &'a mut Tape,
    weights: &'a mut SubmodelWeights,
    mode: Mode,
    train_steps: bool,
    params: Vec<(String, NodeId)>,
}

impl<'a> NetBuilder<'a> {
    fn lease(&mut self, name: &str, trainable: bool) -> Result<NodeId> {
        let value = self.weights.get(name)?.clone();
        let id = if trainable {
            let id = self.tape.param(value);
            self.params.push((name.to_string(), id));
            id
        } else {
            self.tape.constant(value)
        };
        Ok(id)
    }

    /// Batch norm with running stats pulled from (and written back to) the
    /// client weights.
    fn bn(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let scale = self.lease(&format!("{}.scale", prefix), true)?;
        let shift = self.lease(&format!("{}.shift", prefix), true)?;
        let rm_name = format!("{}.running_mean", prefix);
        let rv_name = format!("{}.running_var", prefix);
        let mut rm = self.weights.get(&rm_name)?.clone();
        let mut rv = self.weights.get(&rv_name)?.clone();
        let out =
            self.tape.batchnorm(x, scale, shift, &mut rm, &mut rv, self.mode, BN_MOMENTUM, BN_EPS)?;
        if self.mode == Mode::Train {
            self.weights.set(&rm_name, rm)?;
            self.weights.set(&rv_name, rv)?;
        }
        Ok(out)
    }
}

/// Runs one batch through the submodel, registering trainable leaves on the
/// tape. `batch` is [B, ...] with the per-example shape matching (or
/// flattening to) the model's input shape. Train mode updates batch-norm
/// running statistics inside `weights`.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    spec: &SubmodelSpec,
    weights: &mut SubmodelWeights,
    batch: &Tensor,
    mode: Mode,
    train_steps: bool,
) -> Result<ForwardPass> {
    let b = *batch
        .shape()
        .first()
        .ok_or_else(|| NeflError::Dimension("forward needs a batched input".into()))?;
    let per: usize = batch.shape()[1..].iter().product();
    let want: usize = cfg.input_shape.iter().product();
    if per != want {
        return Err(NeflError::Dimension(format!(
            "batch example size {} does not match model input {:?}",
            per, cfg.input_shape
        )));
    }
    let mut canonical = vec![b];
    canonical.extend_from_slice(&cfg.input_shape);
    let x = batch.reshaped(canonical)?;

    let mut net = NetBuilder { tape, weights, mode, train_steps, params: Vec::new() };

    // Stem.
    let mut y = match cfg.kind {
        BlockKind::Mlp => {
            let xi = net.tape.constant(x);
            let w = net.lease("stem.affine.w", true)?;
            let bias = net.lease("stem.affine.b", true)?;
            net.tape.affine(xi, w, bias)?
        }
        BlockKind::Conv => {
            let xi = net.tape.constant(x);
            let w = net.lease("stem.conv.w", true)?;
            net.tape.conv2d(xi, w, 1, 1)?
        }
    };
    y = net.bn(y, "stem.bn")?;
    y = net.tape.relu(y);

    // Residual blocks.
    for (j, info) in cfg.block_infos().iter().enumerate() {
        let included = spec.mask[j];
        if !included && !info.has_projection {
            continue; // skipped outright: no compute, no tape entries
        }
        let skip = if info.has_projection {
            let p = match cfg.kind {
                BlockKind::Mlp => {
                    let w = net.lease(&format!("block{}.proj.w", j), true)?;
                    let bias = net.lease(&format!("block{}.proj.b", j), true)?;
                    net.tape.affine(y, w, bias)?
                }
                BlockKind::Conv => {
                    let w = net.lease(&format!("block{}.proj.w", j), true)?;
                    net.tape.conv2d(y, w, 2, 0)?
                }
            };
            net.bn(p, &format!("block{}.bnp", j))?
        } else {
            y
        };
        if !included {
            // Step-size-zero limit of a transition block: projection only.
            y = net.tape.relu(skip);
            continue;
        }

        let mut branch = match cfg.kind {
            BlockKind::Mlp => {
                let w = net.lease(&format!("block{}.affine1.w", j), true)?;
                let bias = net.lease(&format!("block{}.affine1.b", j), true)?;
                net.tape.affine(y, w, bias)?
            }
            BlockKind::Conv => {
                let w = net.lease(&format!("block{}.conv1.w", j), true)?;
                let stride = if info.has_projection { 2 } else { 1 };
                net.tape.conv2d(y, w, stride, 1)?
            }
        };
        branch = net.bn(branch, &format!("block{}.bn1", j))?;
        branch = net.tape.relu(branch);
        branch = match cfg.kind {
            BlockKind::Mlp => {
                let w = net.lease(&format!("block{}.affine2.w", j), true)?;
                let bias = net.lease(&format!("block{}.affine2.b", j), true)?;
                net.tape.affine(branch, w, bias)?
            }
            BlockKind::Conv => {
                let w = net.lease(&format!("block{}.conv2.w", j), true)?;
                net.tape.conv2d(branch, w, 1, 1)?
            }
        };
        branch = net.bn(branch, &format!("block{}.bn2", j))?;

        let step = net.lease(&format!("block{}.step", j), net.train_steps)?;
        let scaled = net.tape.scale_by(step, branch)?;
        let summed = net.tape.add(skip, scaled)?;
        y = net.tape.relu(summed);
    }

    // Head.
    if cfg.kind == BlockKind::Conv {
        y = net.tape.global_avg_pool(y)?;
    }
    let w = net.lease("head.w", true)?;
    let bias = net.lease("head.b", true)?;
    let logits = net.tape.affine(y, w, bias)?;

    Ok(ForwardPass { logits, params: net.params })
}

// ── Counting ────────────────────────────────────────────────────────────

/// Trainable scalars of the sliced submodel: weights, biases, batch-norm
/// scale/shift of every layer the submodel computes, and one step size per
/// included block. Running statistics are state, not parameters.
pub fn count_params(cfg: &ModelConfig, spec: &SubmodelSpec) -> usize {
    templates(cfg)
        .iter()
        .filter(|t| t.class.is_trainable() && t.in_submodel(spec))
        .map(|t| t.sliced_shape(spec).iter().product::<usize>())
        .sum()
}

/// Multiply-accumulate count of one single-example forward pass through the
/// sliced submodel (affine and convolution ops; normalization and residual
/// arithmetic are negligible and not counted).
pub fn count_flops(cfg: &ModelConfig, spec: &SubmodelSpec) -> usize {
    let mut macs = 0usize;
    match cfg.kind {
        BlockKind::Mlp => {
            let d = cfg.input_shape[0];
            macs += d * spec.stage_width(0);
            for (j, info) in cfg.block_infos().iter().enumerate() {
                let wi = spec.stage_width(if info.has_projection { info.stage - 1 } else { info.stage });
                let wo = spec.stage_width(info.stage);
                if info.has_projection {
                    macs += wi * wo; // skip projection runs even when masked
                }
                if spec.mask[j] {
                    macs += wi * wo + wo * wo;
                }
            }
        }
        BlockKind::Conv => {
            let c_in = cfg.input_shape[0];
            let (mut h, mut w) = (cfg.input_shape[1], cfg.input_shape[2]);
            macs += h * w * spec.stage_width(0) * c_in * 9;
            for (j, info) in cfg.block_infos().iter().enumerate() {
                let wi = spec.stage_width(if info.has_projection { info.stage - 1 } else { info.stage });
                let wo = spec.stage_width(info.stage);
                if info.has_projection {
                    // Stride-2 transition halves the resolution for everyone.
                    h = (h + 2 - 3) / 2 + 1;
                    w = (w + 2 - 3) / 2 + 1;
                    macs += h * w * wo * wi; // 1x1 projection
                }
                if spec.mask[j] {
                    macs += h * w * wo * wi * 9 + h * w * wo * wo * 9;
                }
            }
        }
    }
    macs += spec.stage_width(cfg.stages.len() - 1) * cfg.num_classes;
    macs
}
