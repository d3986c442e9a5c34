//! Deriving submodels from the global model and moving parameters between
//! the two.
//!
//! A submodel is described by a width multiplier (every stage keeps a prefix
//! of its channels) and a depth mask (each residual block is kept or
//! skipped). Four policies produce a family of submodels for a list of
//! target size ratios:
//!
//! * `W`  — full depth; the width multiplier is chosen on a per-mille grid
//!          so the trainable-parameter count best matches the target ratio.
//! * `D`  — full width; blocks are removed greedily from the back of each
//!          stage (visiting stages last to first, round-robin) while the
//!          remaining parameter ratio stays at or above the target. The
//!          first block of a stage is never removed.
//! * `D_O` — like `D`, but the kept block immediately before each skipped
//!          run starts with step size `run length + 1`, so the rescaled
//!          residual roughly stands in for the missing blocks.
//! * `WD` — width multiplier `sqrt(ratio)` and a depth mask targeting
//!          `sqrt(ratio)`, splitting the reduction between both axes.
//!
//! Explicit per-submodel overrides (width multiplier, per-stage masks,
//! optional step sizes) bypass the solver entirely.
//!
//! Width slicing is *nested*: a narrower submodel's tensor is always a
//! leading sub-box of a wider one's, which is what lets the server average
//! overlapping regions across submodels. [`CoordinateMap`] spells out
//! exactly which scalar coordinates of each shared tensor a submodel
//! covers.

use crate::error::{NeflError, Result};
use crate::model::{
    count_params, is_inconsistent, templates, ModelConfig, Owner, ParameterStore, SubmodelWeights,
};
use crate::tensor::{flat_index, for_each_index, Tensor};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "w")]
    W,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "d_o")]
    DO,
    #[serde(rename = "wd")]
    WD,
}

/// One submodel of the family, fully resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct SubmodelSpec {
    /// 0-based position in the family (reports use `k = index + 1`).
    pub index: usize,
    /// Target size ratio this submodel was derived for.
    pub gamma: f64,
    /// Width multiplier applied to every stage.
    pub gamma_w: f64,
    /// Parameter-weighted fraction of residual-block parameters retained at
    /// full width (skip-path projections always count as retained).
    pub gamma_d: f64,
    /// Actual trainable-parameter count over the full model's.
    pub achieved: f64,
    /// Per block, in global order: does this submodel compute the block?
    pub mask: Vec<bool>,
    /// Initial step size per block (0 where masked).
    pub init_step: Vec<f64>,
    /// Channel count kept per stage.
    pub stage_widths: Vec<usize>,
}

impl SubmodelSpec {
    pub fn stage_width(&self, stage: usize) -> usize {
        self.stage_widths[stage]
    }
}

/// The trivial submodel: the full model itself.
pub fn full_spec(cfg: &ModelConfig, index: usize) -> SubmodelSpec {
    let blocks = cfg.total_blocks();
    SubmodelSpec {
        index,
        gamma: 1.0,
        gamma_w: 1.0,
        gamma_d: 1.0,
        achieved: 1.0,
        mask: vec![true; blocks],
        init_step: vec![1.0; blocks],
        stage_widths: cfg.stages.iter().map(|s| s.width).collect(),
    }
}

fn stage_widths_for(cfg: &ModelConfig, gamma_w: f64) -> Vec<usize> {
    cfg.stages
        .iter()
        .map(|s| ((gamma_w * s.width as f64).round() as usize).clamp(1, s.width))
        .collect()
}

/// Parameter-weighted fraction of block parameters kept by `mask` at full
/// width. Projections on skip paths run regardless of the mask and always
/// count as kept.
fn depth_fraction(cfg: &ModelConfig, mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut kept = 0.0;
    for tpl in templates(cfg) {
        let Owner::Block(j) = tpl.owner else { continue };
        if !tpl.class.is_trainable() {
            continue;
        }
        let n: usize = tpl.full_shape(cfg).iter().product();
        total += n as f64;
        if !tpl.branch_only || mask[j] {
            kept += n as f64;
        }
    }
    kept / total
}

fn make_spec(
    cfg: &ModelConfig,
    index: usize,
    gamma: f64,
    gamma_w: f64,
    mask: Vec<bool>,
    init_step: Vec<f64>,
) -> SubmodelSpec {
    let mut spec = SubmodelSpec {
        index,
        gamma,
        gamma_w,
        gamma_d: depth_fraction(cfg, &mask),
        achieved: 0.0,
        mask,
        init_step,
        stage_widths: stage_widths_for(cfg, gamma_w),
    };
    let full = count_params(cfg, &full_spec(cfg, 0)) as f64;
    spec.achieved = count_params(cfg, &spec) as f64 / full;
    spec
}

/// Best width multiplier on the 1/1000 grid for a full-depth submodel of
/// the target ratio.
fn solve_width_multiplier(cfg: &ModelConfig, gamma: f64) -> f64 {
    let blocks = cfg.total_blocks();
    let full = count_params(cfg, &full_spec(cfg, 0)) as f64;
    let target = gamma * full;
    let mut best = (f64::INFINITY, 1.0);
    for m in 1..=1000u32 {
        let gw = f64::from(m) / 1000.0;
        let spec = make_spec(cfg, 0, gamma, gw, vec![true; blocks], vec![1.0; blocks]);
        let miss = (count_params(cfg, &spec) as f64 - target).abs();
        if miss < best.0 {
            best = (miss, gw);
        }
    }
    best.1
}

/// Removes blocks from the back of each stage, visiting stages last to
/// first round-robin, as long as the remaining full-width parameter ratio
/// stays at or above `target_ratio`. Block 0 of every stage is kept.
fn greedy_depth_mask(cfg: &ModelConfig, target_ratio: f64) -> Vec<bool> {
    let tpls = templates(cfg);
    let infos = cfg.block_infos();
    let full_total: f64 = tpls
        .iter()
        .filter(|t| t.class.is_trainable())
        .map(|t| t.full_shape(cfg).iter().product::<usize>() as f64)
        .sum();
    let mut unit = vec![0.0; infos.len()];
    for tpl in &tpls {
        if let Owner::Block(j) = tpl.owner {
            if tpl.branch_only && tpl.class.is_trainable() {
                unit[j] += tpl.full_shape(cfg).iter().product::<usize>() as f64;
            }
        }
    }
    let mut starts = Vec::with_capacity(cfg.stages.len());
    let mut acc = 0;
    for s in &cfg.stages {
        starts.push(acc);
        acc += s.blocks;
    }

    let floor = target_ratio * full_total;
    let mut kept: Vec<usize> = cfg.stages.iter().map(|s| s.blocks).collect();
    let mut current = full_total;
    loop {
        let mut progress = false;
        for stage in (0..cfg.stages.len()).rev() {
            if kept[stage] <= 1 {
                continue;
            }
            let j = starts[stage] + kept[stage] - 1;
            if current - unit[j] >= floor {
                current -= unit[j];
                kept[stage] -= 1;
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }
    infos.iter().map(|i| i.pos_in_stage < kept[i.stage]).collect()
}

/// Step sizes for `mask`: 0 where masked, 1 where kept — except that with
/// `compensate`, the kept block right before each within-stage skipped run
/// starts at `run length + 1`.
fn init_steps(cfg: &ModelConfig, mask: &[bool], compensate: bool) -> Vec<f64> {
    let infos = cfg.block_infos();
    let mut steps = vec![0.0; mask.len()];
    for (j, info) in infos.iter().enumerate() {
        if !mask[j] {
            continue;
        }
        let mut run = 0usize;
        let mut next = j + 1;
        while next < mask.len() && infos[next].stage == info.stage && !mask[next] {
            run += 1;
            next += 1;
        }
        steps[j] = if compensate && run > 0 { (run + 1) as f64 } else { 1.0 };
    }
    steps
}

// ── Overrides ───────────────────────────────────────────────────────────

/// Hand-specified submodel: exact width multiplier and per-stage masks,
/// with optional explicit step sizes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmodelOverride {
    pub gamma_w: f64,
    pub stages: Vec<StageOverride>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverride {
    /// 1 = keep the block, 0 = skip it.
    pub mask: Vec<u8>,
    /// Initial step size per block; defaults to 1 for kept and 0 for
    /// skipped blocks.
    #[serde(default)]
    pub steps: Option<Vec<f64>>,
}

fn spec_from_override(
    cfg: &ModelConfig,
    index: usize,
    gamma: f64,
    ov: &SubmodelOverride,
) -> Result<SubmodelSpec> {
    if !(ov.gamma_w > 0.0 && ov.gamma_w <= 1.0) {
        return Err(NeflError::Config(format!(
            "override width multiplier {} is outside (0, 1]",
            ov.gamma_w
        )));
    }
    if ov.stages.len() != cfg.stages.len() {
        return Err(NeflError::Config(format!(
            "override has {} stages but the model has {}",
            ov.stages.len(),
            cfg.stages.len()
        )));
    }
    let mut mask = Vec::with_capacity(cfg.total_blocks());
    let mut steps = Vec::with_capacity(cfg.total_blocks());
    for (s, (stage_ov, stage_cfg)) in ov.stages.iter().zip(&cfg.stages).enumerate() {
        if stage_ov.mask.len() != stage_cfg.blocks {
            return Err(NeflError::Config(format!(
                "override stage {} mask has {} entries, stage has {} blocks",
                s,
                stage_ov.mask.len(),
                stage_cfg.blocks
            )));
        }
        if let Some(st) = &stage_ov.steps {
            if st.len() != stage_cfg.blocks {
                return Err(NeflError::Config(format!(
                    "override stage {} has {} steps for {} blocks",
                    s,
                    st.len(),
                    stage_cfg.blocks
                )));
            }
        }
        for (p, &bit) in stage_ov.mask.iter().enumerate() {
            let keep = match bit {
                0 => false,
                1 => true,
                other => {
                    return Err(NeflError::Config(format!(
                        "override stage {} mask entry {} must be 0 or 1, got {}",
                        s, p, other
                    )));
                }
            };
            let step = match &stage_ov.steps {
                Some(st) => st[p],
                None => {
                    if keep {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            if !keep && step != 0.0 {
                return Err(NeflError::Config(format!(
                    "override stage {} block {} is masked but has step {}",
                    s, p, step
                )));
            }
            mask.push(keep);
            steps.push(step);
        }
    }
    Ok(make_spec(cfg, index, gamma, ov.gamma_w, mask, steps))
}

// ── Family derivation ───────────────────────────────────────────────────

fn validate_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(NeflError::Config("at least one size ratio is required".into()));
    }
    for (i, &g) in gammas.iter().enumerate() {
        if !(g > 0.0 && g <= 1.0 + 1e-12) {
            return Err(NeflError::Config(format!("size ratio {} is outside (0, 1]", g)));
        }
        if i > 0 && g <= gammas[i - 1] {
            return Err(NeflError::Config("size ratios must be strictly increasing".into()));
        }
    }
    if (gammas[gammas.len() - 1] - 1.0).abs() > 1e-9 {
        return Err(NeflError::Config(
            "the largest submodel must be the full model (last ratio 1.0)".into(),
        ));
    }
    Ok(())
}

/// Derives the whole submodel family for `gammas` (ascending, ending at 1).
/// `overrides`, when present, is indexed like `gammas`; a `Some` entry
/// replaces the solver for that submodel.
pub fn derive_specs(
    cfg: &ModelConfig,
    policy: Policy,
    gammas: &[f64],
    overrides: Option<&[Option<SubmodelOverride>]>,
) -> Result<Vec<SubmodelSpec>> {
    cfg.validate()?;
    validate_gammas(gammas)?;
    if let Some(ovs) = overrides {
        if ovs.len() != gammas.len() {
            return Err(NeflError::Config(format!(
                "{} overrides for {} size ratios",
                ovs.len(),
                gammas.len()
            )));
        }
    }

    let blocks = cfg.total_blocks();
    let mut specs = Vec::with_capacity(gammas.len());
    for (i, &gamma) in gammas.iter().enumerate() {
        if let Some(ov) = overrides.and_then(|o| o[i].as_ref()) {
            specs.push(spec_from_override(cfg, i, gamma, ov)?);
            continue;
        }
        let spec = match policy {
            Policy::W => {
                let gw = solve_width_multiplier(cfg, gamma);
                make_spec(cfg, i, gamma, gw, vec![true; blocks], vec![1.0; blocks])
            }
            Policy::D | Policy::DO => {
                let mask = greedy_depth_mask(cfg, gamma);
                let steps = init_steps(cfg, &mask, policy == Policy::DO);
                make_spec(cfg, i, gamma, 1.0, mask, steps)
            }
            Policy::WD => {
                let axis = gamma.sqrt();
                let mask = greedy_depth_mask(cfg, axis);
                let steps = init_steps(cfg, &mask, false);
                make_spec(cfg, i, gamma, axis, mask, steps)
            }
        };
        // W/D solve for the achieved ratio directly, so a big miss means the
        // grid genuinely cannot reach the target. WD splits the budget
        // across two coarse axes by construction and is exempt.
        if matches!(policy, Policy::W | Policy::D | Policy::DO) {
            let tol = (0.25 * gamma).max(0.05);
            if (spec.achieved - gamma).abs() > tol {
                return Err(NeflError::Spec(format!(
                    "scaling policy cannot reach size ratio {:.4}: nearest achievable is {:.4}",
                    gamma, spec.achieved
                )));
            }
        }
        specs.push(spec);
    }

    for pair in specs.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.stage_widths.iter().zip(&b.stage_widths).any(|(x, y)| x > y) {
            return Err(NeflError::Config(format!(
                "submodels must be width-nested: widths {:?} (ratio {}) exceed {:?} (ratio {})",
                a.stage_widths, a.gamma, b.stage_widths, b.gamma
            )));
        }
    }
    Ok(specs)
}

// ── Which parameters are shared vs. per-submodel ────────────────────────

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamPartition {
    pub consistent: Vec<String>,
    pub inconsistent: Vec<String>,
}

/// Splits every tensor name of the model into the shared (nested-averaged)
/// set and the per-submodel set.
pub fn partition_names(cfg: &ModelConfig, bn_consistent: bool) -> ParamPartition {
    let mut part = ParamPartition { consistent: Vec::new(), inconsistent: Vec::new() };
    for tpl in templates(cfg) {
        if is_inconsistent(&tpl, bn_consistent) {
            part.inconsistent.push(tpl.name);
        } else {
            part.consistent.push(tpl.name);
        }
    }
    part
}

// ── Coordinate maps ─────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct CoordBox {
    pub full: Vec<usize>,
    /// Leading extents this submodel keeps, or `None` when the tensor is
    /// absent from it entirely.
    pub kept: Option<Vec<usize>>,
}

/// For every shared tensor: which scalar coordinates a submodel covers.
/// Coverage is always a leading sub-box (nested slicing).
#[derive(Clone, Debug)]
pub struct CoordinateMap {
    entries: IndexMap<String, CoordBox>,
}

impl CoordinateMap {
    pub fn covers(&self, name: &str, idx: &[usize]) -> bool {
        match self.entries.get(name).and_then(|e| e.kept.as_ref()) {
            Some(kept) => idx.len() == kept.len() && idx.iter().zip(kept).all(|(i, e)| i < e),
            None => false,
        }
    }

    pub fn kept_extents(&self, name: &str) -> Option<&[usize]> {
        self.entries.get(name).and_then(|e| e.kept.as_deref())
    }

    /// Total scalar coordinates covered across all shared tensors.
    pub fn count(&self) -> usize {
        self.entries
            .values()
            .filter_map(|e| e.kept.as_ref())
            .map(|k| k.iter().product::<usize>())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &CoordBox)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }
}

pub fn coordinate_map(cfg: &ModelConfig, spec: &SubmodelSpec, bn_consistent: bool) -> CoordinateMap {
    let mut entries = IndexMap::new();
    for tpl in templates(cfg) {
        if is_inconsistent(&tpl, bn_consistent) {
            continue;
        }
        let kept = tpl.in_submodel(spec).then(|| tpl.sliced_shape(spec));
        entries.insert(tpl.name.clone(), CoordBox { full: tpl.full_shape(cfg), kept });
    }
    CoordinateMap { entries }
}

// ── Moving tensors between the store and a client ───────────────────────

/// Copies the leading `target`-shaped sub-box out of `full`.
pub fn slice_prefix(full: &Tensor, target: &[usize]) -> Result<Tensor> {
    if target.len() != full.rank() || target.iter().zip(full.shape()).any(|(t, f)| t > f) {
        return Err(NeflError::Dimension(format!(
            "cannot slice {:?} out of {:?}",
            target,
            full.shape()
        )));
    }
    let mut data = Vec::with_capacity(target.iter().product());
    for_each_index(target, |_, idx| data.push(full.data()[flat_index(full.shape(), idx)]));
    Tensor::from_vec(target.to_vec(), data)
}

/// Writes `part` back over the leading sub-box of `full`.
pub fn implant_prefix(full: &mut Tensor, part: &Tensor) -> Result<()> {
    if part.rank() != full.rank() || part.shape().iter().zip(full.shape()).any(|(p, f)| p > f) {
        return Err(NeflError::Dimension(format!(
            "cannot implant {:?} into {:?}",
            part.shape(),
            full.shape()
        )));
    }
    let full_shape = full.shape().to_vec();
    let dst = full.data_mut();
    for_each_index(part.shape(), |part_flat, idx| {
        dst[flat_index(&full_shape, idx)] = part.data()[part_flat];
    });
    Ok(())
}

/// What the server sends a client: sliced shared tensors the submodel uses,
/// plus the submodel's own inconsistent set.
pub fn extract_submodel(store: &ParameterStore, spec: &SubmodelSpec) -> Result<SubmodelWeights> {
    let mut consistent = IndexMap::new();
    for tpl in templates(&store.config) {
        if is_inconsistent(&tpl, store.bn_consistent) || !tpl.in_submodel(spec) {
            continue;
        }
        let full = store
            .consistent
            .get(&tpl.name)
            .ok_or_else(|| NeflError::Contract(format!("store is missing '{}'", tpl.name)))?;
        consistent.insert(tpl.name.clone(), slice_prefix(full, &tpl.sliced_shape(spec))?);
    }
    let inconsistent = store
        .inconsistent
        .get(spec.index)
        .ok_or_else(|| {
            NeflError::Contract(format!("store has no inconsistent set {}", spec.index))
        })?
        .clone();
    Ok(SubmodelWeights { consistent, inconsistent })
}

/// Writes a client's weights back into the store: shared tensors overwrite
/// their sub-boxes, the inconsistent set is replaced wholesale.
pub fn implant_submodel(
    store: &mut ParameterStore,
    spec: &SubmodelSpec,
    weights: &SubmodelWeights,
) -> Result<()> {
    for (name, part) in &weights.consistent {
        let full = store
            .consistent
            .get_mut(name)
            .ok_or_else(|| NeflError::Contract(format!("store is missing '{}'", name)))?;
        implant_prefix(full, part)?;
    }
    let slot = store.inconsistent.get_mut(spec.index).ok_or_else(|| {
        NeflError::Contract(format!("store has no inconsistent set {}", spec.index))
    })?;
    for (name, t) in &weights.inconsistent {
        match slot.get(name) {
            Some(existing) if existing.shape() == t.shape() => {}
            Some(_) => {
                return Err(NeflError::Contract(format!(
                    "inconsistent tensor '{}' changed shape",
                    name
                )));
            }
            None => {
                return Err(NeflError::Contract(format!(
                    "unexpected inconsistent tensor '{}'",
                    name
                )));
            }
        }
    }
    if slot.len() != weights.inconsistent.len() {
        return Err(NeflError::Contract("inconsistent set is missing tensors".into()));
    }
    *slot = weights.inconsistent.clone();
    Ok(())
}
