//! Evaluation and result files.
//!
//! Three artifacts per run, all with deterministic bytes for a given
//! experiment state:
//!
//! * `metrics.csv` — one row per round per submodel: accuracy, loss, lr.
//! * `summary.json` — the submodel family with parameter/compute counts and
//!   final metrics.
//! * `diagnostics.csv` — per submodel and block: the current step size and
//!   the mean absolute weight, for inspecting how the residual branches are
//!   being used.

use crate::error::{io_err, NeflError, Result};
use crate::data::Dataset;
use crate::model::{self, templates, ModelConfig, Owner, ParamClass, ParameterStore};
use crate::scaling::{extract_submodel, SubmodelSpec};
use crate::tape::{Mode, Tape};
use serde::Serialize;
use std::io::Write as _;
use std::path::Path;

/// How many test examples go through one evaluation forward pass.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub struct SubmodelRoundMetrics {
    /// 1-based submodel number.
    pub k: usize,
    pub top1: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct RoundReport {
    pub round: usize,
    pub lr: f64,
    pub sampled: Vec<u32>,
    /// (client, 0-based submodel) for every sampled client.
    pub assignments: Vec<(u32, usize)>,
    /// Mean final-epoch training loss across this round's clients.
    pub mean_local_loss: Option<f64>,
    pub per_submodel: Vec<SubmodelRoundMetrics>,
    pub worst_top1: f64,
    pub mean_top1: f64,
}

/// Top-1 accuracy and mean cross-entropy of one submodel on `data`, in eval
/// mode (batch-norm uses running statistics; no parameter updates).
pub fn evaluate_model(
    store: &ParameterStore,
    spec: &SubmodelSpec,
    data: &Dataset,
) -> Result<(f64, f64)> {
    if data.len() == 0 {
        return Err(NeflError::Contract("cannot evaluate on an empty dataset".into()));
    }
    let mut weights = extract_submodel(store, spec)?;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (batch, labels) = data.gather(chunk)?;
        let mut tape = Tape::new();
        let pass = model::forward(
            &mut tape,
            &store.config,
            spec,
            &mut weights,
            &batch,
            Mode::Eval,
            false,
        )?;
        let logits = tape.value(pass.logits);
        let classes = logits.shape()[1];
        for (row, &label) in labels.iter().enumerate() {
            let scores = &logits.data()[row * classes..(row + 1) * classes];
            let mut best = 0usize;
            for (c, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        let loss_id = tape.softmax_xent(pass.logits, &labels)?;
        loss_sum += tape.value(loss_id).item()? * chunk.len() as f64;
    }
    Ok((correct as f64 / data.len() as f64, loss_sum / data.len() as f64))
}

pub fn evaluate_all(
    store: &ParameterStore,
    specs: &[SubmodelSpec],
    data: &Dataset,
) -> Result<Vec<SubmodelRoundMetrics>> {
    specs
        .iter()
        .map(|spec| {
            let (top1, loss) = evaluate_model(store, spec, data)?;
            Ok(SubmodelRoundMetrics { k: spec.index + 1, top1, loss })
        })
        .collect()
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

/// `round,k,top1,loss,lr` — one row per round per submodel. The header is
/// written even for zero rounds.
pub fn write_metrics_csv(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut out = create(path)?;
    let w = |e| io_err(path, e);
    writeln!(out, "round,k,top1,loss,lr").map_err(w)?;
    for report in reports {
        for m in &report.per_submodel {
            writeln!(out, "{},{},{},{},{}", report.round, m.k, m.top1, m.loss, report.lr)
                .map_err(w)?;
        }
    }
    out.flush().map_err(w)
}

#[derive(Serialize)]
struct SummarySubmodel {
    k: usize,
    ratio: f64,
    width_multiplier: f64,
    depth_fraction: f64,
    achieved_ratio: f64,
    params: usize,
    flops: usize,
    final_top1: Option<f64>,
    final_loss: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    rounds: usize,
    final_worst_top1: Option<f64>,
    final_mean_top1: Option<f64>,
    submodels: Vec<SummarySubmodel>,
}

pub fn write_summary_json(
    path: &Path,
    cfg: &ModelConfig,
    specs: &[SubmodelSpec],
    reports: &[RoundReport],
) -> Result<()> {
    let last = reports.last();
    let summary = Summary {
        rounds: reports.len(),
        final_worst_top1: last.map(|r| r.worst_top1),
        final_mean_top1: last.map(|r| r.mean_top1),
        submodels: specs
            .iter()
            .map(|spec| {
                let final_metrics =
                    last.and_then(|r| r.per_submodel.iter().find(|m| m.k == spec.index + 1));
                SummarySubmodel {
                    k: spec.index + 1,
                    ratio: spec.gamma,
                    width_multiplier: spec.gamma_w,
                    depth_fraction: spec.gamma_d,
                    achieved_ratio: spec.achieved,
                    params: model::count_params(cfg, spec),
                    flops: model::count_flops(cfg, spec),
                    final_top1: final_metrics.map(|m| m.top1),
                    final_loss: final_metrics.map(|m| m.loss),
                }
            })
            .collect(),
    };
    let mut out = create(path)?;
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| NeflError::Parse(format!("summary: {}", e)))?;
    writeln!(out, "{}", text).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

/// `k,block,step_size,mean_abs_weight` — the current step size of every
/// block of every submodel (0 where masked) and the mean |w| over the
/// block's weight tensors as the submodel sees them (0 for skipped blocks
/// with no weights of their own).
pub fn write_diagnostics_csv(
    path: &Path,
    store: &ParameterStore,
    specs: &[SubmodelSpec],
) -> Result<()> {
    let mut out = create(path)?;
    let w = |e| io_err(path, e);
    writeln!(out, "k,block,step_size,mean_abs_weight").map_err(w)?;
    let tpls = templates(&store.config);
    for spec in specs {
        let weights = extract_submodel(store, spec)?;
        for j in 0..store.config.total_blocks() {
            let step = weights
                .inconsistent
                .get(&format!("block{}.step", j))
                .or_else(|| weights.consistent.get(&format!("block{}.step", j)))
                .and_then(|t| t.item().ok())
                .unwrap_or(0.0);
            let mut abs_sum = 0.0;
            let mut n = 0usize;
            for tpl in &tpls {
                if tpl.owner != Owner::Block(j)
                    || tpl.class != ParamClass::Weight
                    || !tpl.in_submodel(spec)
                {
                    continue;
                }
                if let Some(t) = weights.consistent.get(&tpl.name) {
                    abs_sum += t.data().iter().map(|v| v.abs()).sum::<f64>();
                    n += t.len();
                }
            }
            let mean_abs = if n > 0 { abs_sum / n as f64 } else { 0.0 };
            writeln!(out, "{},{},{},{}", spec.index + 1, j, step, mean_abs).map_err(w)?;
        }
    }
    out.flush().map_err(w)
}
