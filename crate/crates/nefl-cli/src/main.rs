//! `nefl` — train nested submodels of one residual network across
//! simulated heterogeneous clients, from a single JSON config.

use clap::{Parser, Subcommand};
use nefl_core::aggregate::{group_by_submodel, nefedavg_consistent, oracle_average, Upload};
use nefl_core::config::{load_config, ExperimentConfig};
use nefl_core::federation::Experiment;
use nefl_core::model::{build_model, count_flops, count_params};
use nefl_core::report::{
    write_diagnostics_csv, write_metrics_csv, write_summary_json, RoundReport,
};
use nefl_core::scaling::{extract_submodel, SubmodelSpec};
use nefl_core::{NeflError, Result};
use rand::{Rng, SeedableRng};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nefl",
    version,
    about = "Nested federated learning simulator",
    long_about = "Trains width/depth-scaled submodels of a shared residual network \
                  across simulated clients and aggregates them with nested averaging."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Override the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a config file and print the submodel family it derives.
    Validate {
        /// Path to the experiment config (JSON).
        config: PathBuf,
    },
    /// Cross-check the nested aggregator against a per-coordinate oracle
    /// on randomized uploads for the configured model family.
    OracleCheck {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Number of randomized aggregation rounds to check.
        #[arg(long, default_value_t = 25)]
        trials: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Run { config, seed, out_dir } => cmd_run(&config, seed, out_dir),
        Command::Validate { config } => cmd_validate(&config),
        Command::OracleCheck { config, trials } => cmd_oracle_check(&config, trials),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_family(cfg: &ExperimentConfig, specs: &[SubmodelSpec]) {
    println!(
        "{:>2} {:>6} {:>8} {:>6} {:>6} {:>10} {:>12}  widths / kept blocks",
        "k", "ratio", "achieved", "g_w", "g_d", "params", "flops"
    );
    for spec in specs {
        let mut kept = Vec::new();
        let mut offset = 0;
        for stage in &cfg.model.stages {
            let n = spec.mask[offset..offset + stage.blocks].iter().filter(|&&m| m).count();
            kept.push(format!("{}/{}", n, stage.blocks));
            offset += stage.blocks;
        }
        println!(
            "{:>2} {:>6.2} {:>8.4} {:>6.2} {:>6.2} {:>10} {:>12}  {:?} / {}",
            spec.index + 1,
            spec.gamma,
            spec.achieved,
            spec.gamma_w,
            spec.gamma_d,
            count_params(&cfg.model, spec),
            count_flops(&cfg.model, spec),
            spec.stage_widths,
            kept.join(" "),
        );
    }
}

fn cmd_validate(path: &Path) -> Result<()> {
    let cfg = load_config(path)?;
    cfg.validate()?;
    let specs = cfg.derive_specs()?;
    let tiers = cfg.tier_table(specs.len())?;
    print_family(&cfg, &specs);
    for (t, allowed) in tiers.iter().enumerate() {
        let shown: Vec<usize> = allowed.iter().map(|k| k + 1).collect();
        println!("tier {} may train submodels {:?}", t + 1, shown);
    }
    println!("config ok: {} submodels, {} clients, {} rounds",
        specs.len(), cfg.federation.clients, cfg.federation.rounds);
    Ok(())
}

fn cmd_run(path: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.federation.seed = s;
    }
    if let Some(d) = out_dir {
        cfg.output.dir = d.display().to_string();
    }
    let mut exp = Experiment::from_config(&cfg)?;
    print_family(&cfg, &exp.specs);
    println!(
        "training: {} clients, fraction {}, {} local epochs, batch {}, seed {}",
        exp.plan.clients, exp.plan.fraction, exp.plan.local_epochs,
        exp.plan.batch_size, exp.plan.seed
    );

    let width = exp.plan.rounds.to_string().len();
    let mut reports: Vec<RoundReport> = Vec::with_capacity(exp.plan.rounds);
    for round in 0..exp.plan.rounds {
        let report = exp.run_round(round)?;
        let loss = report
            .mean_local_loss
            .map(|l| format!("{:.4}", l))
            .unwrap_or_else(|| "-".to_string());
        println!(
            "round {:>w$}/{}  lr {:<7.5}  clients {:>3}  local loss {}  top1 worst {:.4} mean {:.4}",
            round + 1,
            exp.plan.rounds,
            report.lr,
            report.sampled.len(),
            loss,
            report.worst_top1,
            report.mean_top1,
            w = width,
        );
        reports.push(report);
    }

    if let Some(last) = reports.last() {
        for m in &last.per_submodel {
            println!("submodel {}: top1 {:.4}, loss {:.4}", m.k, m.top1, m.loss);
        }
    }

    let dir = PathBuf::from(&cfg.output.dir);
    write_metrics_csv(&dir.join("metrics.csv"), &reports)?;
    write_summary_json(&dir.join("summary.json"), &cfg.model, &exp.specs, &reports)?;
    write_diagnostics_csv(&dir.join("diagnostics.csv"), &exp.store, &exp.specs)?;
    println!("wrote metrics.csv, summary.json, diagnostics.csv to {}", dir.display());
    Ok(())
}

/// Feed both aggregation routes the same randomized uploads and demand
/// bitwise-level agreement. The store is advanced with the merged result
/// between trials so staleness (idle submodels keeping old values) is
/// exercised too.
fn cmd_oracle_check(path: &Path, trials: usize) -> Result<()> {
    let cfg = load_config(path)?;
    cfg.validate()?;
    let specs = cfg.derive_specs()?;
    let mut store =
        build_model(&cfg.model, &specs, cfg.scaling.bn_consistent, cfg.federation.seed)?;

    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng =
            rand::rngs::StdRng::seed_from_u64(cfg.federation.seed ^ (trial as u64).wrapping_mul(0x9e3779b9));
        let mut uploads = Vec::new();
        let mut client = 0u32;
        for spec in &specs {
            for _ in 0..rng.gen_range(0..4usize) {
                let mut w = extract_submodel(&store, spec)?;
                for (_, t) in w.consistent.iter_mut().chain(w.inconsistent.iter_mut()) {
                    for v in t.data_mut() {
                        *v += rng.gen_range(-1.0..1.0);
                    }
                }
                uploads.push(Upload { client_id: client, submodel: spec.index, weights: w });
                client += 1;
            }
        }
        let groups = group_by_submodel(&uploads, specs.len())?;
        let (ring, _) = nefedavg_consistent(&store, &specs, &groups)?;
        let oracle = oracle_average(&store, &specs, &groups)?;
        for (name, merged) in &ring {
            let reference = &oracle[name];
            for (a, b) in merged.data().iter().zip(reference.data()) {
                worst = worst.max((a - b).abs());
            }
        }
        store.consistent = ring;
    }

    println!(
        "checked {} randomized rounds: max |nested avg - per-coordinate oracle| = {:.3e}",
        trials, worst
    );
    if worst > 1e-12 {
        return Err(NeflError::Contract(format!(
            "aggregation routes disagree by {:.3e} (tolerance 1e-12)",
            worst
        )));
    }
    Ok(())
}
