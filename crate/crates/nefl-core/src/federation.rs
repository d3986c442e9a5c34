//! The federated training loop.
//!
//! Each round the server samples a fraction of the clients, assigns every
//! sampled client a submodel its capability tier can run, ships the sliced
//! weights out, trains locally for a few epochs of SGD, and aggregates what
//! comes back (nested averaging for shared tensors, per-submodel averaging
//! for the rest).
//!
//! Everything random is drawn from streams keyed by (seed, purpose, round,
//! client), so results are identical regardless of how many worker threads
//! run the clients.

use crate::aggregate::{self, Upload};
use crate::config::ExperimentConfig;
use crate::data::{self, SplitDataset};
use crate::error::{NeflError, Result};
use crate::model::{self, build_model, ModelConfig, ParameterStore, SubmodelWeights};
use crate::report::{evaluate_all, RoundReport};
use crate::rng::{self, Purpose};
use crate::scaling::{extract_submodel, SubmodelSpec};
use crate::tape::{self, Mode, Tape};
use rayon::prelude::*;

/// Fully resolved federation schedule.
#[derive(Clone, Debug)]
pub struct FederationPlan {
    pub rounds: usize,
    pub clients: usize,
    pub fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_points: Vec<f64>,
    /// 0-based submodel indices each tier may run.
    pub tiers: Vec<Vec<usize>>,
    pub seed: u64,
    pub learnable_steps: bool,
}

/// Step-decay schedule: the rate drops 10x at each configured fraction of
/// the run.
pub fn lr_at(plan: &FederationPlan, round: usize) -> f64 {
    let total = plan.rounds as f64;
    let drops = plan
        .decay_points
        .iter()
        .filter(|&&p| round as f64 >= p * total)
        .count();
    plan.lr0 * 0.1f64.powi(drops as i32)
}

/// The clients participating in `round`, sorted ascending. The count is
/// `ceil(fraction * clients)`.
pub fn sample_clients(plan: &FederationPlan, round: usize) -> Vec<u32> {
    let want = ((plan.fraction * plan.clients as f64).ceil() as usize).clamp(1, plan.clients);
    let mut r = rng::stream(plan.seed, Purpose::ClientSample, round as u64, 0);
    rng::sample_without_replacement(&mut r, plan.clients, want)
        .into_iter()
        .map(|c| c as u32)
        .collect()
}

/// Clients are split into equal tiers in id order; the remainder joins the
/// last tier.
pub fn tier_of(plan: &FederationPlan, client: u32) -> usize {
    let per = (plan.clients / plan.tiers.len()).max(1);
    ((client as usize) / per).min(plan.tiers.len() - 1)
}

/// Uniform draw from the client's tier, on a per-(round, client) stream.
pub fn assign_submodel(plan: &FederationPlan, round: usize, client: u32) -> usize {
    let allowed = &plan.tiers[tier_of(plan, client)];
    let mut r = rng::stream(plan.seed, Purpose::SubmodelAssign, round as u64, u64::from(client));
    allowed[rand::Rng::gen_range(&mut r, 0..allowed.len())]
}

#[derive(Clone, Copy, Debug)]
pub struct LocalHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub learnable_steps: bool,
    pub seed: u64,
    pub round: usize,
    pub client: u32,
}

#[derive(Debug)]
pub struct LocalOutcome {
    pub weights: SubmodelWeights,
    /// Mean training loss over the final epoch's batches; `None` when no
    /// batch ran (zero epochs, or a shard too small to form a batch).
    pub mean_loss: Option<f64>,
    /// Batches run in the final epoch.
    pub batches: usize,
}

/// Local SGD on one client's shard. Batches of one are dropped (batch norm
/// cannot normalize them); image batches get crop/flip augmentation. A
/// non-finite loss or weight aborts with a divergence error naming the
/// round and client.
pub fn local_train(
    cfg: &ModelConfig,
    spec: &SubmodelSpec,
    mut weights: SubmodelWeights,
    train: &data::Dataset,
    shard: &[usize],
    hp: &LocalHyper,
) -> Result<LocalOutcome> {
    let mut r = rng::stream(hp.seed, Purpose::LocalTrain, hp.round as u64, u64::from(hp.client));
    let mut order: Vec<usize> = shard.to_vec();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;

    for _epoch in 0..hp.epochs {
        rng::shuffle(&mut r, &mut order);
        loss_sum = 0.0;
        batches = 0;
        for chunk in order.chunks(hp.batch_size) {
            if chunk.len() < 2 {
                continue; // leftover singleton: batch norm has no statistics
            }
            let (raw, labels) = train.gather(chunk)?;
            let batch = data::augment(&raw, train.kind, Mode::Train, &mut r)?;
            let mut tape = Tape::new();
            let pass = model::forward(
                &mut tape,
                cfg,
                spec,
                &mut weights,
                &batch,
                Mode::Train,
                hp.learnable_steps,
            )?;
            let loss_id = tape.softmax_xent(pass.logits, &labels)?;
            let loss = tape.value(loss_id).item()?;
            if !loss.is_finite() {
                return Err(NeflError::Divergence {
                    round: hp.round,
                    client: hp.client,
                    msg: format!("training loss became {}", loss),
                });
            }
            let grads = tape.backward(loss_id)?;
            for (name, node) in &pass.params {
                if let Some(g) = grads.get(*node) {
                    let mut value = weights.get(name)?.clone();
                    tape::sgd_step(&mut value, g, hp.lr)?;
                    weights.set(name, value)?;
                }
            }
            loss_sum += loss;
            batches += 1;
        }
    }

    weights.ensure_finite().map_err(|e| NeflError::Divergence {
        round: hp.round,
        client: hp.client,
        msg: e.to_string(),
    })?;
    let mean_loss = (batches > 0).then(|| loss_sum / batches as f64);
    Ok(LocalOutcome { weights, mean_loss, batches })
}

/// A full experiment: model family, schedule, data shards, and the running
/// parameter store.
pub struct Experiment {
    pub model: ModelConfig,
    pub plan: FederationPlan,
    pub specs: Vec<SubmodelSpec>,
    pub store: ParameterStore,
    pub data: SplitDataset,
    pub shards: Vec<Vec<usize>>,
    /// How many client updates each submodel has received so far.
    pub trained_counts: Vec<usize>,
}

impl Experiment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Experiment> {
        cfg.validate()?;
        let specs = cfg.derive_specs()?;
        let tiers = cfg.tier_table(specs.len())?;
        let fed = &cfg.federation;
        let plan = FederationPlan {
            rounds: fed.rounds,
            clients: fed.clients,
            fraction: fed.fraction,
            local_epochs: fed.local_epochs,
            batch_size: fed.batch_size,
            lr0: fed.lr0,
            decay_points: fed.decay_points.clone(),
            tiers,
            seed: fed.seed,
            learnable_steps: cfg.scaling.learnable_step_sizes,
        };
        let store = build_model(&cfg.model, &specs, cfg.scaling.bn_consistent, fed.seed)?;

        let data = cfg.load_data()?;
        let example_len: usize = data.train.example_shape().iter().product();
        let input_len: usize = cfg.model.input_shape.iter().product();
        if example_len != input_len {
            return Err(NeflError::Config(format!(
                "dataset examples have {} values, model input {:?} needs {}",
                example_len, cfg.model.input_shape, input_len
            )));
        }
        if data.train.num_classes != cfg.model.num_classes {
            return Err(NeflError::Config(format!(
                "dataset has {} classes, model head has {}",
                data.train.num_classes, cfg.model.num_classes
            )));
        }
        let shards = cfg.partition(&data.train)?;

        let n = specs.len();
        Ok(Experiment {
            model: cfg.model.clone(),
            plan,
            specs,
            store,
            data,
            shards,
            trained_counts: vec![0; n],
        })
    }

    /// One round: sample, assign, train in parallel, aggregate, evaluate.
    pub fn run_round(&mut self, round: usize) -> Result<RoundReport> {
        let lr = lr_at(&self.plan, round);
        let sampled = sample_clients(&self.plan, round);
        let assignments: Vec<(u32, usize)> = sampled
            .iter()
            .map(|&c| (c, assign_submodel(&self.plan, round, c)))
            .collect();

        let outcomes: Result<Vec<(Upload, Option<f64>)>> = assignments
            .par_iter()
            .map(|&(client, k)| {
                let spec = &self.specs[k];
                let weights = extract_submodel(&self.store, spec)?;
                let hp = LocalHyper {
                    epochs: self.plan.local_epochs,
                    batch_size: self.plan.batch_size,
                    lr,
                    learnable_steps: self.plan.learnable_steps,
                    seed: self.plan.seed,
                    round,
                    client,
                };
                let shard = self.shards.get(client as usize).ok_or_else(|| {
                    NeflError::Contract(format!("no shard for client {}", client))
                })?;
                let outcome =
                    local_train(&self.model, spec, weights, &self.data.train, shard, &hp)?;
                Ok((
                    Upload { client_id: client, submodel: k, weights: outcome.weights },
                    outcome.mean_loss,
                ))
            })
            .collect();
        let outcomes = outcomes?;

        let uploads: Vec<Upload> = outcomes.iter().map(|(u, _)| u.clone()).collect();
        let local_losses: Vec<f64> = outcomes.iter().filter_map(|(_, l)| *l).collect();
        aggregate::aggregate_round(&mut self.store, &self.specs, &uploads)?;
        for &(_, k) in &assignments {
            self.trained_counts[k] += 1;
        }

        let per_submodel = evaluate_all(&self.store, &self.specs, &self.data.test)?;
        let worst = per_submodel.iter().map(|m| m.top1).fold(f64::INFINITY, f64::min);
        let mean = per_submodel.iter().map(|m| m.top1).sum::<f64>() / per_submodel.len() as f64;
        Ok(RoundReport {
            round,
            lr,
            sampled,
            assignments,
            mean_local_loss: (!local_losses.is_empty())
                .then(|| local_losses.iter().sum::<f64>() / local_losses.len() as f64),
            per_submodel,
            worst_top1: worst,
            mean_top1: mean,
        })
    }

    pub fn run(&mut self) -> Result<Vec<RoundReport>> {
        (0..self.plan.rounds).map(|round| self.run_round(round)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;
    use crate::data::gen_synthetic;
    use crate::model::{BlockKind, StageConfig};
    use crate::scaling::{derive_specs, full_spec, Policy};
    use crate::tensor::Tensor;

    fn plan(rounds: usize, clients: usize, fraction: f64) -> FederationPlan {
        FederationPlan {
            rounds,
            clients,
            fraction,
            local_epochs: 1,
            batch_size: 8,
            lr0: 0.1,
            decay_points: vec![0.5, 0.75],
            tiers: vec![vec![0]],
            seed: 11,
            learnable_steps: true,
        }
    }

    #[test]
    fn lr_schedule_matches_worked_examples() {
        let p = plan(4, 10, 1.0);
        let lrs: Vec<f64> = (0..4).map(|r| lr_at(&p, r)).collect();
        assert_eq!(lrs, vec![0.1, 0.1, 0.010000000000000002, 0.0010000000000000002]);

        let p = plan(500, 10, 1.0);
        assert!((lr_at(&p, 249) - 0.1).abs() < 1e-15);
        assert!((lr_at(&p, 250) - 0.01).abs() < 1e-15);
        assert!((lr_at(&p, 374) - 0.01).abs() < 1e-15);
        assert!((lr_at(&p, 375) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_sized_by_fraction() {
        let p = plan(10, 20, 0.25);
        let a = sample_clients(&p, 3);
        let b = sample_clients(&p, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] < w[1]), "sorted distinct ids");
        assert_ne!(sample_clients(&p, 4), a, "different rounds draw differently");

        let everyone = sample_clients(&plan(10, 7, 1.0), 0);
        assert_eq!(everyone, (0..7).collect::<Vec<u32>>());

        let tiny = sample_clients(&plan(10, 20, 0.01), 0);
        assert_eq!(tiny.len(), 1, "fraction rounds up to at least one client");
    }

    #[test]
    fn tiers_partition_clients_and_gate_assignments() {
        let mut p = plan(10, 10, 1.0);
        p.tiers = vec![vec![0, 1], vec![2], vec![3, 4]];
        // 10 clients across 3 tiers: 3,3,4 (remainder joins the last)
        assert_eq!(tier_of(&p, 0), 0);
        assert_eq!(tier_of(&p, 2), 0);
        assert_eq!(tier_of(&p, 3), 1);
        assert_eq!(tier_of(&p, 5), 1);
        assert_eq!(tier_of(&p, 6), 2);
        assert_eq!(tier_of(&p, 9), 2);

        let mut seen = std::collections::BTreeSet::new();
        for round in 0..60 {
            for client in [0u32, 3, 6] {
                let k = assign_submodel(&p, round, client);
                assert!(
                    p.tiers[tier_of(&p, client)].contains(&k),
                    "client {} got {} outside its tier",
                    client,
                    k
                );
                seen.insert((tier_of(&p, client), k));
            }
        }
        // over 60 rounds every allowed option shows up
        assert_eq!(seen.len(), 5, "all tier options should occur: {:?}", seen);
    }

    fn tiny_mlp() -> (ModelConfig, Vec<SubmodelSpec>) {
        let cfg = ModelConfig {
            kind: BlockKind::Mlp,
            stages: vec![StageConfig { blocks: 1, width: 8 }],
            input_shape: vec![4],
            num_classes: 2,
        };
        let specs = vec![full_spec(&cfg, 0)];
        (cfg, specs)
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bitwise_unchanged() {
        let (cfg, specs) = tiny_mlp();
        let store = build_model(&cfg, &specs, false, 3).unwrap();
        let data = gen_synthetic(2, 24, 4, 4.0, 9).unwrap();
        let before = extract_submodel(&store, &specs[0]).unwrap();
        let hp = LocalHyper {
            epochs: 2,
            batch_size: 8,
            lr: 0.0,
            learnable_steps: true,
            seed: 1,
            round: 0,
            client: 0,
        };
        let shard: Vec<usize> = (0..data.train.len()).collect();
        let out =
            local_train(&cfg, &specs[0], before.clone(), &data.train, &shard, &hp).unwrap();
        for (name, t) in &out.weights.consistent {
            assert_eq!(t.data(), before.consistent[name].data(), "{}", name);
        }
        // steps unchanged too; running stats DO move (they're state, not SGD)
        assert_eq!(
            out.weights.inconsistent["block0.step"].data(),
            before.inconsistent["block0.step"].data()
        );
        assert!(out.mean_loss.is_some());
        assert!(out.batches > 0);
    }

    #[test]
    fn singleton_remainder_batches_are_dropped() {
        let (cfg, specs) = tiny_mlp();
        let store = build_model(&cfg, &specs, false, 3).unwrap();
        let data = gen_synthetic(2, 24, 4, 4.0, 9).unwrap();
        let weights = extract_submodel(&store, &specs[0]).unwrap();
        let hp = LocalHyper {
            epochs: 1,
            batch_size: 4,
            lr: 0.05,
            learnable_steps: true,
            seed: 1,
            round: 0,
            client: 0,
        };
        let shard: Vec<usize> = (0..9).collect(); // chunks of 4,4,1 — the 1 is dropped
        let out = local_train(&cfg, &specs[0], weights, &data.train, &shard, &hp).unwrap();
        assert_eq!(out.batches, 2);

        let lone: Vec<usize> = vec![0]; // a shard that can't form any batch
        let weights = extract_submodel(&store, &specs[0]).unwrap();
        let out = local_train(&cfg, &specs[0], weights, &data.train, &lone, &hp).unwrap();
        assert_eq!(out.batches, 0);
        assert!(out.mean_loss.is_none());
    }

    #[test]
    fn local_training_fits_a_separable_shard() {
        let (cfg, specs) = tiny_mlp();
        let store = build_model(&cfg, &specs, false, 5).unwrap();
        let data = gen_synthetic(2, 60, 4, 6.0, 21).unwrap();
        let weights = extract_submodel(&store, &specs[0]).unwrap();
        let hp = LocalHyper {
            epochs: 25,
            batch_size: 16,
            lr: 0.2,
            learnable_steps: true,
            seed: 2,
            round: 0,
            client: 0,
        };
        let shard: Vec<usize> = (0..data.train.len()).collect();
        let out = local_train(&cfg, &specs[0], weights, &data.train, &shard, &hp).unwrap();
        let loss = out.mean_loss.unwrap();
        assert!(loss < 0.2, "final-epoch loss {} should be small", loss);

        // the trained weights classify the shard correctly
        let mut store2 = store.clone();
        crate::scaling::implant_submodel(&mut store2, &specs[0], &out.weights).unwrap();
        let (top1, _) = crate::report::evaluate_model(&store2, &specs[0], &data.train).unwrap();
        assert!(top1 > 0.9, "train accuracy {} after fitting", top1);
    }

    #[test]
    fn poisoned_weights_surface_as_divergence_with_location() {
        let (cfg, specs) = tiny_mlp();
        let store = build_model(&cfg, &specs, false, 3).unwrap();
        let data = gen_synthetic(2, 24, 4, 4.0, 9).unwrap();
        let mut weights = extract_submodel(&store, &specs[0]).unwrap();
        weights.consistent["stem.affine.w"] = {
            let mut t = Tensor::zeros(&[4, 8]);
            t.data_mut()[0] = f64::NAN;
            t
        };
        let hp = LocalHyper {
            epochs: 1,
            batch_size: 8,
            lr: 0.1,
            learnable_steps: true,
            seed: 1,
            round: 7,
            client: 3,
        };
        let shard: Vec<usize> = (0..data.train.len()).collect();
        let err = local_train(&cfg, &specs[0], weights, &data.train, &shard, &hp).unwrap_err();
        match err {
            NeflError::Divergence { round, client, .. } => {
                assert_eq!(round, 7);
                assert_eq!(client, 3);
            }
            other => panic!("expected a divergence error, got {}", other),
        }
    }

    #[test]
    fn a_round_trains_aggregates_and_counts() {
        let json = r#"{
            "model": {
                "kind": "mlp",
                "stages": [{"blocks": 2, "width": 8}],
                "input_shape": [4],
                "num_classes": 3
            },
            "scaling": {"ratios": [0.5, 1.0]},
            "federation": {
                "rounds": 2, "clients": 4, "fraction": 1.0,
                "local_epochs": 1, "batch_size": 4, "lr0": 0.05, "seed": 3
            },
            "dataset": {
                "source": {"kind": "synthetic", "classes": 3, "per_class": 24,
                           "dim": 4, "margin": 5.0}
            }
        }"#;
        let cfg = parse_config_str(json).unwrap();
        let mut exp = Experiment::from_config(&cfg).unwrap();
        let before = exp.store.clone();
        let report = exp.run_round(0).unwrap();

        assert_eq!(report.sampled, vec![0, 1, 2, 3]);
        assert_eq!(report.assignments.len(), 4);
        assert_eq!(report.per_submodel.len(), 2);
        assert_eq!(exp.trained_counts.iter().sum::<usize>(), 4);
        assert!(report.mean_local_loss.unwrap().is_finite());
        assert!(report.worst_top1 <= report.mean_top1);
        assert_ne!(
            exp.store.consistent["head.w"].data(),
            before.consistent["head.w"].data(),
            "aggregation must move the shared weights"
        );
    }

    #[test]
    fn rounds_are_reproducible_for_a_seed() {
        let cfg = ModelConfig {
            kind: BlockKind::Mlp,
            stages: vec![StageConfig { blocks: 2, width: 8 }],
            input_shape: vec![4],
            num_classes: 3,
        };
        let specs = derive_specs(&cfg, Policy::WD, &[0.5, 1.0], None).unwrap();
        let data = gen_synthetic(3, 24, 4, 5.0, 9).unwrap();
        let shards = data::partition_iid(&data.train, 4, 3).unwrap();
        let mk = || Experiment {
            model: cfg.clone(),
            plan: FederationPlan {
                rounds: 2,
                clients: 4,
                fraction: 1.0,
                local_epochs: 1,
                batch_size: 4,
                lr0: 0.05,
                decay_points: vec![0.5, 0.75],
                tiers: vec![vec![0, 1]],
                seed: 3,
                learnable_steps: true,
            },
            specs: specs.clone(),
            store: build_model(&cfg, &specs, false, 3).unwrap(),
            data: data.clone(),
            shards: shards.clone(),
            trained_counts: vec![0; 2],
        };
        let mut a = mk();
        let mut b = mk();
        a.run().unwrap();
        b.run().unwrap();
        for (name, t) in &a.store.consistent {
            assert_eq!(t.data(), b.store.consistent[name].data(), "{}", name);
        }
        for k in 0..2 {
            for (name, t) in &a.store.inconsistent[k] {
                assert_eq!(t.data(), b.store.inconsistent[k][name].data(), "{} [{}]", name, k);
            }
        }
    }
}
