//! Experiment configuration: a JSON file describing the model, the submodel
//! family, the federation schedule, and the dataset.
//!
//! Unknown keys are rejected everywhere so typos fail loudly instead of
//! silently falling back to defaults.

use crate::data::{self, Dataset, SplitDataset};
use crate::error::{io_err, NeflError, Result};
use crate::model::ModelConfig;
use crate::scaling::{self, Policy, SubmodelOverride, SubmodelSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub federation: FederationSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub policy: Policy,
    /// Target size ratios, ascending, ending at 1.0 (the full model).
    pub ratios: Vec<f64>,
    /// Optional hand-specified submodels, indexed like `ratios`.
    pub overrides: Option<Vec<Option<SubmodelOverride>>>,
    /// When false, step sizes stay frozen at their initial values.
    pub learnable_step_sizes: bool,
    /// When true, batch-norm tensors are shared and nested-averaged instead
    /// of kept per submodel.
    pub bn_consistent: bool,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection {
            policy: Policy::WD,
            ratios: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            overrides: None,
            learnable_step_sizes: true,
            bn_consistent: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub rounds: usize,
    pub clients: usize,
    /// Fraction of clients sampled each round (count is rounded up).
    pub fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Fractions of the run after which the learning rate drops 10x.
    pub decay_points: Vec<f64>,
    /// Capability tiers: each entry lists the 1-based submodels a tier may
    /// be assigned. Clients are split evenly across tiers in id order.
    /// Defaults to a five-tier band structure for five submodels, otherwise
    /// to a single tier that can run everything.
    pub tiers: Option<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            rounds: 100,
            clients: 100,
            fraction: 0.1,
            local_epochs: 5,
            batch_size: 32,
            lr0: 0.1,
            decay_points: vec![0.5, 0.75],
            tiers: None,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DataSource,
    #[serde(default)]
    pub partition: Partition,
}

fn default_data_seed() -> u64 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs with a guaranteed margin between class centers.
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        margin: f64,
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    /// Big-endian IDX image/label file pairs.
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
    /// A directory of CIFAR-10 binary batches.
    CifarBinary { dir: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Partition {
    Iid,
    Dirichlet { alpha: f64 },
}

impl Default for Partition {
    fn default() -> Self {
        Partition::Iid
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "nefl-out".into() }
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| NeflError::Parse(format!("config: {}", e)))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_config_str(&text)
}

impl ExperimentConfig {
    /// Resolves the submodel family (also validating the scaling section).
    pub fn derive_specs(&self) -> Result<Vec<SubmodelSpec>> {
        scaling::derive_specs(
            &self.model,
            self.scaling.policy,
            &self.scaling.ratios,
            self.scaling.overrides.as_deref(),
        )
    }

    /// The tier table as 0-based submodel indices.
    pub fn tier_table(&self, n_submodels: usize) -> Result<Vec<Vec<usize>>> {
        let one_based: Vec<Vec<usize>> = match &self.federation.tiers {
            Some(t) => t.clone(),
            None if n_submodels == 5 => vec![
                vec![1, 2, 3],
                vec![1, 2, 3, 4],
                vec![1, 2, 3, 4, 5],
                vec![2, 3, 4, 5],
                vec![3, 4, 5],
            ],
            None => vec![(1..=n_submodels).collect()],
        };
        if one_based.is_empty() {
            return Err(NeflError::Config("tier table must have at least one tier".into()));
        }
        let mut tiers = Vec::with_capacity(one_based.len());
        for (t, tier) in one_based.iter().enumerate() {
            if tier.is_empty() {
                return Err(NeflError::Config(format!("tier {} allows no submodels", t)));
            }
            let mut resolved = Vec::with_capacity(tier.len());
            for &k in tier {
                if k == 0 || k > n_submodels {
                    return Err(NeflError::Config(format!(
                        "tier {} names submodel {} of {}",
                        t, k, n_submodels
                    )));
                }
                resolved.push(k - 1);
            }
            tiers.push(resolved);
        }
        Ok(tiers)
    }

    /// Static cross-field validation (no dataset loading).
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let specs = self.derive_specs()?;
        let tiers = self.tier_table(specs.len())?;

        let fed = &self.federation;
        if fed.clients == 0 {
            return Err(NeflError::Config("clients must be at least 1".into()));
        }
        if !(fed.fraction > 0.0 && fed.fraction <= 1.0) {
            return Err(NeflError::Config(format!(
                "client fraction {} is outside (0, 1]",
                fed.fraction
            )));
        }
        if fed.local_epochs == 0 {
            return Err(NeflError::Config("local_epochs must be at least 1".into()));
        }
        if fed.batch_size < 2 {
            return Err(NeflError::Config(
                "batch_size must be at least 2 (batch norm needs batch statistics)".into(),
            ));
        }
        if !(fed.lr0 > 0.0 && fed.lr0.is_finite()) {
            return Err(NeflError::Config(format!("lr0 {} must be positive", fed.lr0)));
        }
        for (i, &p) in fed.decay_points.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(NeflError::Config(format!("decay point {} is outside (0, 1]", p)));
            }
            if i > 0 && p <= fed.decay_points[i - 1] {
                return Err(NeflError::Config("decay points must be strictly increasing".into()));
            }
        }
        if tiers.len() > fed.clients {
            return Err(NeflError::Config(format!(
                "{} tiers for {} clients",
                tiers.len(),
                fed.clients
            )));
        }

        let input_len: usize = self.model.input_shape.iter().product();
        match &self.dataset.source {
            DataSource::Synthetic { classes, dim, .. } => {
                if *dim != input_len {
                    return Err(NeflError::Config(format!(
                        "synthetic dim {} does not match model input {:?}",
                        dim, self.model.input_shape
                    )));
                }
                if *classes != self.model.num_classes {
                    return Err(NeflError::Config(format!(
                        "dataset has {} classes, model head has {}",
                        classes, self.model.num_classes
                    )));
                }
            }
            DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if !Path::new(p).exists() {
                        return Err(NeflError::Config(format!("dataset file '{}' not found", p)));
                    }
                }
            }
            DataSource::CifarBinary { dir } => {
                if !Path::new(dir).is_dir() {
                    return Err(NeflError::Config(format!(
                        "dataset directory '{}' not found",
                        dir
                    )));
                }
                if input_len != 3 * 32 * 32 {
                    return Err(NeflError::Config(format!(
                        "CIFAR images are [3,32,32]; model input is {:?}",
                        self.model.input_shape
                    )));
                }
            }
        }
        if let Partition::Dirichlet { alpha } = self.dataset.partition {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(NeflError::Config(format!(
                    "dirichlet alpha {} must be positive",
                    alpha
                )));
            }
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<SplitDataset> {
        match &self.dataset.source {
            DataSource::Synthetic { classes, per_class, dim, margin, seed } => {
                data::gen_synthetic(*classes, *per_class, *dim, *margin, *seed)
            }
            DataSource::Idx { train_images, train_labels, test_images, test_labels } => {
                let train = data::load_idx(Path::new(train_images), Path::new(train_labels))?;
                let test = data::load_idx(Path::new(test_images), Path::new(test_labels))?;
                Ok(SplitDataset { train, test })
            }
            DataSource::CifarBinary { dir } => data::load_cifar_binary(Path::new(dir)),
        }
    }

    /// Splits the training set into one shard of example indices per client.
    pub fn partition(&self, train: &Dataset) -> Result<Vec<Vec<usize>>> {
        let m = self.federation.clients;
        let seed = self.federation.seed;
        match self.dataset.partition {
            Partition::Iid => data::partition_iid(train, m, seed),
            Partition::Dirichlet { alpha } => data::partition_dirichlet(train, m, alpha, seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "model": {
                "kind": "mlp",
                "stages": [{"blocks": 4, "width": 32}],
                "input_shape": [16],
                "num_classes": 10
            },
            "dataset": {
                "source": {"kind": "synthetic", "classes": 10, "per_class": 12,
                           "dim": 16, "margin": 6.0}
            }
        }"#
        .to_string()
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = parse_config_str(&minimal_json()).unwrap();
        assert_eq!(cfg.federation.rounds, 100);
        assert_eq!(cfg.federation.local_epochs, 5);
        assert_eq!(cfg.federation.batch_size, 32);
        assert!((cfg.federation.fraction - 0.1).abs() < 1e-12);
        assert!((cfg.federation.lr0 - 0.1).abs() < 1e-12);
        assert_eq!(cfg.scaling.policy, Policy::WD);
        assert_eq!(cfg.scaling.ratios, vec![0.2, 0.4, 0.6, 0.8, 1.0]);
        assert!(cfg.scaling.learnable_step_sizes);
        assert!(!cfg.scaling.bn_consistent);
        assert_eq!(cfg.output.dir, "nefl-out");
        assert!(matches!(cfg.dataset.partition, Partition::Iid));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_name() {
        let bad = minimal_json().replace("\"num_classes\": 10", "\"num_classes\": 10, \"depth\": 3");
        let err = parse_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("depth"), "message: {}", err);

        let bad_top = minimal_json().replacen('{', "{\"extra\": 1,", 1);
        assert!(parse_config_str(&bad_top).is_err());
    }

    #[test]
    fn default_tiers_depend_on_family_size() {
        let cfg = parse_config_str(&minimal_json()).unwrap();
        let five = cfg.tier_table(5).unwrap();
        assert_eq!(
            five,
            vec![
                vec![0, 1, 2],
                vec![0, 1, 2, 3],
                vec![0, 1, 2, 3, 4],
                vec![1, 2, 3, 4],
                vec![2, 3, 4]
            ]
        );
        assert_eq!(cfg.tier_table(3).unwrap(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn explicit_tiers_are_checked_and_rebased() {
        let mut cfg = parse_config_str(&minimal_json()).unwrap();
        cfg.federation.tiers = Some(vec![vec![1, 2], vec![5]]);
        assert_eq!(cfg.tier_table(5).unwrap(), vec![vec![0, 1], vec![4]]);
        let err = cfg.tier_table(4).unwrap_err();
        assert!(err.to_string().contains('5'), "message: {}", err);
        cfg.federation.tiers = Some(vec![vec![]]);
        assert!(cfg.tier_table(5).is_err());
        cfg.federation.tiers = Some(vec![vec![0]]);
        assert!(cfg.tier_table(5).is_err(), "submodel ids are 1-based");
    }

    #[test]
    fn cross_field_validation_catches_bad_hyperparameters() {
        let base = parse_config_str(&minimal_json()).unwrap();
        let mut c = base.clone();
        c.federation.fraction = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.federation.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.federation.lr0 = -0.1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.federation.local_epochs = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.federation.decay_points = vec![0.75, 0.5];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.dataset.partition = Partition::Dirichlet { alpha: 0.0 };
        assert!(c.validate().is_err());
        let mut c = base;
        c.federation.clients = 2; // fewer clients than default 5 tiers
        assert!(c.validate().is_err());
    }

    #[test]
    fn dataset_and_model_shapes_must_agree() {
        let mut cfg = parse_config_str(&minimal_json()).unwrap();
        cfg.model.input_shape = vec![20];
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("dim"), "message: {}", err);

        let mut cfg = parse_config_str(&minimal_json()).unwrap();
        if let DataSource::Synthetic { classes, .. } = &mut cfg.dataset.source {
            *classes = 7;
        }
        assert!(cfg.validate().is_err(), "class count mismatch must fail");
    }

    #[test]
    fn missing_dataset_files_fail_validation() {
        let mut cfg = parse_config_str(&minimal_json()).unwrap();
        cfg.dataset.source = DataSource::Idx {
            train_images: "/nonexistent/train-images".into(),
            train_labels: "/nonexistent/train-labels".into(),
            test_images: "/nonexistent/test-images".into(),
            test_labels: "/nonexistent/test-labels".into(),
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("not found"), "message: {}", err);
    }

    #[test]
    fn override_sections_parse_inside_configs() {
        let json = r#"{
            "model": {
                "kind": "conv",
                "stages": [{"blocks": 2, "width": 8}, {"blocks": 2, "width": 16}],
                "input_shape": [1, 8, 8],
                "num_classes": 4
            },
            "scaling": {
                "policy": "wd",
                "ratios": [0.5, 1.0],
                "overrides": [
                    {"gamma_w": 0.7,
                     "stages": [{"mask": [1, 1]}, {"mask": [1, 0], "steps": [2.0, 0.0]}]},
                    null
                ]
            },
            "dataset": {
                "source": {"kind": "synthetic", "classes": 4, "per_class": 12,
                           "dim": 64, "margin": 6.0}
            },
            "federation": {"clients": 8}
        }"#;
        let cfg = parse_config_str(json).unwrap();
        cfg.validate().unwrap();
        let specs = cfg.derive_specs().unwrap();
        assert_eq!(specs[0].stage_widths, vec![6, 11]);
        assert_eq!(specs[0].init_step[2], 2.0);
        assert!(!specs[0].mask[3]);
    }
}
