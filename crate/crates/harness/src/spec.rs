//! Serializable experiment specification.

use std::path::Path;

use nfe_core::fission::FissionPlan;
use nfe_core::model::{BackboneConfig, BackboneKind};
use nfe_core::pai::PaiConfig;
use nfe_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Cifar10,
    Cifar100,
    /// Gaussian class prototypes; needs no files.
    Synthetic,
}

impl DatasetName {
    pub fn num_classes(self, synthetic_classes: usize) -> usize {
        match self {
            DatasetName::Cifar10 => 10,
            DatasetName::Cifar100 => 100,
            DatasetName::Synthetic => synthetic_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: DatasetName,
    /// Seed of the subsampling draw and of synthetic data; fixed per spec so
    /// every run and baseline sees the same samples.
    pub seed: u64,
    /// Stratified fraction of the training split kept.
    pub subsample: f64,
    /// Stratified fraction of the test split kept.
    pub test_subsample: f64,
    pub synthetic_classes: usize,
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,
    pub synthetic_image_size: usize,
    pub synthetic_noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            name: DatasetName::Cifar10,
            seed: 0,
            subsample: 1.0,
            test_subsample: 1.0,
            synthetic_classes: 4,
            synthetic_train_per_class: 32,
            synthetic_test_per_class: 16,
            synthetic_image_size: 8,
            synthetic_noise: 1.0,
        }
    }
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        self.name.num_classes(self.synthetic_classes)
    }

    pub fn image_size(&self) -> usize {
        match self.name {
            DatasetName::Synthetic => self.synthetic_image_size,
            _ => 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// Base width (ResNets), widening factor (wide ResNet) or hidden units (MLP).
    pub width: usize,
    pub blocks_per_stage: usize,
    pub num_stages: usize,
    /// Wide-ResNet depth (`6n + 4`); overrides `blocks_per_stage` when set.
    pub depth: Option<usize>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            kind: BackboneKind::SmallResnet,
            width: 16,
            blocks_per_stage: 1,
            num_stages: 4,
            depth: None,
        }
    }
}

impl BackboneSpec {
    pub fn resolve(&self, dataset: &DatasetSpec) -> Result<BackboneConfig> {
        let classes = dataset.num_classes();
        let mut cfg = match (self.kind, self.depth) {
            (BackboneKind::WideResnetLike, Some(depth)) => BackboneConfig::wide_resnet(depth, self.width, classes)?,
            (_, Some(_)) => return Err(HarnessError::Spec("depth only applies to wide-resnet-like".into())),
            (kind, None) => BackboneConfig {
                kind,
                in_channels: 3,
                input_size: 32,
                num_classes: classes,
                width: self.width,
                blocks_per_stage: self.blocks_per_stage,
                num_stages: self.num_stages,
            },
        };
        cfg.input_size = dataset.image_size();
        if cfg.kind == BackboneKind::Mlp {
            // the dense stack consumes flattened images
            cfg.in_channels = 3 * cfg.input_size * cfg.input_size;
            cfg.input_size = 1;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSpec {
    pub exits: usize,
    /// Explicit group counts per stage; default counts down from `exits`.
    pub groups_per_stage: Option<Vec<usize>>,
    /// Two-exit variant name such as `Res1**4`.
    pub variant: Option<String>,
    /// Ratios for every stage split into `ratios.len()` groups.
    pub ratios: Option<Vec<f64>>,
}

impl Default for PlanSpec {
    fn default() -> Self {
        PlanSpec {
            exits: 2,
            groups_per_stage: None,
            variant: None,
            ratios: None,
        }
    }
}

impl PlanSpec {
    pub fn resolve(&self, num_stages: usize) -> Result<FissionPlan> {
        let plan = match (&self.variant, &self.groups_per_stage) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::Spec("give either a variant or groups_per_stage".into()))
            }
            (Some(v), None) => FissionPlan::from_variant(v)?,
            (None, Some(g)) => FissionPlan::new(self.exits, g.clone(), None)?,
            (None, None) => FissionPlan::default_plan(self.exits, num_stages)?,
        };
        if plan.num_stages() != num_stages {
            return Err(HarnessError::Spec(format!(
                "plan has {} stages, backbone has {num_stages}",
                plan.num_stages()
            )));
        }
        if plan.num_exits() != self.exits && self.variant.is_none() {
            return Err(HarnessError::Spec("plan exit count mismatch".into()));
        }
        Ok(match &self.ratios {
            Some(r) => plan.with_uniform_split(r)?,
            None => plan,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub backbone: BackboneSpec,
    pub dataset: DatasetSpec,
    pub plan: PlanSpec,
    pub pai: PaiConfig,
    pub train: TrainConfig,
    /// Independent runs with seeds `train.seed, train.seed + 1, ...`.
    pub repeats: usize,
    pub eval_batch_size: usize,
}

impl Default for ExperimentSpec {
    /// Desk-scale defaults: small 4-stage ResNet at width 16, 20% of the
    /// training split, 30 epochs with the half-then-linear schedule. Not the
    /// full-scale protocol.
    fn default() -> Self {
        ExperimentSpec {
            name: "nfe".into(),
            backbone: BackboneSpec::default(),
            dataset: DatasetSpec {
                subsample: 0.2,
                ..DatasetSpec::default()
            },
            plan: PlanSpec::default(),
            pai: PaiConfig::default(),
            train: TrainConfig {
                epochs: 30,
                lr_schedule: nfe_core::train::LrSchedule::HalfThenLinear,
                ..TrainConfig::default()
            },
            repeats: 3,
            eval_batch_size: 256,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn backbone_config(&self) -> Result<BackboneConfig> {
        self.backbone.resolve(&self.dataset)
    }

    pub fn fission_plan(&self) -> Result<FissionPlan> {
        self.plan.resolve(self.backbone_config()?.num_stages)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.eval_batch_size == 0 {
            return Err(HarnessError::Spec("repeats and eval_batch_size must be positive".into()));
        }
        let cfg = self.backbone_config()?;
        nfe_core::model::Architecture::from_config(&cfg)?;
        self.fission_plan()?;
        self.pai.validate()?;
        self.train.validate()?;
        for f in [self.dataset.subsample, self.dataset.test_subsample] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(HarnessError::Spec(format!("subsample fraction {f} not in (0, 1]")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, first 12 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))[..12].to_string()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.train.seed + r).collect()
    }
}
