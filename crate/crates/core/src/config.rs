//! Run configuration: a flat `section.key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! one of [`KEYS`]; values are type-checked when set. Later assignments
//! (including command-line overrides) replace earlier ones.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::augment::{AugmentationPolicy, Stage};
use crate::data::{Split, SyntheticSpec};
use crate::encoder::{Pooling, ViTConfig};
use crate::losses::LossKind;
use crate::pipeline::{TrainConfig, TrainStage};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    Int,
    Float,
    Bool,
    /// Free text; may be empty.
    Text,
}

/// Every accepted key with its type and default.
pub const KEYS: &[(&str, ValueKind, &str)] = &[
    ("run.seed", ValueKind::Int, "0"),
    ("run.workers", ValueKind::Int, "1"),
    ("data.train", ValueKind::Text, ""),
    ("data.validation", ValueKind::Text, ""),
    ("data.num_classes", ValueKind::Int, "4"),
    ("data.image_size", ValueKind::Int, "32"),
    ("synthetic.train_per_class", ValueKind::Int, "100"),
    ("synthetic.validation_per_class", ValueKind::Int, "50"),
    ("synthetic.noise_sigma", ValueKind::Float, "0.1"),
    ("model.patch_size", ValueKind::Int, "4"),
    ("model.embed_dim", ValueKind::Int, "64"),
    ("model.depth", ValueKind::Int, "4"),
    ("model.heads", ValueKind::Int, "4"),
    ("model.mlp_ratio", ValueKind::Int, "2"),
    ("model.pooling", ValueKind::Text, "mean"),
    ("projection.hidden", ValueKind::Int, "64"),
    ("projection.dim", ValueKind::Int, "128"),
    ("projection.normalize", ValueKind::Bool, "true"),
    ("loss.kind", ValueKind::Text, "supcon"),
    ("loss.tau", ValueKind::Float, "0.1"),
    ("stage1.epochs", ValueKind::Int, "60"),
    ("stage1.batch_size", ValueKind::Int, "64"),
    ("stage1.learning_rate", ValueKind::Float, "0.001"),
    ("stage1.weight_decay", ValueKind::Float, "0.0001"),
    ("stage1.momentum", ValueKind::Float, "0.9"),
    ("stage1.cosine_decay", ValueKind::Bool, "false"),
    ("stage2.epochs", ValueKind::Int, "30"),
    ("stage2.batch_size", ValueKind::Int, "128"),
    ("stage2.learning_rate", ValueKind::Float, "0.01"),
    ("stage2.weight_decay", ValueKind::Float, "0.0001"),
    ("stage2.momentum", ValueKind::Float, "0.9"),
    ("stage2.cosine_decay", ValueKind::Bool, "false"),
    ("ce.epochs", ValueKind::Int, "60"),
    ("ce.batch_size", ValueKind::Int, "64"),
    ("ce.learning_rate", ValueKind::Float, "0.01"),
    ("ce.weight_decay", ValueKind::Float, "0.0001"),
    ("ce.momentum", ValueKind::Float, "0.9"),
    ("ce.cosine_decay", ValueKind::Bool, "false"),
    ("augment1.crop_scale_min", ValueKind::Float, "0.4"),
    ("augment1.crop_scale_max", ValueKind::Float, "1.0"),
    ("augment1.crop_ratio_min", ValueKind::Float, "0.75"),
    ("augment1.crop_ratio_max", ValueKind::Float, "1.3333333333333333"),
    ("augment1.rotation_deg", ValueKind::Float, "30"),
    ("augment1.hflip_probability", ValueKind::Float, "0.5"),
    ("augment1.jitter_strength", ValueKind::Float, "0.8"),
    ("augment1.grayscale_probability", ValueKind::Float, "0.2"),
    ("augment1.blur_probability", ValueKind::Float, "0.5"),
    ("augment1.blur_sigma_min", ValueKind::Float, "0.1"),
    ("augment1.blur_sigma_max", ValueKind::Float, "2.0"),
    ("augment2.crop_scale_min", ValueKind::Float, "0.4"),
    ("augment2.crop_scale_max", ValueKind::Float, "1.0"),
    ("augment2.crop_ratio_min", ValueKind::Float, "0.75"),
    ("augment2.crop_ratio_max", ValueKind::Float, "1.3333333333333333"),
    ("augment2.rotation_deg", ValueKind::Float, "30"),
    ("augment2.hflip_probability", ValueKind::Float, "0.5"),
    ("output.dir", ValueKind::Text, "runs/default"),
    ("output.wall_clock", ValueKind::Bool, "false"),
    ("eval.chunk", ValueKind::Int, "64"),
];

fn kind_of(key: &str) -> Option<ValueKind> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|&(_, kind, _)| kind)
}

fn check_value(key: &str, kind: ValueKind, value: &str) -> Result<()> {
    let ok = match kind {
        ValueKind::Int => value.parse::<u64>().is_ok(),
        ValueKind::Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        ValueKind::Bool => matches!(value, "true" | "false"),
        ValueKind::Text => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::config(format!("{key} = {value:?} is not a valid {kind:?}")))
    }
}

const UNHASHED_KEYS: [&str; 2] = ["output.dir", "run.workers"];

/// Fully resolved key/value configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|&(k, _, v)| (k, v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults overridden by the assignments in `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `section.key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (&k, _) = self
            .values
            .get_key_value(key)
            .ok_or_else(|| Error::config(format!("unknown key {key:?}")))?;
        check_value(key, kind_of(key).expect("listed key"), value)?;
        self.values.insert(k, value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("{key} is not a configuration key"))
    }

    fn int(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated on set")
    }

    fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on set")
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn seed(&self) -> u64 {
        self.get("run.seed").parse().expect("validated on set")
    }

    pub fn workers(&self) -> usize {
        self.int("run.workers")
    }

    pub fn num_classes(&self) -> usize {
        self.int("data.num_classes")
    }

    pub fn image_size(&self) -> usize {
        self.int("data.image_size")
    }

    pub fn train_path(&self) -> Option<PathBuf> {
        self.path("data.train")
    }

    pub fn validation_path(&self) -> Option<PathBuf> {
        self.path("data.validation")
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.get("output.dir"))
    }

    pub fn wall_clock(&self) -> bool {
        self.flag("output.wall_clock")
    }

    pub fn eval_chunk(&self) -> usize {
        self.int("eval.chunk")
    }

    pub fn synthetic_spec(&self, split: Split) -> SyntheticSpec {
        let per_class = match split {
            Split::Train => self.int("synthetic.train_per_class"),
            Split::Validation => self.int("synthetic.validation_per_class"),
        };
        SyntheticSpec {
            num_classes: self.num_classes(),
            per_class,
            size: self.image_size(),
            noise_sigma: self.float("synthetic.noise_sigma"),
            seed: self.seed(),
        }
    }

    pub fn vit_config(&self) -> Result<ViTConfig> {
        let cfg = ViTConfig {
            image_size: self.image_size(),
            patch_size: self.int("model.patch_size"),
            embed_dim: self.int("model.embed_dim"),
            depth: self.int("model.depth"),
            heads: self.int("model.heads"),
            mlp_ratio: self.int("model.mlp_ratio"),
            pooling: Pooling::parse(self.get("model.pooling"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn augmentation(&self, stage: Stage) -> Result<AugmentationPolicy> {
        let p = match stage {
            Stage::One => {
                let r = self.float("augment1.rotation_deg");
                AugmentationPolicy {
                    stage,
                    crop_scale_range: (
                        self.float("augment1.crop_scale_min"),
                        self.float("augment1.crop_scale_max"),
                    ),
                    crop_ratio_range: (
                        self.float("augment1.crop_ratio_min"),
                        self.float("augment1.crop_ratio_max"),
                    ),
                    rotation_range_deg: (-r, r),
                    hflip_probability: self.float("augment1.hflip_probability"),
                    color_jitter_strength: self.float("augment1.jitter_strength"),
                    grayscale_probability: self.float("augment1.grayscale_probability"),
                    blur_probability: self.float("augment1.blur_probability"),
                    blur_sigma_range: (
                        self.float("augment1.blur_sigma_min"),
                        self.float("augment1.blur_sigma_max"),
                    ),
                }
            }
            Stage::Two => {
                let r = self.float("augment2.rotation_deg");
                AugmentationPolicy {
                    crop_scale_range: (
                        self.float("augment2.crop_scale_min"),
                        self.float("augment2.crop_scale_max"),
                    ),
                    crop_ratio_range: (
                        self.float("augment2.crop_ratio_min"),
                        self.float("augment2.crop_ratio_max"),
                    ),
                    rotation_range_deg: (-r, r),
                    hflip_probability: self.float("augment2.hflip_probability"),
                    ..AugmentationPolicy::stage_two()
                }
            }
        };
        p.validate()?;
        Ok(p)
    }

    /// Trainer settings for `stage`, stamped with this configuration's hash.
    pub fn train_config(&self, stage: TrainStage) -> Result<TrainConfig> {
        let section = match stage {
            TrainStage::Contrastive => "stage1",
            TrainStage::Head => "stage2",
            TrainStage::CeBaseline => "ce",
        };
        let key = |k: &str| format!("{section}.{k}");
        let augment_stage = match stage {
            TrainStage::Contrastive => Stage::One,
            _ => Stage::Two,
        };
        let cfg = TrainConfig {
            stage,
            epochs: self.int(&key("epochs")),
            batch_size: self.int(&key("batch_size")),
            learning_rate: self.float(&key("learning_rate")),
            weight_decay: self.float(&key("weight_decay")),
            momentum: self.float(&key("momentum")),
            cosine_decay: self.flag(&key("cosine_decay")),
            tau: self.float("loss.tau"),
            seed: self.seed(),
            loss_kind: LossKind::parse(self.get("loss.kind"))?,
            normalize_embeddings: self.flag("projection.normalize"),
            projection_hidden: self.int("projection.hidden"),
            projection_dim: self.int("projection.dim"),
            encoder: self.vit_config()?,
            augmentation: self.augmentation(augment_stage)?,
            workers: self.workers(),
            eval_chunk: self.eval_chunk(),
            config_hash: self.hash(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key, sorted, one `key = value` per line.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 over every key that can change a result. The output
    /// directory and worker count are left out so that identical runs written
    /// to different places produce identical checkpoints.
    pub fn hash(&self) -> String {
        let text: String = self
            .values
            .iter()
            .filter(|(k, _)| !UNHASHED_KEYS.contains(k))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
