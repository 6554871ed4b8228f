use std::time::Instant;

use sha2::{Digest, Sha256};

use super::checkpoint::Metadata;
use super::metrics::MetricRow;
use super::model::{LinearHead, Model};
use super::sgd::Sgd;
use crate::analysis::predictions;
use crate::augment::{single_views, view_pairs, AugmentationPolicy, Stage};
use crate::data::{batches, patch_batch, BatchMode, Image, ImageDataset, LabeledExample, Split};
use crate::encoder::{ViTConfig, ViTEncoder};
use crate::losses::{cross_entropy, ContrastiveBatch, LossKind, ProjectionHead, PROJECTION_PREFIX};
use crate::numerics::domain;
use crate::{Error, Graph, ParamStore, Result, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    /// Stage 1: encoder and projection head under a contrastive loss.
    Contrastive,
    /// Stage 2: linear head on the frozen stage-1 encoder.
    Head,
    /// Single-stage cross-entropy fine-tuning of encoder and head.
    CeBaseline,
}

impl TrainStage {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainStage::Contrastive => "contrastive",
            TrainStage::Head => "head",
            TrainStage::CeBaseline => "ce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(TrainStage::Contrastive),
            "head" => Ok(TrainStage::Head),
            "ce" | "ce_baseline" => Ok(TrainStage::CeBaseline),
            other => Err(Error::config(format!(
                "unknown stage {other:?} (expected contrastive, head or ce)"
            ))),
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            TrainStage::Contrastive => 1,
            TrainStage::Head => 2,
            TrainStage::CeBaseline => 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub stage: TrainStage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Cosine-anneal the learning rate per epoch instead of keeping it constant.
    pub cosine_decay: bool,
    pub tau: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// L2-normalize projections before the softmax losses.
    pub normalize_embeddings: bool,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub encoder: ViTConfig,
    pub augmentation: AugmentationPolicy,
    /// Threads used for augmentation.
    pub workers: usize,
    /// Images per forward pass during evaluation.
    pub eval_chunk: usize,
    pub config_hash: String,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        TrainConfig {
            stage: TrainStage::Contrastive,
            epochs: 60,
            batch_size: 64,
            // the contrastive loss is summed over all 2B anchors, so its gradient is ~2B times a mean loss's
            learning_rate: 0.001,
            weight_decay: 1e-4,
            momentum: 0.9,
            cosine_decay: false,
            tau: 0.1,
            seed: 0,
            loss_kind: LossKind::SupCon,
            normalize_embeddings: true,
            projection_hidden: 64,
            projection_dim: 128,
            encoder: ViTConfig::default(),
            augmentation: AugmentationPolicy::stage_one(),
            workers: 1,
            eval_chunk: 64,
            config_hash: String::new(),
        }
    }

    pub fn stage2() -> Self {
        TrainConfig {
            stage: TrainStage::Head,
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.01,
            augmentation: AugmentationPolicy::stage_two(),
            ..Self::stage1()
        }
    }

    pub fn ce_baseline() -> Self {
        TrainConfig {
            stage: TrainStage::CeBaseline,
            ..Self::stage2()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::config("tau must be > 0"));
        }
        if self.batch_size == 0 || (self.stage == TrainStage::Contrastive && self.batch_size < 2) {
            return Err(Error::config(format!(
                "batch_size {} too small for stage {}",
                self.batch_size,
                self.stage.as_str()
            )));
        }
        if self.projection_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::config("projection widths must be positive"));
        }
        if self.workers == 0 || self.eval_chunk == 0 {
            return Err(Error::config("workers and eval_chunk must be positive"));
        }
        let want = match self.stage {
            TrainStage::Contrastive => Stage::One,
            _ => Stage::Two,
        };
        if self.augmentation.stage != want {
            return Err(Error::config(format!(
                "stage {} needs a stage-{} augmentation policy",
                self.stage.as_str(),
                if want == Stage::One { "one" } else { "two" }
            )));
        }
        self.augmentation.validate()?;
        self.encoder.validate()
    }

    /// Learning rate for 0-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if !self.cosine_decay || self.epochs == 0 {
            return self.learning_rate;
        }
        let t = epoch as f64 / self.epochs as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
    }

    fn normalized(&self) -> bool {
        self.normalize_embeddings && self.loss_kind.uses_normalized_embeddings()
    }
}

/// A trained model with its log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<MetricRow>,
    /// SHA-256 over every augmented view fed to the model, in order.
    pub view_digest: String,
    pub steps: usize,
}

fn check_dataset(cfg: &TrainConfig, encoder: &ViTConfig, data: &ImageDataset) -> Result<()> {
    if data.image_size() != encoder.image_size {
        return Err(Error::config(format!(
            "{} images are {}x{}, encoder expects {}",
            data.split.as_str(),
            data.image_size(),
            data.image_size(),
            encoder.image_size
        )));
    }
    if cfg.stage == TrainStage::Contrastive && data.len() < 2 {
        return Err(Error::config("contrastive training needs at least two images"));
    }
    Ok(())
}

fn base_metadata(cfg: &TrainConfig, num_classes: usize, epoch: usize) -> Metadata {
    let mut m = Metadata::new();
    m.set("stage", cfg.stage.as_str());
    m.set("epoch", epoch);
    m.set("config_hash", &cfg.config_hash);
    m.set("num_classes", num_classes);
    m.set("seed", cfg.seed);
    m
}

fn hash_views<'a>(hasher: &mut Sha256, views: impl IntoIterator<Item = &'a Image>) {
    let mut buf = Vec::new();
    for v in views {
        buf.clear();
        buf.extend(v.pixels().iter().flat_map(|x| x.to_le_bytes()));
        hasher.update(&buf);
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn check_finite(value: f64, epoch: usize, batch: usize, kind: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            epoch,
            batch,
            loss_kind: kind.to_string(),
            value,
        })
    }
}

fn items<'a>(data: &'a ImageDataset, indices: &[usize]) -> Vec<(usize, &'a LabeledExample)> {
    indices.iter().map(|&i| (i, data.get(i))).collect()
}

/// Stage 1: trains a freshly initialized encoder and projection head with
/// the configured contrastive loss on two augmented views per image.
pub fn train_stage1(cfg: &TrainConfig, train: &ImageDataset) -> Result<TrainOutcome> {
    if cfg.stage != TrainStage::Contrastive {
        return Err(Error::config("train_stage1 needs stage = contrastive"));
    }
    cfg.validate()?;
    check_dataset(cfg, &cfg.encoder, train)?;
    let root = RngStream::new(cfg.seed, 0);
    let mut store = ParamStore::new();
    let encoder = ViTEncoder::init(&cfg.encoder, &mut store, &mut root.fork(domain::INIT))?;
    let projection = ProjectionHead::init(
        &mut store,
        cfg.encoder.embed_dim,
        cfg.projection_hidden,
        cfg.projection_dim,
        &mut root.fork(domain::INIT).fork(1),
    )?;
    let model = Model {
        store,
        encoder,
        projection: Some(projection),
        head: None,
        metadata: Metadata::new(),
    };
    stage1_epochs(cfg, model, 0, train)
}

/// Continues stage 1 from a stage-1 checkpoint up to `cfg.epochs` total
/// epochs. Shuffles and augmentations follow the uninterrupted schedule;
/// optimizer momentum restarts from zero.
pub fn resume_stage1(cfg: &TrainConfig, model: Model, train: &ImageDataset) -> Result<TrainOutcome> {
    if cfg.stage != TrainStage::Contrastive {
        return Err(Error::config("resume_stage1 needs stage = contrastive"));
    }
    cfg.validate()?;
    if model.metadata.get("stage") != Some(TrainStage::Contrastive.as_str()) || model.projection.is_none() {
        return Err(Error::config("only a contrastive-stage checkpoint can be resumed"));
    }
    if model.config() != &cfg.encoder {
        return Err(Error::config(
            "checkpoint encoder geometry differs from the configuration",
        ));
    }
    let done: usize = model.metadata.parse_required("epoch")?;
    if done > cfg.epochs {
        return Err(Error::config(format!(
            "checkpoint already has {done} epochs, more than the configured {}",
            cfg.epochs
        )));
    }
    check_dataset(cfg, &cfg.encoder, train)?;
    let mut model = model;
    ViTEncoder::unfreeze(&mut model.store);
    stage1_epochs(cfg, model, done, train)
}

fn stage1_epochs(
    cfg: &TrainConfig,
    mut model: Model,
    first_epoch: usize,
    train: &ImageDataset,
) -> Result<TrainOutcome> {
    let root = RngStream::new(cfg.seed, 0);
    let tag = cfg.stage.stream_tag();
    let shuffle_base = root.fork(domain::SHUFFLE).fork(tag);
    let augment_base = root.fork(domain::AUGMENT).fork(tag);
    let normalize = cfg.normalized();
    let kind = cfg.loss_kind.as_str();
    let mut opt = Sgd::new(&model.store, cfg.learning_rate, cfg.weight_decay, cfg.momentum);
    let mut digest = Sha256::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let start = Instant::now();

    for epoch in first_epoch..cfg.epochs {
        opt.learning_rate = cfg.learning_rate_at(epoch);
        let mut shuffle = shuffle_base.fork(epoch as u64);
        let augment = augment_base.fork(epoch as u64);
        let (mut loss_sum, mut anchors) = (0.0, 0usize);
        for (bi, batch) in batches(train, cfg.batch_size, &mut shuffle, BatchMode::Contrastive)?
            .iter()
            .enumerate()
        {
            if cfg.loss_kind == LossKind::NPair && batch.len() < 2 {
                // a lone trailing image has no negatives
                log::debug!("stage 1 epoch {}: skipping single-image batch {bi}", epoch + 1);
                continue;
            }
            let pairs = view_pairs(&items(train, &batch.indices), &cfg.augmentation, &augment, cfg.workers)?;
            let views: Vec<&Image> = pairs.iter().flat_map(|p| [&p.view_a, &p.view_b]).collect();
            hash_views(&mut digest, views.iter().copied());

            let mut g = Graph::new();
            let x = g.constant(patch_batch(views.iter().copied(), cfg.encoder.patch_size)?);
            let h = model.encoder.forward(&mut g, &model.store, x)?.h;
            let proj = model.projection.as_ref().expect("stage 1 has a projection head");
            let z = if normalize {
                proj.project(&mut g, &model.store, h)?
            } else {
                proj.project_raw(&mut g, &model.store, h)?
            };
            let cb = ContrastiveBatch::from_pairs(g.value(z).clone(), &batch.labels, normalize)?;
            let out = cfg.loss_kind.evaluate(&cb, cfg.tau)?;
            check_finite(out.value.total, epoch + 1, bi, kind)?;
            loss_sum += out.value.total;
            anchors += out.value.per_anchor.len();

            let loss = g.inject_scalar(z, out.value.total, out.grad)?;
            g.backward(loss, &mut model.store)?;
            opt.step(&mut model.store);
            steps += 1;
        }
        let row = MetricRow {
            epoch: epoch + 1,
            split: Split::Train,
            loss: loss_sum / anchors as f64,
            accuracy: None,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("stage 1 epoch {}: {kind} loss {:.6}", row.epoch, row.loss);
        metrics.push(row);
    }

    model.metadata = base_metadata(cfg, train.num_classes(), cfg.epochs);
    model.metadata.set("loss.kind", kind);
    model.metadata.set("loss.tau", cfg.tau);
    model.metadata.set("projection.normalize", normalize);
    Ok(TrainOutcome {
        model,
        metrics,
        view_digest: hex(&digest.finalize()),
        steps,
    })
}

/// Stage 2: drops the projection head, freezes the encoder and fits a new
/// linear head with cross-entropy on single augmented views.
pub fn train_stage2(
    cfg: &TrainConfig,
    stage1: &Model,
    train: &ImageDataset,
    validation: Option<&ImageDataset>,
) -> Result<TrainOutcome> {
    if cfg.stage != TrainStage::Head {
        return Err(Error::config("train_stage2 needs stage = head"));
    }
    cfg.validate()?;
    if let Some(k) = stage1.metadata.get("num_classes") {
        if k != train.num_classes().to_string() {
            return Err(Error::config(format!(
                "stage-1 checkpoint was trained on {k} classes, dataset has {}",
                train.num_classes()
            )));
        }
    }
    let enc_cfg = stage1.config().clone();
    check_dataset(cfg, &enc_cfg, train)?;
    if let Some(v) = validation {
        check_dataset(cfg, &enc_cfg, v)?;
    }

    let root = RngStream::new(cfg.seed, 0);
    let mut store = stage1.store.without_prefix(PROJECTION_PREFIX);
    let encoder = ViTEncoder::bind(&enc_cfg, &store)?;
    ViTEncoder::freeze(&mut store);
    let head = LinearHead::init(
        &mut store,
        enc_cfg.embed_dim,
        train.num_classes(),
        &mut root.fork(domain::INIT).fork(2),
    )?;
    let mut model = Model {
        store,
        encoder,
        projection: None,
        head: Some(head),
        metadata: Metadata::new(),
    };
    let (metrics, view_digest, steps) = fit_classifier(cfg, &mut model, train, validation)?;
    ViTEncoder::unfreeze(&mut model.store);
    model.metadata = base_metadata(cfg, train.num_classes(), cfg.epochs);
    if let Some(h) = stage1.metadata.get("config_hash") {
        model.metadata.set("stage1.config_hash", h);
    }
    Ok(TrainOutcome {
        model,
        metrics,
        view_digest,
        steps,
    })
}

/// Cross-entropy comparator: encoder and linear head trained jointly from
/// the same initialization stage 1 would use.
pub fn train_ce_baseline(
    cfg: &TrainConfig,
    train: &ImageDataset,
    validation: Option<&ImageDataset>,
) -> Result<TrainOutcome> {
    if cfg.stage != TrainStage::CeBaseline {
        return Err(Error::config("train_ce_baseline needs stage = ce"));
    }
    cfg.validate()?;
    check_dataset(cfg, &cfg.encoder, train)?;
    if let Some(v) = validation {
        check_dataset(cfg, &cfg.encoder, v)?;
    }
    let root = RngStream::new(cfg.seed, 0);
    let mut store = ParamStore::new();
    let encoder = ViTEncoder::init(&cfg.encoder, &mut store, &mut root.fork(domain::INIT))?;
    let head = LinearHead::init(
        &mut store,
        cfg.encoder.embed_dim,
        train.num_classes(),
        &mut root.fork(domain::INIT).fork(2),
    )?;
    let mut model = Model {
        store,
        encoder,
        projection: None,
        head: Some(head),
        metadata: Metadata::new(),
    };
    let (metrics, view_digest, steps) = fit_classifier(cfg, &mut model, train, validation)?;
    model.metadata = base_metadata(cfg, train.num_classes(), cfg.epochs);
    Ok(TrainOutcome {
        model,
        metrics,
        view_digest,
        steps,
    })
}

/// Cross-entropy loop shared by the head stage and the baseline; frozen
/// parameters stay fixed.
fn fit_classifier(
    cfg: &TrainConfig,
    model: &mut Model,
    train: &ImageDataset,
    validation: Option<&ImageDataset>,
) -> Result<(Vec<MetricRow>, String, usize)> {
    let root = RngStream::new(cfg.seed, 0);
    let tag = cfg.stage.stream_tag();
    let shuffle_base = root.fork(domain::SHUFFLE).fork(tag);
    let augment_base = root.fork(domain::AUGMENT).fork(tag);
    let mut opt = Sgd::new(&model.store, cfg.learning_rate, cfg.weight_decay, cfg.momentum);
    let mut digest = Sha256::new();
    let mut metrics = Vec::new();
    let mut steps = 0;
    let start = Instant::now();
    let head = model.head.clone().expect("classifier has a head");

    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.learning_rate_at(epoch);
        let mut shuffle = shuffle_base.fork(epoch as u64);
        let augment = augment_base.fork(epoch as u64);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, batch) in batches(train, cfg.batch_size, &mut shuffle, BatchMode::Supervised)?
            .iter()
            .enumerate()
        {
            let views = single_views(&items(train, &batch.indices), &cfg.augmentation, &augment, cfg.workers)?;
            hash_views(&mut digest, &views);

            let mut g = Graph::new();
            let x = g.constant(patch_batch(&views, model.config().patch_size)?);
            let h = model.encoder.forward(&mut g, &model.store, x)?.h;
            let logits = head.forward(&mut g, &model.store, h)?;
            let out = cross_entropy(g.value(logits), &batch.labels)?;
            check_finite(out.value.total, epoch + 1, bi, "cross_entropy")?;
            loss_sum += out.value.total * batch.len() as f64;
            correct += predictions(g.value(logits))
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();

            let loss = g.inject_scalar(logits, out.value.total, out.grad)?;
            g.backward(loss, &mut model.store)?;
            opt.step(&mut model.store);
            steps += 1;
        }
        let n = train.len() as f64;
        let row = MetricRow {
            epoch: epoch + 1,
            split: Split::Train,
            loss: loss_sum / n,
            accuracy: Some(correct as f64 / n),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {}: train loss {:.6} acc {:.4}",
            cfg.stage.as_str(),
            row.epoch,
            row.loss,
            row.accuracy.unwrap_or(0.0)
        );
        metrics.push(row);
        if let Some(v) = validation {
            let (loss, acc) = evaluate(model, v, cfg.eval_chunk)?;
            log::info!(
                "{} epoch {}: validation loss {loss:.6} acc {acc:.4}",
                cfg.stage.as_str(),
                epoch + 1
            );
            metrics.push(MetricRow {
                epoch: epoch + 1,
                split: Split::Validation,
                loss,
                accuracy: Some(acc),
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok((metrics, hex(&digest.finalize()), steps))
}

/// Mean cross-entropy and top-1 accuracy on un-augmented images.
pub fn evaluate(model: &Model, data: &ImageDataset, chunk: usize) -> Result<(f64, f64)> {
    let images: Vec<&Image> = data.examples().iter().map(|e| &e.pixels).collect();
    let logits = model.logits(&images, chunk)?;
    let labels = data.labels();
    if logits.cols() != data.num_classes() {
        return Err(Error::config(format!(
            "model predicts {} classes, dataset has {}",
            logits.cols(),
            data.num_classes()
        )));
    }
    let loss = cross_entropy(&logits, &labels)?.value.total;
    Ok((loss, crate::analysis::accuracy_top1(&logits, &labels)?))
}
