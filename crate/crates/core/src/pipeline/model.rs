use std::path::Path;

use super::checkpoint::{Checkpoint, Metadata};
use crate::data::Image;
use crate::encoder::{linear, truncated_normal, Pooling, ViTConfig, ViTEncoder};
use crate::losses::{ProjectionHead, PROJECTION_PREFIX};
use crate::{Error, Graph, ParamId, ParamStore, Result, RngStream, Tensor, Var};

pub const HEAD_PREFIX: &str = "head.";

const HEAD_INIT_STD: f64 = 0.02;

/// Linear classifier `logits = h W + b` with `W` stored `d_model x K`.
#[derive(Clone, Debug)]
pub struct LinearHead {
    weight: ParamId,
    bias: ParamId,
    pub num_classes: usize,
}

impl LinearHead {
    pub fn init(store: &mut ParamStore, d_model: usize, num_classes: usize, rng: &mut RngStream) -> Result<Self> {
        let w = (0..d_model * num_classes)
            .map(|_| truncated_normal(rng, HEAD_INIT_STD))
            .collect();
        store.add("head.weight", Tensor::new(&[d_model, num_classes], w)?)?;
        store.add("head.bias", Tensor::zeros(&[num_classes]))?;
        Self::bind(store, d_model)
    }

    pub fn bind(store: &ParamStore, d_model: usize) -> Result<Self> {
        let weight = store
            .id("head.weight")
            .ok_or_else(|| Error::config("missing parameter head.weight"))?;
        let bias = store
            .id("head.bias")
            .ok_or_else(|| Error::config("missing parameter head.bias"))?;
        let (d, k) = store.get(weight).value.dims2()?;
        if d != d_model || store.get(bias).value.shape() != [k] {
            return Err(Error::config(format!(
                "linear head shapes {:?}/{:?} do not fit d_model {d_model}",
                store.get(weight).value.shape(),
                store.get(bias).value.shape()
            )));
        }
        Ok(LinearHead {
            weight,
            bias,
            num_classes: k,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        linear(g, store, h, (self.weight, self.bias))
    }
}

/// Parameters plus the structural handles needed to run them.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub encoder: ViTEncoder,
    pub projection: Option<ProjectionHead>,
    pub head: Option<LinearHead>,
    pub metadata: Metadata,
}

impl Model {
    pub fn config(&self) -> &ViTConfig {
        self.encoder.config()
    }

    /// Pooled representations of `images`, no augmentation.
    pub fn encode(&self, images: &[&Image], chunk: usize) -> Result<Tensor> {
        self.encoder.encode(&self.store, images, chunk)
    }

    /// Projection-head outputs, unit-normalized when `normalize` is set.
    pub fn project(&self, images: &[&Image], chunk: usize, normalize: bool) -> Result<Tensor> {
        let proj = self
            .projection
            .as_ref()
            .ok_or_else(|| Error::contract("model has no projection head; z is only available after stage 1"))?;
        let h = self.encode(images, chunk)?;
        let mut g = Graph::new();
        let x = g.constant(h);
        let z = if normalize {
            proj.project(&mut g, &self.store, x)?
        } else {
            proj.project_raw(&mut g, &self.store, x)?
        };
        Ok(g.value(z).clone())
    }

    pub fn logits(&self, images: &[&Image], chunk: usize) -> Result<Tensor> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::contract("model has no classification head"))?;
        let h = self.encode(images, chunk)?;
        let mut g = Graph::new();
        let x = g.constant(h);
        let y = head.forward(&mut g, &self.store, x)?;
        Ok(g.value(y).clone())
    }

    /// Metadata including the encoder geometry needed to rebuild the model.
    fn full_metadata(&self) -> Metadata {
        let mut m = self.metadata.clone();
        let c = self.config();
        m.set("model.image_size", c.image_size);
        m.set("model.patch_size", c.patch_size);
        m.set("model.embed_dim", c.embed_dim);
        m.set("model.depth", c.depth);
        m.set("model.heads", c.heads);
        m.set("model.mlp_ratio", c.mlp_ratio);
        m.set("model.pooling", c.pooling.as_str());
        if let Some(h) = &self.head {
            m.set("num_classes", h.num_classes);
        }
        m
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store, self.full_metadata())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let m = &ckpt.metadata;
        let config = ViTConfig {
            image_size: m.parse_required("model.image_size")?,
            patch_size: m.parse_required("model.patch_size")?,
            embed_dim: m.parse_required("model.embed_dim")?,
            depth: m.parse_required("model.depth")?,
            heads: m.parse_required("model.heads")?,
            mlp_ratio: m.parse_required("model.mlp_ratio")?,
            pooling: Pooling::parse(m.require("model.pooling")?)?,
        };
        let store = ckpt.to_store()?;
        let encoder = ViTEncoder::bind(&config, &store)?;
        let projection = store
            .iter()
            .any(|(_, p)| p.name.starts_with(PROJECTION_PREFIX))
            .then(|| ProjectionHead::bind(&store))
            .transpose()?;
        let head = store
            .iter()
            .any(|(_, p)| p.name.starts_with(HEAD_PREFIX))
            .then(|| LinearHead::bind(&store, config.embed_dim))
            .transpose()?;
        if let (Some(h), Some(k)) = (&head, m.get("num_classes")) {
            if k != h.num_classes.to_string() {
                return Err(Error::config(format!(
                    "checkpoint metadata says {k} classes, head has {}",
                    h.num_classes
                )));
            }
        }
        let known = |name: &str| {
            name.starts_with(crate::encoder::ENCODER_PREFIX)
                || name.starts_with(PROJECTION_PREFIX)
                || name.starts_with(HEAD_PREFIX)
        };
        if let Some((_, p)) = store.iter().find(|(_, p)| !known(&p.name)) {
            return Err(Error::config(format!("unexpected checkpoint tensor {}", p.name)));
        }
        Ok(Model {
            store,
            encoder,
            projection,
            head,
            metadata: m.clone(),
        })
    }
}

/// Writes `model` atomically (temporary file, then rename).
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    model.to_checkpoint().write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    Model::from_checkpoint(&Checkpoint::read(path)?)
}
