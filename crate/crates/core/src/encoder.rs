//! A small pre-norm Vision Transformer.
//!
//! Patches are linearly embedded, offset by learned positional embeddings
//! (after an optional class token is prepended), passed through `depth`
//! blocks of multi-head self-attention and a ReLU MLP, each wrapped in a
//! pre-layer-norm residual, then layer-normed and pooled to one vector per
//! image.

use crate::data::{patch_batch, Image};
use crate::numerics::LAYER_NORM_EPS;
use crate::{Error, Graph, ParamId, ParamStore, Result, RngStream, Tensor, Var};

/// Namespace of every encoder parameter.
pub const ENCODER_PREFIX: &str = "encoder.";

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Cls,
    Mean,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Cls => "cls",
            Pooling::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::config(format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub pooling: Pooling,
}

impl Default for ViTConfig {
    /// 32x32 inputs, 4x4 patches (64 tokens), width 64, 4 blocks of 4 heads.
    fn default() -> Self {
        ViTConfig {
            image_size: 32,
            patch_size: 4,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 2,
            pooling: Pooling::Mean,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "image size {} must be divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        Ok(())
    }

    /// Number of patch tokens per image.
    pub fn num_patches(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    /// Tokens per sequence, including the class token if present.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + usize::from(self.pooling == Pooling::Cls)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: (ParamId, ParamId),
    qkv: (ParamId, ParamId),
    proj: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

/// Parameter handles of an encoder living in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ViTEncoder {
    config: ViTConfig,
    patch_embed: (ParamId, ParamId),
    pos_embed: ParamId,
    cls_token: Option<ParamId>,
    blocks: Vec<Block>,
    norm: (ParamId, ParamId),
}

/// Result of an encoder forward pass on a graph.
pub struct EncoderOutput {
    /// Pooled representation, `B x embed_dim`.
    pub h: Var,
    /// One attention node per block (see [`Graph::attention_probs`]).
    pub attention: Vec<Var>,
}

/// Parameter layout: `(name, shape, init)`.
enum Init {
    Weight,
    Normal,
    Zeros,
    Ones,
}

fn layout(config: &ViTConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.embed_dim;
    let hidden = d * config.mlp_ratio;
    let mut v = vec![
        (
            "encoder.patch_embed.weight".to_string(),
            vec![config.patch_dim(), d],
            Init::Weight,
        ),
        ("encoder.patch_embed.bias".to_string(), vec![d], Init::Zeros),
        ("encoder.pos_embed".to_string(), vec![config.seq_len(), d], Init::Normal),
    ];
    if config.pooling == Pooling::Cls {
        v.push(("encoder.cls_token".to_string(), vec![1, d], Init::Weight));
    }
    for i in 0..config.depth {
        let p = format!("encoder.blocks.{i}");
        v.push((format!("{p}.ln1.gain"), vec![d], Init::Ones));
        v.push((format!("{p}.ln1.bias"), vec![d], Init::Zeros));
        v.push((format!("{p}.attn.qkv.weight"), vec![d, 3 * d], Init::Weight));
        v.push((format!("{p}.attn.qkv.bias"), vec![3 * d], Init::Zeros));
        v.push((format!("{p}.attn.proj.weight"), vec![d, d], Init::Weight));
        v.push((format!("{p}.attn.proj.bias"), vec![d], Init::Zeros));
        v.push((format!("{p}.ln2.gain"), vec![d], Init::Ones));
        v.push((format!("{p}.ln2.bias"), vec![d], Init::Zeros));
        v.push((format!("{p}.mlp.fc1.weight"), vec![d, hidden], Init::Weight));
        v.push((format!("{p}.mlp.fc1.bias"), vec![hidden], Init::Zeros));
        v.push((format!("{p}.mlp.fc2.weight"), vec![hidden, d], Init::Weight));
        v.push((format!("{p}.mlp.fc2.bias"), vec![d], Init::Zeros));
    }
    v.push(("encoder.norm.gain".to_string(), vec![d], Init::Ones));
    v.push(("encoder.norm.bias".to_string(), vec![d], Init::Zeros));
    v
}

/// Normal(0, std) truncated at two standard deviations by resampling.
pub fn truncated_normal(rng: &mut RngStream, std: f64) -> f64 {
    loop {
        let x = rng.normal(0.0, std);
        if x.abs() <= 2.0 * std {
            return x;
        }
    }
}

impl ViTEncoder {
    /// Registers freshly initialized encoder parameters in `store`.
    ///
    /// Weights and the class token are truncated-normal(0, 0.02), positional
    /// embeddings normal(0, 0.02), biases zero, layer-norm gains one.
    pub fn init(config: &ViTConfig, store: &mut ParamStore, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        for (name, shape, init) in layout(config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Weight => (0..n).map(|_| truncated_normal(rng, INIT_STD)).collect(),
                Init::Normal => (0..n).map(|_| rng.normal(0.0, INIT_STD)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            store.add(name, Tensor::new(&shape, data)?)?;
        }
        Self::bind(config, store)
    }

    /// Looks up the encoder parameters of `config` in an existing store.
    pub fn bind(config: &ViTConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in layout(config) {
            let p = store
                .by_name(&name)
                .ok_or_else(|| Error::config(format!("missing encoder parameter {name}")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, config expects {shape:?}",
                    p.value.shape()
                )));
            }
        }
        let id = |name: &str| store.id(name).expect("checked above");
        let pair = |prefix: &str, a: &str, b: &str| (id(&format!("{prefix}.{a}")), id(&format!("{prefix}.{b}")));
        let blocks = (0..config.depth)
            .map(|i| {
                let p = format!("encoder.blocks.{i}");
                Block {
                    ln1: pair(&format!("{p}.ln1"), "gain", "bias"),
                    qkv: pair(&format!("{p}.attn.qkv"), "weight", "bias"),
                    proj: pair(&format!("{p}.attn.proj"), "weight", "bias"),
                    ln2: pair(&format!("{p}.ln2"), "gain", "bias"),
                    fc1: pair(&format!("{p}.mlp.fc1"), "weight", "bias"),
                    fc2: pair(&format!("{p}.mlp.fc2"), "weight", "bias"),
                }
            })
            .collect();
        Ok(ViTEncoder {
            config: config.clone(),
            patch_embed: pair("encoder.patch_embed", "weight", "bias"),
            pos_embed: id("encoder.pos_embed"),
            cls_token: (config.pooling == Pooling::Cls).then(|| id("encoder.cls_token")),
            blocks,
            norm: pair("encoder.norm", "gain", "bias"),
        })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn pos_embed_id(&self) -> ParamId {
        self.pos_embed
    }

    /// Forward pass over stacked patch sequences, `(B * T) x patch_dim`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, patches: Var) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let t = cfg.num_patches();
        let rows = g.value(patches).rows();
        if g.value(patches).cols() != cfg.patch_dim() || !rows.is_multiple_of(t) {
            return Err(Error::contract(format!(
                "encoder expects (B * {t}) x {} patches, got {:?}",
                cfg.patch_dim(),
                g.value(patches).shape()
            )));
        }
        let mut x = linear(g, store, patches, self.patch_embed)?;
        if let Some(cls) = self.cls_token {
            let tok = g.param(store, cls);
            x = g.prepend_token(x, tok, t)?;
        }
        let seq = cfg.seq_len();
        let pos = g.param(store, self.pos_embed);
        x = g.add_tiled(x, pos)?;

        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let y = layer_norm(g, store, x, b.ln1)?;
            let qkv = linear(g, store, y, b.qkv)?;
            let a = g.attention(qkv, seq, cfg.heads)?;
            attention.push(a);
            let a = linear(g, store, a, b.proj)?;
            x = g.add(x, a)?;

            let y = layer_norm(g, store, x, b.ln2)?;
            let m = linear(g, store, y, b.fc1)?;
            let m = g.relu(m);
            let m = linear(g, store, m, b.fc2)?;
            x = g.add(x, m)?;
        }
        let x = layer_norm(g, store, x, self.norm)?;
        let h = match cfg.pooling {
            Pooling::Mean => g.segment_mean(x, seq)?,
            Pooling::Cls => g.segment_first(x, seq)?,
        };
        Ok(EncoderOutput { h, attention })
    }

    /// Representations of `images` (no augmentation, no gradients),
    /// processed in chunks of `chunk` images.
    pub fn encode(&self, store: &ParamStore, images: &[&Image], chunk: usize) -> Result<Tensor> {
        let d = self.config.embed_dim;
        let mut out = Vec::with_capacity(images.len() * d);
        for part in images.chunks(chunk.max(1)) {
            let mut g = Graph::new();
            let x = g.constant(patch_batch(part.iter().copied(), self.config.patch_size)?);
            let h = self.forward(&mut g, store, x)?.h;
            out.extend_from_slice(g.value(h).data());
        }
        Tensor::new(&[images.len(), d], out)
    }

    /// Excludes every encoder parameter from gradient flow and updates.
    pub fn freeze(store: &mut ParamStore) {
        store.set_frozen_prefix(ENCODER_PREFIX, true);
    }

    pub fn unfreeze(store: &mut ParamStore) {
        store.set_frozen_prefix(ENCODER_PREFIX, false);
    }
}

/// `x · W + b` for a `(weight, bias)` parameter pair.
pub fn linear(g: &mut Graph, store: &ParamStore, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let w = g.param(store, w);
    let b = g.param(store, b);
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

fn layer_norm(g: &mut Graph, store: &ParamStore, x: Var, (gain, bias): (ParamId, ParamId)) -> Result<Var> {
    let gain = g.param(store, gain);
    let bias = g.param(store, bias);
    g.layer_norm_rows(x, gain, bias, LAYER_NORM_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(pooling: Pooling) -> ViTConfig {
        ViTConfig {
            image_size: 8,
            patch_size: 4,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            pooling,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(Pooling::Mean);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny(Pooling::Mean);
        c.patch_size = 3;
        assert!(c.validate().is_err());
        assert_eq!(ViTConfig::default().num_patches(), 64);
    }

    #[test]
    fn names_unique_and_shapes_bound() {
        let mut store = ParamStore::new();
        let cfg = tiny(Pooling::Cls);
        ViTEncoder::init(&cfg, &mut store, &mut RngStream::new(0, 0)).unwrap();
        assert!(store.iter().all(|(_, p)| p.name.starts_with(ENCODER_PREFIX)));
        assert_eq!(store.by_name("encoder.pos_embed").unwrap().value.shape(), &[5, 8]);
        assert!(store.by_name("encoder.cls_token").is_some());
    }

    #[test]
    fn bind_rejects_wrong_geometry() {
        let mut store = ParamStore::new();
        ViTEncoder::init(&tiny(Pooling::Mean), &mut store, &mut RngStream::new(0, 0)).unwrap();
        let mut other = tiny(Pooling::Mean);
        other.embed_dim = 16;
        other.heads = 4;
        assert!(ViTEncoder::bind(&other, &store).is_err());
    }

    #[test]
    fn sequence_length_mismatch_rejected() {
        let mut store = ParamStore::new();
        let enc = ViTEncoder::init(&tiny(Pooling::Mean), &mut store, &mut RngStream::new(0, 0)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[6, 48]));
        assert!(enc.forward(&mut g, &store, x).is_err());
    }
}
