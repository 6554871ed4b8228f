//! Finite-difference checks of the trained components, shared with the acceptance run.

use lacvit_core::data::{patch_batch, template, Image};
use lacvit_core::encoder::{Pooling, ViTConfig, ViTEncoder};
use lacvit_core::losses::{cross_entropy, ContrastiveBatch, LossKind, ProjectionHead};
use lacvit_core::numerics::gradcheck::{check_store, GradCheckReport};
use lacvit_core::pipeline::LinearHead;
use lacvit_core::{Graph, ParamStore, Result, RngStream, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn random(rng: &mut RngStream, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal(0.0, std)).collect()).unwrap()
}

pub fn check(store: &mut ParamStore, f: impl FnMut(&mut Graph, &ParamStore) -> Result<Var>) -> GradCheckReport {
    let report = check_store(store, STEP, 40, f).unwrap();
    assert!(report.checked > 0);
    report
}

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct gradient.
pub fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(random(&mut RngStream::new(seed, 99), &shape, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub fn small_vit(pooling: Pooling) -> ViTConfig {
    ViTConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 16,
        depth: 2,
        heads: 2,
        mlp_ratio: 2,
        pooling,
    }
}

pub fn two_images(seed: u64) -> Vec<Image> {
    let mut rng = RngStream::new(seed, 4);
    (0..2)
        .map(|c| {
            let base = template(c, 8);
            let noisy = base.pixels().iter().map(|v| v + rng.normal(0.0, 0.1)).collect();
            Image::clamped(8, noisy)
        })
        .collect()
}

/// Encoder weights large enough that every path carries signal.
pub fn init_encoder(cfg: &ViTConfig, seed: u64) -> (ParamStore, ViTEncoder) {
    let mut s = ParamStore::new();
    let enc = ViTEncoder::init(cfg, &mut s, &mut RngStream::new(seed, 5)).unwrap();
    let mut rng = RngStream::new(seed, 6);
    for p in s.iter_mut() {
        let noise = random(&mut rng, p.value.shape(), 0.3);
        p.value = p.value.add(&noise).unwrap();
    }
    (s, enc)
}

pub type Case = (String, GradCheckReport);

pub fn vit_cases(seed: u64) -> Vec<Case> {
    [Pooling::Mean, Pooling::Cls]
        .into_iter()
        .map(|pooling| {
            let cfg = small_vit(pooling);
            let (mut s, enc) = init_encoder(&cfg, seed);
            let patches = patch_batch(&two_images(seed), cfg.patch_size).unwrap();
            let r = check(&mut s, |g, st| {
                let x = g.constant(patches.clone());
                let h = enc.forward(g, st, x)?.h;
                probe(g, h, seed)
            });
            (format!("vit {} pooling", pooling.as_str()), r)
        })
        .collect()
}

pub fn projection_cases(seed: u64) -> Vec<Case> {
    let mut rng = RngStream::new(seed, 7);
    let mut s = ParamStore::new();
    let head = ProjectionHead::init(&mut s, 6, 6, 5, &mut rng).unwrap();
    for p in s.iter_mut() {
        let noise = random(&mut rng, p.value.shape(), 0.2);
        p.value = p.value.add(&noise).unwrap();
    }
    let h = random(&mut rng, &[4, 6], 1.0);
    let raw = check(&mut s, |g, st| {
        let x = g.constant(h.clone());
        let z = head.project_raw(g, st, x)?;
        probe(g, z, seed)
    });
    let normalized = check(&mut s, |g, st| {
        let x = g.constant(h.clone());
        let z = head.project(g, st, x)?;
        probe(g, z, seed)
    });
    vec![
        ("projection raw".into(), raw),
        ("projection normalized".into(), normalized),
    ]
}

/// `z` as a parameter, fed through the closed-form loss gradient.
pub fn contrastive_case(kind: LossKind, tau: f64, seed: u64, labels: &[usize]) -> Case {
    let mut rng = RngStream::new(seed, 8);
    let m = labels.len() * 2;
    let mut s = ParamStore::new();
    let raw = s.add("z", random(&mut rng, &[m, 6], 1.0)).unwrap();
    let normalized = kind.uses_normalized_embeddings();
    let r = check(&mut s, |g, st| {
        let z = g.param(st, raw);
        let z = if normalized { g.l2_normalize_rows(z)? } else { z };
        let batch = ContrastiveBatch::from_pairs(g.value(z).clone(), labels, normalized)?;
        let out = kind.evaluate(&batch, tau)?;
        g.inject_scalar(z, out.value.total, out.grad)
    });
    (format!("{kind:?} tau {tau}"), r)
}

pub fn contrastive_cases(seed: u64) -> Vec<Case> {
    let mut out = Vec::new();
    for tau in [0.1, 0.5] {
        for kind in [LossKind::SupCon, LossKind::NtXent, LossKind::NPair] {
            out.push(contrastive_case(kind, tau, seed, &[0, 1, 0, 2, 1]));
        }
    }
    out
}

pub fn cross_entropy_case(seed: u64) -> Case {
    let mut rng = RngStream::new(seed, 9);
    let mut s = ParamStore::new();
    let head = LinearHead::init(&mut s, 5, 3, &mut rng).unwrap();
    for p in s.iter_mut() {
        let noise = random(&mut rng, p.value.shape(), 0.5);
        p.value = p.value.add(&noise).unwrap();
    }
    let h = random(&mut rng, &[6, 5], 1.0);
    let labels = [0, 2, 1, 1, 0, 2];
    let r = check(&mut s, |g, st| {
        let x = g.constant(h.clone());
        let logits = head.forward(g, st, x)?;
        let out = cross_entropy(g.value(logits), &labels)?;
        g.inject_scalar(logits, out.value.total, out.grad)
    });
    ("cross entropy through linear head".into(), r)
}

pub fn full_stack_case(seed: u64) -> Case {
    let cfg = small_vit(Pooling::Mean);
    let (mut s, enc) = init_encoder(&cfg, seed);
    let head = ProjectionHead::init(&mut s, 16, 16, 8, &mut RngStream::new(seed, 10)).unwrap();
    let mut imgs = two_images(seed);
    imgs.extend(two_images(seed + 100));
    let patches = patch_batch(&imgs, cfg.patch_size).unwrap();
    let r = check(&mut s, |g, st| {
        let x = g.constant(patches.clone());
        let h = enc.forward(g, st, x)?.h;
        let z = head.project(g, st, h)?;
        let batch = ContrastiveBatch::from_pairs(g.value(z).clone(), &[0, 1], true)?;
        let out = LossKind::SupCon.evaluate(&batch, 0.1)?;
        g.inject_scalar(z, out.value.total, out.grad)
    });
    ("encoder + projection + supcon".into(), r)
}

/// Every trained component for one seed.
pub fn component_cases(seed: u64) -> Vec<Case> {
    let mut out = vit_cases(seed);
    out.extend(projection_cases(seed));
    out.extend(contrastive_cases(seed));
    out.push(cross_entropy_case(seed));
    out.push(full_stack_case(seed));
    out
}
