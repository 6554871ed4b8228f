//! Subcommand bodies. Every command reads its inputs, writes its outputs
//! under `output.dir` and prints a JSON summary on stdout.

use std::fs;
use std::path::{Path, PathBuf};

use lacvit_core::analysis::{
    cosine_csv, cosine_json, cosine_report, cosine_report_classes, extract_embeddings, isotropy_json, isotropy_score,
    pick_two_classes, project_2d, projection_csv, EmbeddingSet, ReportContext, Representation,
};
use lacvit_core::config::RunConfig;
use lacvit_core::data::{gen_synthetic, load_cifar_binary, write_cifar_binary, CifarLayout, ImageDataset, Split};
use lacvit_core::pipeline::{
    evaluate, load_checkpoint, resume_stage1, save_checkpoint, train_ce_baseline, train_stage1, train_stage2,
    write_metrics_csv, Model, TrainStage,
};
use lacvit_core::{Error, Result};
use serde_json::json;

/// What an `analyze` subcommand looks at.
pub struct Target {
    pub checkpoint: PathBuf,
    pub representation: String,
    pub split: String,
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

fn layout(rc: &RunConfig) -> CifarLayout {
    CifarLayout::for_classes(rc.num_classes()).with_image_size(rc.image_size())
}

/// The configured file for `split`, or the synthetic set when none is given.
fn dataset(rc: &RunConfig, split: Split) -> Result<ImageDataset> {
    let path = match split {
        Split::Train => rc.train_path(),
        Split::Validation => rc.validation_path(),
    };
    match path {
        Some(p) => {
            log::info!("loading {} split from {}", split.as_str(), p.display());
            load_cifar_binary(&p, rc.num_classes(), layout(rc), split)
        }
        None => gen_synthetic(&rc.synthetic_spec(split), split),
    }
}

fn output_dir(rc: &RunConfig) -> Result<PathBuf> {
    let dir = rc.output_dir();
    fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(summary: serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("json values always serialize")
    );
}

pub fn synth_data(rc: &RunConfig) -> Result<()> {
    let dir = output_dir(rc)?;
    let mut files = serde_json::Map::new();
    for split in [Split::Train, Split::Validation] {
        let data = gen_synthetic(&rc.synthetic_spec(split), split)?;
        let configured = match split {
            Split::Train => rc.train_path(),
            Split::Validation => rc.validation_path(),
        };
        let path = configured.unwrap_or_else(|| dir.join(format!("{}.bin", split.as_str())));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        write_cifar_binary(&data, layout(rc), &path)?;
        log::info!("wrote {} {} records to {}", data.len(), split.as_str(), path.display());
        files.insert(
            split.as_str().to_string(),
            json!({
                "path": path.display().to_string(),
                "records": data.len(),
                "bytes": data.len() * layout(rc).record_size(),
            }),
        );
    }
    write(&dir.join("synth_config.txt"), rc.render())?;
    emit(json!({ "command": "synth-data", "config_hash": rc.hash(), "files": files }));
    Ok(())
}

pub fn train(rc: &RunConfig, stage: TrainStage, from: Option<&Path>) -> Result<()> {
    let cfg = rc.train_config(stage)?;
    let train = dataset(rc, Split::Train)?;
    let outcome = match (stage, from) {
        (TrainStage::Contrastive, None) => train_stage1(&cfg, &train)?,
        (TrainStage::Contrastive, Some(p)) => resume_stage1(&cfg, load_checkpoint(p)?, &train)?,
        (TrainStage::Head, Some(p)) => {
            let stage1 = load_checkpoint(p)?;
            train_stage2(&cfg, &stage1, &train, Some(&dataset(rc, Split::Validation)?))?
        }
        (TrainStage::Head, None) => {
            return Err(Error::Config(
                "train --stage head needs --from-checkpoint with a stage-1 checkpoint".into(),
            ))
        }
        (TrainStage::CeBaseline, None) => train_ce_baseline(&cfg, &train, Some(&dataset(rc, Split::Validation)?))?,
        (TrainStage::CeBaseline, Some(_)) => {
            return Err(Error::Config(
                "train --stage ce starts from scratch; drop --from-checkpoint".into(),
            ))
        }
    };

    let dir = output_dir(rc)?;
    let name = stage.as_str();
    let ckpt = dir.join(format!("{name}.ckpt"));
    save_checkpoint(&outcome.model, &ckpt)?;
    write_metrics_csv(
        &outcome.metrics,
        rc.wall_clock(),
        &dir.join(format!("{name}_metrics.csv")),
    )?;
    write(&dir.join(format!("{name}_config.txt")), rc.render())?;

    let last_loss = outcome
        .metrics
        .iter()
        .rev()
        .find(|r| r.split == Split::Train)
        .map(|r| r.loss);
    let last_val = outcome
        .metrics
        .iter()
        .rev()
        .find(|r| r.split == Split::Validation)
        .and_then(|r| r.accuracy);
    let summary = json!({
        "command": "train",
        "stage": name,
        "checkpoint": ckpt.display().to_string(),
        "config_hash": cfg.config_hash,
        "epochs": cfg.epochs,
        "steps": outcome.steps,
        "final_train_loss": last_loss,
        "final_validation_accuracy": last_val,
        "view_digest": outcome.view_digest,
    });
    write(
        &dir.join(format!("{name}_summary.json")),
        serde_json::to_string_pretty(&summary).expect("json values always serialize") + "\n",
    )?;
    emit(summary);
    Ok(())
}

fn source_hash(model: &Model) -> String {
    model.metadata.get("config_hash").unwrap_or("").to_string()
}

pub fn eval(rc: &RunConfig, checkpoint: &Path, split: &str) -> Result<()> {
    let split = parse_split(split)?;
    let model = load_checkpoint(checkpoint)?;
    let data = dataset(rc, split)?;
    let (loss, accuracy) = evaluate(&model, &data, rc.eval_chunk())?;
    let report = json!({
        "report": "eval",
        "checkpoint": checkpoint.display().to_string(),
        "stage": model.metadata.get("stage"),
        "config_hash": source_hash(&model),
        "split": split.as_str(),
        "n": data.len(),
        "loss": loss,
        "accuracy": accuracy,
    });
    let dir = output_dir(rc)?;
    write(
        &dir.join(format!("eval_{}.json", split.as_str())),
        serde_json::to_string_pretty(&report).expect("json values always serialize") + "\n",
    )?;
    emit(report);
    Ok(())
}

fn embeddings(rc: &RunConfig, t: &Target) -> Result<(EmbeddingSet, ReportContext, String)> {
    let which = Representation::parse(&t.representation)?;
    let split = parse_split(&t.split)?;
    let model = load_checkpoint(&t.checkpoint)?;
    let data = dataset(rc, split)?;
    let set = extract_embeddings(&model, &data, which, rc.eval_chunk())?;
    let ctx = ReportContext {
        source: format!("{} ({})", t.checkpoint.display(), set.source),
        representation: which.as_str().to_string(),
        config_hash: source_hash(&model),
    };
    let stem = format!("{}_{}", which.as_str(), split.as_str());
    Ok((set, ctx, stem))
}

pub fn isotropy(rc: &RunConfig, t: &Target, normalize: bool) -> Result<()> {
    let (set, mut ctx, mut stem) = embeddings(rc, t)?;
    let vectors = if normalize {
        ctx.representation.push_str("/l2");
        stem.push_str("_l2");
        set.vectors().l2_normalize_rows()?
    } else {
        set.vectors().clone()
    };
    let report = isotropy_score(&vectors)?;
    let text = isotropy_json(&report, set.len(), set.dim(), &ctx);
    let path = output_dir(rc)?.join(format!("isotropy_{stem}.json"));
    write(&path, &text)?;
    print!("{text}");
    Ok(())
}

fn parse_classes(spec: &str, num_classes: usize) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..num_classes).collect());
    }
    spec.split(',')
        .map(|c| {
            c.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("--classes expects `a,b` or `all`, got {spec:?}")))
        })
        .collect()
}

pub fn cosine(rc: &RunConfig, t: &Target, classes: Option<&str>) -> Result<()> {
    let (set, ctx, stem) = embeddings(rc, t)?;
    let report = match classes {
        None => {
            let (a, b) = pick_two_classes(&set, rc.seed())?;
            cosine_report(&set, a, b, rc.seed())?
        }
        Some(spec) => match parse_classes(spec, set.num_classes())?.as_slice() {
            &[a, b] => cosine_report(&set, a, b, rc.seed())?,
            list => cosine_report_classes(&set, list, rc.seed())?,
        },
    };
    let dir = output_dir(rc)?;
    let text = cosine_json(&report, &ctx);
    write(&dir.join(format!("cosine_{stem}.json")), &text)?;
    write(&dir.join(format!("cosine_{stem}.csv")), cosine_csv(&report))?;
    print!("{text}");
    Ok(())
}

pub fn project(rc: &RunConfig, t: &Target) -> Result<()> {
    let (set, ctx, stem) = embeddings(rc, t)?;
    let coords = project_2d(&set)?;
    let path = output_dir(rc)?.join(format!("projection_{stem}.csv"));
    write(&path, projection_csv(&coords, set.labels()))?;
    emit(json!({
        "report": "projection",
        "source": ctx.source,
        "representation": ctx.representation,
        "config_hash": ctx.config_hash,
        "n": set.len(),
        "path": path.display().to_string(),
    }));
    Ok(())
}
