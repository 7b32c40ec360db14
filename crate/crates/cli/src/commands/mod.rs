pub mod evaluate;
pub mod experiment;
pub mod generate;
pub mod report;
pub mod saliency;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use longrisk::checkpoint::Checkpoint;
use longrisk::cohort::{load_manifest, Payload, Slot, SubjectTimeline, MANIFEST_FILE};
use longrisk::trainer::TrainConfig;
use longrisk::visit_encoder::EncoderMode;
use longrisk::{ModelConfig, RiskModel};

use crate::args::{Cli, Common, GridMode, TrainFlags};
use crate::config::Layers;
use crate::Usage;

pub fn out_dir(cli: &Cli, layers: &Layers, common: &Common, name: &str) -> Result<PathBuf> {
    let root: PathBuf = layers.get("out_root", cli.out_root.clone())?;
    Ok(layers.get("out", common.out.clone())?.unwrap_or_else(|| root.join(name)))
}

pub fn require(value: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value.ok_or_else(|| Usage(format!("--{flag} is required (flag or config key `{}`)", flag.replace('-', "_"))).into())
}

pub fn load_cohort(dir: &Path) -> Result<Vec<SubjectTimeline>> {
    let path = dir.join(MANIFEST_FILE);
    let cohort = load_manifest(&path).with_context(|| format!("loading {}", path.display()))?;
    if cohort.is_empty() {
        return Err(longrisk::Error::Validation { subject: "-".into(), message: "cohort has no subjects".into() }.into());
    }
    Ok(cohort)
}

/// Hex digest of the cohort manifest, recorded with checkpoints.
pub fn fingerprint(dir: &Path) -> Result<String> {
    let bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
    Ok(format!("{:016x}", longrisk::rng::stable_hash(&bytes)))
}

fn first_payload(cohort: &[SubjectTimeline]) -> &Payload {
    cohort[0].visits[0].payload(Slot::ALL[0])
}

/// Model settings from the flags, with the encoder adapted to the cohort's
/// payloads: images are projected at their native size, embeddings pass
/// through unchanged.
pub fn model_config(layers: &Layers, flags: &TrainFlags, cohort: &[SubjectTimeline]) -> Result<ModelConfig> {
    let mut cfg = ModelConfig {
        d_img: layers.get("d_img", flags.d_img)?,
        freeze_image_aggregator: layers.get("freeze", flags.freeze)?,
        ..ModelConfig::default()
    };
    match first_payload(cohort) {
        Payload::Image(img) => {
            cfg.image.rows = img.rows();
            cfg.image.cols = img.cols();
        }
        Payload::Embedding(e) => {
            cfg.encoder_mode = EncoderMode::Passthrough;
            cfg.d_img = e.len();
            if !cfg.d_img.is_multiple_of(cfg.image_heads) {
                cfg.image_heads = 1;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config(layers: &Layers, f: &TrainFlags) -> Result<(TrainConfig, GridMode)> {
    let cfg = TrainConfig {
        lr: layers.get("lr", f.lr)?,
        dropout: layers.get("dropout", f.dropout)?,
        d_visit: layers.get("d_visit", f.d_visit)?,
        n_heads: layers.get("heads", f.heads)?,
        l2: layers.get("l2", f.l2)?,
        batch_size: layers.get("batch_size", f.batch_size)?,
        max_epochs: layers.get("epochs", f.epochs)?,
        patience: layers.get("patience", f.patience)?,
        seed: layers.get("seed", f.seed)?,
        augment: layers.get("augment", f.augment)?,
        drop_prob: layers.get("drop_prob", f.drop_prob)?,
    };
    let grid = layers.get("grid", f.grid)?;
    cfg.validate(grid == GridMode::Full)?;
    Ok((cfg, grid))
}

pub fn train_ratio(layers: &Layers, f: &TrainFlags) -> Result<f64> {
    let r: f64 = layers.get("train_ratio", f.train_ratio)?;
    if !(r > 0.0 && r < 1.0) {
        return Err(Usage(format!("train ratio {r} must lie strictly between 0 and 1")).into());
    }
    Ok(r)
}

pub fn load_model(path: &Path) -> Result<(Checkpoint, RiskModel)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let model = RiskModel::from_checkpoint(&ck).with_context(|| format!("loading {}", path.display()))?;
    Ok((ck, model))
}

/// Fails unless the model can encode this cohort's payloads.
pub fn check_compatible(model: &RiskModel, cohort: &[SubjectTimeline]) -> Result<()> {
    let cfg = &model.cfg;
    match (cfg.encoder_mode, first_payload(cohort)) {
        (EncoderMode::RandomProjection, Payload::Image(_)) => Ok(()),
        (EncoderMode::Passthrough, Payload::Embedding(e)) if e.len() == cfg.d_img => Ok(()),
        (EncoderMode::Passthrough, Payload::Embedding(e)) => Err(longrisk::Error::Dimension(format!(
            "checkpoint expects embeddings of width {}, cohort has width {}",
            cfg.d_img,
            e.len()
        ))
        .into()),
        (EncoderMode::RandomProjection, Payload::Embedding(_)) => Err(longrisk::Error::Checkpoint(
            "checkpoint was trained on images but the cohort holds embeddings".into(),
        )
        .into()),
        (EncoderMode::Passthrough, Payload::Image(_)) => Err(longrisk::Error::Checkpoint(
            "checkpoint was trained on embeddings but the cohort holds images".into(),
        )
        .into()),
    }
}

pub fn parse_scenarios(s: &str) -> Result<Vec<longrisk::eval::ScenarioMask>> {
    longrisk::eval::parse_scenarios(s).map_err(|e| Usage(format!("--scenarios {s:?}: {e}")).into())
}

pub fn positive(value: usize, flag: &str) -> Result<usize> {
    if value == 0 {
        return Err(Usage(format!("--{flag} must be positive")).into());
    }
    Ok(value)
}
