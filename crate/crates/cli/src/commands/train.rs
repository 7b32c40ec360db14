use anyhow::Result;
use clap::ArgMatches;
use longrisk::cohort::split_subjects;
use longrisk::trainer::{
    full_grid, grid_search, grid_table, make_validation_split, train_model, GridRow, PreparedData, TrainConfig,
    TrainState,
};
use longrisk::Rng;
use serde_json::json;

use super::{fingerprint, load_cohort, load_model, model_config, out_dir, positive, require, train_config, train_ratio};
use crate::args::{Cli, GridMode, TrainArgs};
use crate::config::Layers;
use crate::output::{self, RunManifest};
use crate::Usage;

pub const CHECKPOINT: &str = "model.ckpt";

fn log_csv(state: &TrainState) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for l in &state.log {
        s.push_str(&format!("{},{:.8},{:.8}\n", l.epoch, l.train_loss, l.val_loss));
    }
    s
}

pub fn run(cli: &Cli, a: &TrainArgs, m: &ArgMatches) -> Result<()> {
    let started = output::now();
    let l = Layers::new(m, a.common.config.as_deref())?;
    let cohort_dir = require(l.get("cohort", a.train.cohort.clone())?, "cohort")?;
    let resume = l.get("resume", a.resume.clone())?;
    let jobs = positive(l.get("jobs", a.common.jobs)?, "jobs")?;
    let ratio = train_ratio(&l, &a.train)?;
    let (tcfg, grid_mode) = train_config(&l, &a.train)?;
    if resume.is_some() && grid_mode == GridMode::Full {
        return Err(Usage("--resume continues one model and cannot be combined with --grid full".into()).into());
    }
    let cohort = load_cohort(&cohort_dir)?;
    let resumed = resume.as_deref().map(load_model).transpose()?;
    let model_cfg = match &resumed {
        Some((_, model)) => {
            super::check_compatible(model, &cohort)?;
            model.cfg.clone()
        }
        None => model_config(&l, &a.train, &cohort)?,
    };
    let dir = out_dir(cli, &l, &a.common, "train")?;
    output::prepare(&dir, a.common.force)?;

    let rng = Rng::new(tcfg.seed);
    let (train_tl, test_tl) = split_subjects(&cohort, ratio, true, &mut rng.fork(1))?;
    let (fit, val) = make_validation_split(&train_tl, &mut rng.fork(2))?;
    let data = PreparedData::new(&model_cfg, &fit, &val)?;

    let (outcome, rows, best) = match resumed {
        Some((_, model)) => {
            let cfg = TrainConfig {
                d_visit: model.cfg.d_visit,
                n_heads: model.cfg.n_heads,
                dropout: model.cfg.dropout,
                ..tcfg.clone()
            };
            let o = train_model(model, &cfg, &data.fit, &data.val)?;
            let row = GridRow {
                config: cfg,
                best_val_loss: Some(o.state.best_validation_loss),
                epochs: o.state.epoch,
                error: None,
            };
            (o, vec![row], 0)
        }
        None => {
            let grid = match grid_mode {
                GridMode::Single => vec![tcfg.clone()],
                GridMode::Full => full_grid(&tcfg),
            };
            let r = grid_search(&model_cfg, &grid, &data, jobs)?;
            (r.outcome, r.rows, r.best)
        }
    };

    let ids = |v: &[longrisk::cohort::SubjectTimeline]| v.iter().map(|t| t.subject_id.clone()).collect::<Vec<_>>();
    let mut meta = serde_json::Map::new();
    meta.insert("train".into(), serde_json::to_value(&rows[best].config)?);
    meta.insert("master_seed".into(), json!(tcfg.seed));
    meta.insert("cohort_fingerprint".into(), json!(fingerprint(&cohort_dir)?));
    meta.insert("split".into(), json!({ "fit": ids(&fit), "validation": ids(&val), "test": ids(&test_tl) }));
    let ck = outcome.model.to_checkpoint(meta)?;

    let mut manifest = RunManifest::new("train", a.common.config.as_deref(), started);
    manifest.master_seed = Some(tcfg.seed);
    manifest.inputs.push(cohort_dir.clone());
    manifest.inputs.extend(resume.clone());
    output::emit(&mut manifest, &dir, CHECKPOINT, ck.to_bytes()?)?;
    output::emit(&mut manifest, &dir, "train_log.csv", log_csv(&outcome.state))?;
    output::emit(&mut manifest, &dir, "grid.csv", grid_table(&rows))?;
    manifest.settings = l.merged();
    manifest.write(&dir)?;

    if rows.len() > 1 {
        print!("{}", grid_table(&rows));
    }
    let c = &rows[best].config;
    println!(
        "best: d_visit {} heads {} l2 {:e}; validation loss {:.4} at epoch {} of {}",
        c.d_visit, c.n_heads, c.l2, outcome.state.best_validation_loss, outcome.state.best_epoch, outcome.state.epoch
    );
    println!("wrote {}", dir.display());
    Ok(())
}
