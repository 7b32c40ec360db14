use anyhow::Result;
use clap::ArgMatches;
use longrisk::cohort::{expand_trajectories, write_pfm, Image, Payload, PayloadKind, Slot};
use longrisk::eval::saliency;
use longrisk::visit_encoder::EncoderMode;

use super::{load_cohort, load_model, out_dir, require};
use crate::args::{Cli, SaliencyArgs};
use crate::config::Layers;
use crate::output::{self, RunManifest};

/// 8-bit binary PGM of a map with values in `[0, 1]`.
fn pgm(rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn run(cli: &Cli, a: &SaliencyArgs, m: &ArgMatches) -> Result<()> {
    let started = output::now();
    let l = Layers::new(m, a.common.config.as_deref())?;
    let ck_path = require(l.get("checkpoint", a.checkpoint.clone())?, "checkpoint")?;
    let cohort_dir = require(l.get("cohort", a.cohort.clone())?, "cohort")?;
    let year: usize = l.get("year", a.year)?;
    if !(1..=longrisk::cohort::HORIZON).contains(&year) {
        return Err(crate::Usage(format!("--year {year} outside 1..=5")).into());
    }

    let (ck, model) = load_model(&ck_path)?;
    let cohort = load_cohort(&cohort_dir)?;
    if model.cfg.encoder_mode != EncoderMode::RandomProjection
        || cohort[0].visits[0].kind() != PayloadKind::Image
    {
        return Err(longrisk::Error::UnsupportedMode(
            "saliency needs an image cohort and an image checkpoint".into(),
        )
        .into());
    }
    let mut chosen = Vec::with_capacity(a.subjects.len());
    for id in &a.subjects {
        match cohort.iter().find(|t| &t.subject_id == id) {
            Some(t) => chosen.push(t),
            None => {
                let ids: Vec<&str> = cohort.iter().map(|t| t.subject_id.as_str()).collect();
                return Err(longrisk::Error::NotFound(format!("subject {id}; available: {}", ids.join(", "))).into());
            }
        }
    }
    let dir = out_dir(cli, &l, &a.common, "saliency")?;
    output::prepare(&dir, a.common.force)?;

    let mut manifest = RunManifest::new("saliency", a.common.config.as_deref(), started);
    manifest.master_seed = ck.metadata.get("master_seed").and_then(|v| v.as_u64());
    manifest.inputs = vec![ck_path, cohort_dir];
    for t in chosen {
        let sample = expand_trajectories(t).pop().expect("a timeline has at least one visit");
        let maps = saliency(&model, &sample, year)?;
        for slot in Slot::ALL {
            let map = &maps[slot.index()];
            let stem = format!("{}_{}_{}", t.subject_id, sample.now_year, slot);
            output::emit(&mut manifest, &dir, &format!("maps/{stem}.pgm"), pgm(map.rows, map.cols, &map.data))?;
            if let Payload::Image(img) = sample.now_visit().payload(slot) {
                let path = format!("inputs/{stem}.pfm");
                std::fs::create_dir_all(dir.join("inputs"))?;
                write_pfm(&dir.join(&path), img as &Image)?;
                manifest.outputs.push(path.into());
            }
        }
        println!("{} ({}): 4 maps", t.subject_id, sample.now_year);
    }
    manifest.settings = l.merged();
    manifest.write(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
