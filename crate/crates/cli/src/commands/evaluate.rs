use std::collections::HashSet;

use anyhow::Result;
use clap::ArgMatches;
use longrisk::cohort::expand_all;
use longrisk::eval::{evaluate_scenarios, MetricReport, Provenance};
use longrisk::Rng;

use super::{check_compatible, load_cohort, load_model, out_dir, parse_scenarios, positive, require};
use crate::args::{Cli, EvaluateArgs, Subset};
use crate::config::Layers;
use crate::output::{self, RunManifest};
use crate::Usage;

pub fn run(cli: &Cli, a: &EvaluateArgs, m: &ArgMatches) -> Result<()> {
    let started = output::now();
    let l = Layers::new(m, a.common.config.as_deref())?;
    let ck_path = require(l.get("checkpoint", a.checkpoint.clone())?, "checkpoint")?;
    let cohort_dir = require(l.get("cohort", a.cohort.clone())?, "cohort")?;
    let scenarios = parse_scenarios(&l.get("scenarios", a.scenarios.clone())?)?;
    let repeats = positive(l.get("repeats", a.repeats)?, "repeats")?;
    let seed: u64 = l.get("seed", a.seed)?;
    let subset = l.get("subset", a.subset)?;
    let jobs = positive(l.get("jobs", a.common.jobs)?, "jobs")?;

    let (ck, model) = load_model(&ck_path)?;
    let cohort = load_cohort(&cohort_dir)?;
    check_compatible(&model, &cohort)?;
    let subjects = match subset {
        Subset::All => cohort,
        Subset::Test => {
            let ids: HashSet<String> = ck
                .metadata
                .pointer("/split/test")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .ok_or_else(|| Usage("checkpoint records no test split; use --subset all".into()))?;
            let chosen: Vec<_> = cohort.into_iter().filter(|t| ids.contains(&t.subject_id)).collect();
            if chosen.len() != ids.len() {
                return Err(longrisk::Error::NotFound(format!(
                    "{} of the checkpoint's {} test subjects are not in this cohort",
                    ids.len() - chosen.len(),
                    ids.len()
                ))
                .into());
            }
            chosen
        }
    };
    let dir = out_dir(cli, &l, &a.common, "evaluate")?;
    output::prepare(&dir, a.common.force)?;

    if repeats == 1 {
        eprintln!("warning: one pseudo test set per cell; confidence intervals are suppressed");
    }
    let samples = model.encode_samples(&expand_all(&subjects))?;
    let results = evaluate_scenarios(&model, &samples, &scenarios, repeats, &Rng::new(seed), jobs)?;
    let provenance = Provenance {
        master_seed: seed,
        n_splits: 1,
        n_successful_splits: 1,
        n_repeats: repeats,
        ..Provenance::default()
    };
    let report = MetricReport::from_repeats(&results, provenance);
    report.validate()?;

    let mut manifest = RunManifest::new("evaluate", a.common.config.as_deref(), started);
    manifest.master_seed = Some(seed);
    manifest.inputs = vec![ck_path, cohort_dir];
    output::emit(&mut manifest, &dir, "report.csv", report.to_table())?;
    output::emit(&mut manifest, &dir, "report.json", report.to_json()? + "\n")?;
    manifest.settings = l.merged();
    manifest.write(&dir)?;
    print!("{}", report.to_table());
    Ok(())
}
