use anyhow::Result;
use clap::ArgMatches;
use longrisk::eval::{run_experiment, ExperimentConfig};
use longrisk::trainer::full_grid;

use super::{load_cohort, model_config, out_dir, parse_scenarios, positive, require, train_config, train_ratio};
use crate::args::{Cli, ExperimentArgs, GridMode};
use crate::config::Layers;
use crate::output::{self, RunManifest};

pub fn run(cli: &Cli, a: &ExperimentArgs, m: &ArgMatches) -> Result<()> {
    let started = output::now();
    let l = Layers::new(m, a.common.config.as_deref())?;
    let cohort_dir = require(l.get("cohort", a.train.cohort.clone())?, "cohort")?;
    let (tcfg, grid_mode) = train_config(&l, &a.train)?;
    let cohort = load_cohort(&cohort_dir)?;
    let cfg = ExperimentConfig {
        n_splits: positive(l.get("splits", a.splits)?, "splits")?,
        train_ratio: train_ratio(&l, &a.train)?,
        n_repeats: positive(l.get("repeats", a.repeats)?, "repeats")?,
        scenarios: parse_scenarios(&l.get("scenarios", a.scenarios.clone())?)?,
        model: model_config(&l, &a.train, &cohort)?,
        grid: match grid_mode {
            GridMode::Single => vec![tcfg.clone()],
            GridMode::Full => full_grid(&tcfg),
        },
        seed: tcfg.seed,
        jobs: positive(l.get("jobs", a.common.jobs)?, "jobs")?,
        ..ExperimentConfig::default()
    };
    let dir = out_dir(cli, &l, &a.common, "experiment")?;
    output::prepare(&dir, a.common.force)?;

    let out = run_experiment(&cohort, &cfg)?;
    let mut manifest = RunManifest::new("experiment", a.common.config.as_deref(), started);
    manifest.master_seed = Some(cfg.seed);
    manifest.inputs.push(cohort_dir);
    output::emit(&mut manifest, &dir, "report.csv", out.report.to_table())?;
    output::emit(&mut manifest, &dir, "report.json", out.report.to_json()? + "\n")?;
    output::emit(&mut manifest, &dir, "splits.json", serde_json::to_string_pretty(&out.splits)? + "\n")?;
    manifest.settings = l.merged();
    manifest.write(&dir)?;
    for f in &out.report.provenance.failures {
        eprintln!("warning: {f}");
    }
    print!("{}", out.report.to_table());
    Ok(())
}
