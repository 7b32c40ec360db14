use serde::{Deserialize, Serialize};

use super::{evaluate_scenarios, MetricReport, Provenance, ScenarioMask, ScenarioResult};
use crate::cohort::{expand_all, split_subjects, SubjectTimeline};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RiskModel};
use crate::rng::{stable_hash, Rng};
use crate::trainer::{grid_search, make_validation_split, PreparedData, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_splits: usize,
    pub train_ratio: f64,
    pub n_repeats: usize,
    pub scenarios: Vec<ScenarioMask>,
    pub model: ModelConfig,
    /// Grid points; their seeds are replaced per split.
    pub grid: Vec<TrainConfig>,
    pub seed: u64,
    pub jobs: usize,
    /// Fraction of splits that must succeed.
    pub min_success_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_splits: 10,
            train_ratio: 0.8,
            n_repeats: 100,
            scenarios: ScenarioMask::table_set(),
            model: ModelConfig::default(),
            grid: vec![TrainConfig::default()],
            seed: 0,
            jobs: 1,
            min_success_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub index: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub winner: Option<TrainConfig>,
    pub best_val_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: MetricReport,
    pub splits: Vec<SplitRecord>,
    pub results: Vec<Vec<ScenarioResult>>,
}

fn run_split(
    cohort: &[SubjectTimeline],
    cfg: &ExperimentConfig,
    index: usize,
    record: &mut SplitRecord,
) -> Result<Vec<ScenarioResult>> {
    let master = Rng::new(cfg.seed);
    let (train, test) =
        split_subjects(cohort, cfg.train_ratio, true, &mut master.fork_named(&format!("split-{index}")))?;
    record.n_train = train.len();
    record.n_test = test.len();
    let (fit, val) = make_validation_split(&train, &mut master.fork_named(&format!("validation-{index}")))?;
    let data = PreparedData::new(&cfg.model, &fit, &val)?;
    let grid: Vec<TrainConfig> = cfg
        .grid
        .iter()
        .enumerate()
        .map(|(j, c)| TrainConfig {
            seed: Rng::derive(cfg.seed, stable_hash(format!("train-{index}-{j}").as_bytes())).next_u64(),
            ..c.clone()
        })
        .collect();
    let result = grid_search(&cfg.model, &grid, &data, cfg.jobs)?;
    record.winner = Some(result.rows[result.best].config.clone());
    record.best_val_loss = result.rows[result.best].best_val_loss;
    let model: &RiskModel = &result.outcome.model;
    let samples = model.encode_samples(&expand_all(&test))?;
    evaluate_scenarios(
        model,
        &samples,
        &cfg.scenarios,
        cfg.n_repeats,
        &master.fork_named(&format!("evaluate-{index}")),
        cfg.jobs,
    )
}

/// Repeated stratified train/test splits: grid search and training on each
/// training part, evaluation of every scenario on each test part, then
/// aggregation over splits.
pub fn run_experiment(cohort: &[SubjectTimeline], cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.n_splits == 0 || cfg.scenarios.is_empty() || cfg.grid.is_empty() {
        return Err(Error::config("experiment needs splits, scenarios and a grid"));
    }
    cfg.model.validate()?;
    let mut splits = Vec::with_capacity(cfg.n_splits);
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for i in 0..cfg.n_splits {
        let mut rec = SplitRecord { index: i, n_train: 0, n_test: 0, winner: None, best_val_loss: None, error: None };
        match run_split(cohort, cfg, i, &mut rec) {
            Ok(r) => results.push(r),
            Err(e) => {
                failures.push(format!("split {i}: {e}"));
                rec.error = Some(e.to_string());
            }
        }
        splits.push(rec);
    }
    let needed = (cfg.min_success_fraction * cfg.n_splits as f64).ceil() as usize;
    if results.len() < needed.max(1) {
        return Err(Error::Evaluation(format!(
            "{} of {} splits succeeded, {needed} required: {}",
            results.len(),
            cfg.n_splits,
            failures.join("; ")
        )));
    }
    let provenance = Provenance {
        master_seed: cfg.seed,
        n_splits: cfg.n_splits,
        n_successful_splits: results.len(),
        n_repeats: cfg.n_repeats,
        failures,
        ..Provenance::default()
    };
    let report = MetricReport::from_splits(&results, provenance)?;
    Ok(ExperimentOutput { report, splits, results })
}
