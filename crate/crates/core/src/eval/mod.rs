//! Evaluation protocol: history scenarios, pseudo test sets, ROC AUC per
//! follow-up year and C-index, aggregated into a report.

mod experiment;
mod metrics;
mod pseudo;
mod report;
mod saliency;
mod scenario;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutput, SplitRecord};
pub use metrics::{concordance_index, roc_auc};
pub use pseudo::{build_pseudo_test_set, Eligibility, Labeled};
pub use report::{summarize, Cell, MetricReport, Provenance, ReportRow, C_INDEX_DEFINITION, ELIGIBILITY_RULE};
pub use saliency::{compare_localization, lesion_overlap, saliency, top_fraction_overlap, LocalizationRow, SaliencyMap};
pub use scenario::{parse_scenarios, Frequency, ScenarioMask};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::HORIZON;
use crate::error::{Error, Result};
use crate::model::{EncodedSample, RiskModel};
use crate::rng::Rng;
use crate::survival::RiskCurve;

/// Metric values over the defined repeats, plus how many were undefined.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepeatStats {
    pub values: Vec<f64>,
    pub undefined: usize,
}

impl RepeatStats {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: ScenarioMask,
    /// Index `k − 1` holds follow-up year `k`.
    pub auc: Vec<RepeatStats>,
    pub c_index: RepeatStats,
}

/// Eval-mode risk curves with each history restricted to the scenario's
/// visible offsets.
pub fn score_scenario(model: &RiskModel, samples: &[EncodedSample], scenario: ScenarioMask) -> Result<Vec<RiskCurve>> {
    let visible = scenario.visible();
    let restricted: Vec<EncodedSample> = samples.iter().map(|s| s.restricted(&visible)).collect();
    model.predict_batch(&restricted)
}

fn repeat_metric(
    n_repeats: usize,
    what: &str,
    mut draw: impl FnMut() -> Result<Vec<usize>>,
    metric: impl Fn(&[usize]) -> Result<f64>,
) -> Result<RepeatStats> {
    let mut stats = RepeatStats::default();
    for _ in 0..n_repeats {
        let pick = draw()?;
        match metric(&pick) {
            Ok(v) => stats.values.push(v),
            Err(Error::UndefinedMetric(_)) => stats.undefined += 1,
            Err(e) => return Err(e),
        }
    }
    if 2 * stats.undefined > n_repeats {
        return Err(Error::Evaluation(format!(
            "{what}: {} of {n_repeats} pseudo test sets had an undefined metric",
            stats.undefined
        )));
    }
    Ok(stats)
}

/// Metrics from precomputed curves. Pseudo test sets depend only on `rng`'s
/// seed and the follow-up year, so every scenario is scored on the same sets.
pub fn metrics_from_scores(
    samples: &[EncodedSample],
    curves: &[RiskCurve],
    scenario: ScenarioMask,
    n_repeats: usize,
    rng: &Rng,
) -> Result<ScenarioResult> {
    if n_repeats == 0 {
        return Err(Error::config("n_repeats must be positive"));
    }
    if samples.len() != curves.len() {
        return Err(Error::dim(format!("{} curves for {} samples", curves.len(), samples.len())));
    }
    let mut auc = Vec::with_capacity(HORIZON);
    for year in 1..=HORIZON {
        let elig = Eligibility::for_year(samples, year)?;
        let mut r = rng.fork_named(&format!("auc-year-{year}"));
        let stats = repeat_metric(
            n_repeats,
            &format!("scenario {scenario}, year {year} ROC AUC"),
            || elig.draw(&mut r),
            |pick| {
                let scores: Vec<f64> = pick.iter().map(|&i| curves[i].at(year)).collect();
                let labels: Vec<bool> = pick.iter().map(|&i| samples[i].labels[year - 1]).collect();
                roc_auc(&scores, &labels)
            },
        )?;
        auc.push(stats);
    }
    let elig = Eligibility::for_concordance(samples);
    let mut r = rng.fork_named("c-index");
    let c_index = repeat_metric(
        n_repeats,
        &format!("scenario {scenario} C-index"),
        || elig.draw(&mut r),
        |pick| {
            let risks: Vec<f64> = pick.iter().map(|&i| curves[i].at(HORIZON)).collect();
            let outcomes: Vec<_> = pick.iter().map(|&i| samples[i].outcome()).collect();
            concordance_index(&risks, &outcomes)
        },
    )?;
    Ok(ScenarioResult { scenario, auc, c_index })
}

/// Scores `samples` under `scenario` and computes every metric.
pub fn evaluate(
    model: &RiskModel,
    samples: &[EncodedSample],
    scenario: ScenarioMask,
    n_repeats: usize,
    rng: &Rng,
) -> Result<ScenarioResult> {
    let curves = score_scenario(model, samples, scenario)?;
    metrics_from_scores(samples, &curves, scenario, n_repeats, rng)
}

/// [`evaluate`] for several scenarios, up to `jobs` at a time. Results come
/// back in the order given.
pub fn evaluate_scenarios(
    model: &RiskModel,
    samples: &[EncodedSample],
    scenarios: &[ScenarioMask],
    n_repeats: usize,
    rng: &Rng,
    jobs: usize,
) -> Result<Vec<ScenarioResult>> {
    let run = |s: &ScenarioMask| evaluate(model, samples, *s, n_repeats, rng);
    if jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(|| scenarios.par_iter().map(run).collect())
    } else {
        scenarios.iter().map(run).collect()
    }
}
