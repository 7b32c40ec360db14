use serde::{Deserialize, Serialize};

use super::{ScenarioMask, ScenarioResult};
use crate::cohort::HORIZON;
use crate::error::{Error, Result};

pub const C_INDEX_DEFINITION: &str = "Harrell concordance on the 5-year cumulative risk within each pseudo test set \
     (one sample per subject with year 1 known); pair (i, j) is comparable when i is diagnosed at t_i and j is known \
     diagnosis-free at t_i; risk ties count 0.5; averaged over pseudo test sets";
pub const ELIGIBILITY_RULE: &str = "a sample is eligible for follow-up year k when its year-k label is known (not censored)";
const CI_OVER_SPLITS: &str = "normal approximation, mean +/- 1.96 * sd / sqrt(n) over split means, clipped to [0, 1]";
const CI_OVER_REPEATS: &str = "normal approximation, mean +/- 1.96 * sd / sqrt(n) over pseudo test sets, clipped to [0, 1]";

/// Mean with an optional 95% interval (absent when fewer than two values).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub ci: Option<[f64; 2]>,
    pub n: usize,
}

impl Cell {
    pub fn format(&self) -> String {
        match self.ci {
            Some([lo, hi]) => format!("{:.3} ({:.3}-{:.3})", self.mean, lo, hi),
            None => format!("{:.3}", self.mean),
        }
    }
}

/// Mean and normal-approximation 95% interval, clipped to `[0, 1]`.
pub fn summarize(values: &[f64]) -> Cell {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci = (n >= 2).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let half = 1.96 * var.sqrt() / (n as f64).sqrt();
        [(mean - half).max(0.0), (mean + half).min(1.0)]
    });
    Cell { mean, ci, n }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: ScenarioMask,
    pub c_index: Cell,
    /// Index `k − 1` holds follow-up year `k`.
    pub auc: Vec<Cell>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub n_splits: usize,
    pub n_successful_splits: usize,
    pub n_repeats: usize,
    pub ci_method: String,
    pub c_index_definition: String,
    pub eligibility: String,
    /// Pseudo test sets whose metric was undefined (single class or no
    /// comparable pair), summed over all cells.
    pub undefined_repeats: usize,
    /// True when some interval could not be formed from a single value.
    pub degenerate_ci: bool,
    pub failures: Vec<String>,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
    pub provenance: Provenance,
}

fn undefined_total(results: &[ScenarioResult]) -> usize {
    results
        .iter()
        .map(|r| r.c_index.undefined + r.auc.iter().map(|a| a.undefined).sum::<usize>())
        .sum()
}

impl MetricReport {
    /// One model: intervals over the pseudo test set repeats.
    pub fn from_repeats(results: &[ScenarioResult], mut provenance: Provenance) -> Self {
        let mut rows: Vec<ReportRow> = results
            .iter()
            .map(|r| ReportRow {
                scenario: r.scenario,
                c_index: summarize(&r.c_index.values),
                auc: r.auc.iter().map(|a| summarize(&a.values)).collect(),
            })
            .collect();
        rows.sort_by_key(|r| r.scenario);
        provenance.ci_method = CI_OVER_REPEATS.into();
        provenance.undefined_repeats = undefined_total(results);
        Self::finish(rows, provenance)
    }

    /// Several splits: each cell is the mean over splits of the per-split
    /// mean, with an interval over those split means.
    pub fn from_splits(per_split: &[Vec<ScenarioResult>], mut provenance: Provenance) -> Result<Self> {
        let first = per_split.first().ok_or_else(|| Error::Evaluation("no successful split".into()))?;
        let mut scenarios: Vec<ScenarioMask> = first.iter().map(|r| r.scenario).collect();
        scenarios.sort();
        let mut rows = Vec::with_capacity(scenarios.len());
        for sc in scenarios {
            let mut cidx = Vec::new();
            let mut auc: Vec<Vec<f64>> = vec![Vec::new(); HORIZON];
            for split in per_split {
                let r = split
                    .iter()
                    .find(|r| r.scenario == sc)
                    .ok_or_else(|| Error::Evaluation(format!("split lacks scenario {sc}")))?;
                cidx.push(r.c_index.mean());
                for k in 0..HORIZON {
                    auc[k].push(r.auc[k].mean());
                }
            }
            rows.push(ReportRow {
                scenario: sc,
                c_index: summarize(&cidx),
                auc: auc.iter().map(|v| summarize(v)).collect(),
            });
        }
        provenance.ci_method = CI_OVER_SPLITS.into();
        provenance.undefined_repeats = per_split.iter().map(|s| undefined_total(s)).sum();
        Ok(Self::finish(rows, provenance))
    }

    fn finish(rows: Vec<ReportRow>, mut provenance: Provenance) -> Self {
        provenance.c_index_definition = C_INDEX_DEFINITION.into();
        provenance.eligibility = ELIGIBILITY_RULE.into();
        provenance.degenerate_ci = rows
            .iter()
            .any(|r| r.c_index.ci.is_none() || r.auc.iter().any(|c| c.ci.is_none()));
        Self { rows, provenance }
    }

    pub fn row(&self, scenario: ScenarioMask) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }

    /// Checks that every value lies in `[0, 1]` and every interval holds its mean.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            for c in std::iter::once(&r.c_index).chain(&r.auc) {
                let ok = (0.0..=1.0).contains(&c.mean)
                    && c.ci.is_none_or(|[lo, hi]| lo <= c.mean && c.mean <= hi && lo >= 0.0 && hi <= 1.0);
                if !ok {
                    return Err(Error::Evaluation(format!("scenario {}: bad cell {c:?}", r.scenario)));
                }
            }
        }
        Ok(())
    }

    /// Comparison table: one row per scenario, C-index then ROC AUC for
    /// follow-up years 1 to 5, intervals in parentheses.
    pub fn to_table(&self) -> String {
        let mut s = String::from("history_duration,c_index,1_year,2_year,3_year,4_year,5_year\n");
        for r in &self.rows {
            s.push_str(&r.scenario.to_string());
            s.push(',');
            s.push_str(&r.c_index.format());
            for c in &r.auc {
                s.push(',');
                s.push_str(&c.format());
            }
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
