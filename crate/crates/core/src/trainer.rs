//! Training loop, early stopping and grid search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::cohort::{split_subjects, SubjectTimeline, HISTORY_LEN};
use crate::error::{Error, Result};
use crate::model::{EncodedSample, ModelConfig, RiskModel};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::survival::{self, LossWeights};

pub const GRID_D_VISIT: [usize; 3] = [128, 256, 512];
pub const GRID_HEADS: [usize; 3] = [1, 4, 8];
pub const GRID_L2: [f64; 3] = [1e-4, 1e-5, 1e-6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub d_visit: usize,
    pub n_heads: usize,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Randomly hide past visits during training.
    pub augment: bool,
    /// Probability of hiding each present past visit.
    pub drop_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            dropout: 0.25,
            d_visit: 128,
            n_heads: 4,
            l2: 1e-5,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            augment: true,
            drop_prob: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, grid_mode: bool) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {}", self.lr)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config(format!("l2 {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::config(format!("drop probability {} outside [0, 1]", self.drop_prob)));
        }
        if self.n_heads == 0 || !self.d_visit.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_visit {} not divisible by {} heads",
                self.d_visit, self.n_heads
            )));
        }
        if grid_mode {
            if !GRID_D_VISIT.contains(&self.d_visit) {
                return Err(Error::config(format!("d_visit {} not in {GRID_D_VISIT:?}", self.d_visit)));
            }
            if !GRID_HEADS.contains(&self.n_heads) {
                return Err(Error::config(format!("n_heads {} not in {GRID_HEADS:?}", self.n_heads)));
            }
            if !GRID_L2.contains(&self.l2) {
                return Err(Error::config(format!("l2 {} not in {GRID_L2:?}", self.l2)));
            }
        }
        Ok(())
    }

    /// Model config with this run's architecture choices applied.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig { d_visit: self.d_visit, n_heads: self.n_heads, dropout: self.dropout, ..base.clone() }
    }

    /// Seed of the parameters a run starts from.
    pub fn init_seed(&self) -> u64 {
        Rng::derive(self.seed, 0).next_u64()
    }
}

/// All 27 combinations of width, heads and L2 over `base`, each with its
/// own seed split from `base.seed`.
pub fn full_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut out = Vec::with_capacity(27);
    for &d_visit in &GRID_D_VISIT {
        for &n_heads in &GRID_HEADS {
            for &l2 in &GRID_L2 {
                out.push(TrainConfig { d_visit, n_heads, l2, ..base.clone() });
            }
        }
    }
    for (i, c) in out.iter_mut().enumerate() {
        c.seed = Rng::derive(base.seed, i as u64).next_u64();
    }
    out
}

/// Subject-level 75/25 split of the training subjects into fit and
/// validation parts, stratified by diagnosis when both strata have at
/// least two subjects.
pub fn make_validation_split(
    train: &[SubjectTimeline],
    rng: &mut Rng,
) -> Result<(Vec<SubjectTimeline>, Vec<SubjectTimeline>)> {
    if train.len() < 4 {
        return Err(Error::Split(format!(
            "{} training subjects; need at least 4 for a validation split",
            train.len()
        )));
    }
    let n_dx = train.iter().filter(|t| t.is_diagnosed()).count();
    let stratify = n_dx >= 2 && train.len() - n_dx >= 2;
    split_subjects(train, 0.75, stratify, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub best_validation_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub best_params: ParamStore,
    pub log: Vec<EpochLog>,
    /// Samples whose loss was skipped because no follow-up year was known.
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model holding the best snapshot.
    pub model: RiskModel,
    pub state: TrainState,
    pub weights: LossWeights,
}

/// Hides each present past visit with probability `p`; the now visit stays.
fn augment(sample: &EncodedSample, p: f64, rng: &mut Rng) -> EncodedSample {
    let mut out = sample.clone();
    for s in 0..HISTORY_LEN - 1 {
        if out.history[s].is_some() && rng.bernoulli(p) {
            out.history[s] = None;
        }
    }
    out
}

/// Mean eval-mode loss over `samples`; samples with no known year are skipped.
pub fn mean_loss(model: &RiskModel, samples: &[EncodedSample], weights: &LossWeights) -> Result<f64> {
    let curves = model.predict_batch(samples)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (s, c) in samples.iter().zip(&curves) {
        if let Some(l) = survival::survival_loss_value(c, &s.labels, &s.label_mask, weights) {
            total += l;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Evaluation("no sample has a known label".into()));
    }
    Ok(total / n as f64)
}

fn numeric_error(what: &str, epoch: usize, batch: usize, store: &ParamStore) -> Error {
    let norms: Vec<String> = store.norms().into_iter().map(|(n, v)| format!("{n}={v:.4e}")).collect();
    Error::Numeric(format!(
        "{what} at epoch {epoch}, batch {batch}; parameter norms: {}",
        norms.join(", ")
    ))
}

/// Trains `model` on encoded fit samples with early stopping on the
/// validation loss. Loss weights come from the fit samples only.
pub fn train_model(
    mut model: RiskModel,
    cfg: &TrainConfig,
    fit: &[EncodedSample],
    val: &[EncodedSample],
) -> Result<TrainOutcome> {
    cfg.validate(false)?;
    if fit.is_empty() || val.is_empty() {
        return Err(Error::config("training needs nonempty fit and validation sets"));
    }
    let weights = survival::weights_from_counts(&counts(fit))?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.l2, ..AdamConfig::default() });
    let mut rng = Rng::derive(cfg.seed, 1);
    let mut state = TrainState {
        epoch: 0,
        best_validation_loss: f64::INFINITY,
        best_epoch: 0,
        epochs_since_improvement: 0,
        best_params: model.store.clone(),
        log: Vec::new(),
        skipped: 0,
    };
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut epoch_total = 0.0;
        let mut epoch_n = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut g = Graph::new();
            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = if cfg.augment { augment(&fit[i], cfg.drop_prob, &mut rng) } else { fit[i].clone() };
                let tag = |e: Error| match e {
                    Error::Numeric(m) => numeric_error(&m, epoch, b, &model.store),
                    other => other,
                };
                let z = model.logits(&mut g, &s, true, &mut rng).map_err(tag)?;
                match survival::survival_loss(&mut g, z, &s.labels, &s.label_mask, &weights).map_err(tag)? {
                    Some(l) => terms.push(l),
                    None => state.skipped += 1,
                }
            }
            if terms.is_empty() {
                continue;
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = g.add(total, t)?;
            }
            let loss = g.scale(total, 1.0 / terms.len() as f64);
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(numeric_error("non-finite training loss", epoch, b, &model.store));
            }
            epoch_total += value * terms.len() as f64;
            epoch_n += terms.len();
            g.backward(loss)?;
            g.accumulate_param_grads(&mut model.store);
            adam.step(&mut model.store)?;
            if model.store.iter().any(|(_, t)| t.data().iter().any(|v| !v.is_finite())) {
                return Err(numeric_error("non-finite parameters after update", epoch, b, &model.store));
            }
        }
        let train_loss = if epoch_n > 0 { epoch_total / epoch_n as f64 } else { f64::NAN };
        let val_loss = mean_loss(&model, val, &weights)?;
        if !val_loss.is_finite() {
            return Err(numeric_error("non-finite validation loss", epoch, 0, &model.store));
        }
        state.epoch = epoch;
        state.log.push(EpochLog { epoch, train_loss, val_loss });
        if val_loss < state.best_validation_loss {
            state.best_validation_loss = val_loss;
            state.best_epoch = epoch;
            state.best_params = model.store.clone();
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
        }
        if state.epochs_since_improvement >= cfg.patience {
            break;
        }
    }
    model.store = state.best_params.clone();
    Ok(TrainOutcome { model, state, weights })
}

fn counts(samples: &[EncodedSample]) -> [[usize; 2]; crate::cohort::HORIZON] {
    let mut c = [[0usize; 2]; crate::cohort::HORIZON];
    for s in samples {
        for k in 0..c.len() {
            if s.label_mask[k] {
                c[k][s.labels[k] as usize] += 1;
            }
        }
    }
    c
}

/// Encoded fit/validation samples for one training configuration family.
/// Visit features depend only on the shared visit encoder, so they can be
/// computed once for every grid point.
pub struct PreparedData {
    pub fit: Vec<EncodedSample>,
    pub val: Vec<EncodedSample>,
}

impl PreparedData {
    pub fn new(base: &ModelConfig, fit: &[SubjectTimeline], val: &[SubjectTimeline]) -> Result<Self> {
        let encoder = RiskModel::new(base.clone(), 0)?;
        Ok(Self {
            fit: encoder.encode_samples(&crate::cohort::expand_all(fit))?,
            val: encoder.encode_samples(&crate::cohort::expand_all(val))?,
        })
    }
}

/// Builds a fresh model for `cfg` and trains it.
pub fn train(base: &ModelConfig, cfg: &TrainConfig, data: &PreparedData) -> Result<TrainOutcome> {
    cfg.validate(false)?;
    let model = RiskModel::new(cfg.model_config(base), cfg.init_seed())?;
    train_model(model, cfg, &data.fit, &data.val)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: TrainConfig,
    pub best_val_loss: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    /// Index of the winner in `rows`.
    pub best: usize,
    pub rows: Vec<GridRow>,
    pub outcome: TrainOutcome,
}

/// Trains one model per grid point (up to `jobs` at a time) and keeps the
/// one with the lowest validation loss; ties go to the earlier point.
pub fn grid_search(
    base: &ModelConfig,
    grid: &[TrainConfig],
    data: &PreparedData,
    jobs: usize,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::config("empty grid"));
    }
    let run = |c: &TrainConfig| train(base, c, data);
    let results: Vec<Result<TrainOutcome>> = if jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(|| grid.par_iter().map(run).collect())
    } else {
        grid.iter().map(run).collect()
    };

    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, TrainOutcome)> = None;
    let mut first_err = None;
    for (i, (c, r)) in grid.iter().zip(results).enumerate() {
        match r {
            Ok(o) => {
                rows.push(GridRow {
                    config: c.clone(),
                    best_val_loss: Some(o.state.best_validation_loss),
                    epochs: o.state.epoch,
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((_, b)) => o.state.best_validation_loss < b.state.best_validation_loss,
                };
                if better {
                    best = Some((i, o));
                }
            }
            Err(e) => {
                rows.push(GridRow { config: c.clone(), best_val_loss: None, epochs: 0, error: Some(e.to_string()) });
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((best, outcome)) => Ok(GridResult { best, rows, outcome }),
        None => Err(first_err.expect("nonempty grid")),
    }
}

/// Grid results as CSV, one row per point.
pub fn grid_table(rows: &[GridRow]) -> String {
    let mut s = String::from("d_visit,n_heads,l2,lr,seed,best_val_loss,epochs,error\n");
    for r in rows {
        let c = &r.config;
        s.push_str(&format!(
            "{},{},{:e},{:e},{},{},{},{}\n",
            c.d_visit,
            c.n_heads,
            c.l2,
            c.lr,
            c.seed,
            r.best_val_loss.map(|v| format!("{v:.6}")).unwrap_or_default(),
            r.epochs,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        ));
    }
    s
}
