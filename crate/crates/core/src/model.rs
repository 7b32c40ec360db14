//! The full risk model: visit encoder → time aggregator → hazard head.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::cohort::{survival_outcome, ImageConfig, SurvivalOutcome, TrajectorySample, VisitRecord, HISTORY_LEN, HORIZON};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::survival::{HazardHead, RiskCurve};
use crate::temporal::{HistoryMask, TimeAggregator};
use crate::tensor::Tensor;
use crate::visit_encoder::{self, EncoderMode, VisitEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_mode: EncoderMode,
    pub image: ImageConfig,
    /// Image and visit embedding width.
    pub d_img: usize,
    pub image_heads: usize,
    /// Time aggregator width.
    pub d_visit: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub freeze_image_aggregator: bool,
    /// Initial scale of the image aggregator's attention and feed-forward
    /// output weights relative to the default initialization.
    pub image_branch_scale: f64,
    /// Seed of the stand-in "pretrained" visit encoder; shared by every
    /// model built from this config.
    pub encoder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_mode: EncoderMode::RandomProjection,
            image: ImageConfig::default(),
            d_img: 256,
            image_heads: 4,
            d_visit: 128,
            n_heads: 4,
            dropout: 0.25,
            freeze_image_aggregator: true,
            image_branch_scale: 0.1,
            encoder_seed: 0x5eed,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_mode == EncoderMode::RandomProjection {
            self.image.validate()?;
        }
        for (name, d, h) in [("d_img", self.d_img, self.image_heads), ("d_visit", self.d_visit, self.n_heads)] {
            if d == 0 || h == 0 || d % h != 0 {
                return Err(Error::config(format!("{name} = {d} not divisible by {h} heads")));
            }
        }
        if !self.d_visit.is_multiple_of(2) {
            return Err(Error::config("d_visit must be even"));
        }
        if !(self.image_branch_scale >= 0.0 && self.image_branch_scale.is_finite()) {
            return Err(Error::config("image_branch_scale must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Visit representation cached ahead of training.
#[derive(Clone, Debug, PartialEq)]
pub enum VisitFeatures {
    /// Output of the frozen visit encoder, `[1 × d_img]`.
    Fused(Tensor),
    /// Per-image stub embeddings, when the image aggregator is trained.
    Images([Tensor; 4]),
}

/// A trajectory sample with its visits replaced by cached features.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub subject_id: String,
    pub now_year: i32,
    pub history: [Option<Arc<VisitFeatures>>; HISTORY_LEN],
    pub labels: [bool; HORIZON],
    pub label_mask: [bool; HORIZON],
}

impl EncodedSample {
    pub fn mask(&self) -> HistoryMask {
        HistoryMask::new(std::array::from_fn(|s| self.history[s].is_some()))
            .expect("now visit is always present")
    }

    pub fn outcome(&self) -> SurvivalOutcome {
        survival_outcome(&self.labels, &self.label_mask)
    }

    /// Copy with only the slots set in `visible` kept.
    pub fn restricted(&self, visible: &HistoryMask) -> EncodedSample {
        let mut out = self.clone();
        for s in 0..HISTORY_LEN {
            if !visible.is_present(s) {
                out.history[s] = None;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RiskModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub visit_encoder: VisitEncoder,
    pub time: TimeAggregator,
    pub head: HazardHead,
}

impl RiskModel {
    /// Builds a model. The visit encoder is drawn from `cfg.encoder_seed`,
    /// the trainable time aggregator and head from `init_seed`.
    pub fn new(cfg: ModelConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut enc_rng = Rng::new(cfg.encoder_seed);
        let visit_encoder =
            VisitEncoder::new(&mut store, cfg.encoder_mode, cfg.image, cfg.d_img, cfg.image_heads, &mut enc_rng)?;
        for id in [visit_encoder.block.wo.weight, visit_encoder.block.ff2.weight] {
            store.get_mut(id).data_mut().iter_mut().for_each(|w| *w *= cfg.image_branch_scale);
        }
        if cfg.freeze_image_aggregator {
            store.set_trainable(visit_encoder::PREFIX, false);
        }
        let mut rng = Rng::new(init_seed);
        let time = TimeAggregator::new(&mut store, cfg.d_img, cfg.d_visit, cfg.n_heads, cfg.dropout, &mut rng)?;
        let head = HazardHead::new(&mut store, cfg.d_visit, &mut rng);
        Ok(Self { cfg, store, visit_encoder, time, head })
    }

    /// Names of parameters that must never change during training.
    pub fn frozen_params(&self) -> Vec<String> {
        self.store
            .iter()
            .filter(|(_, t)| !t.requires_grad)
            .map(|(n, _)| n.to_string())
            .collect()
    }

    pub fn encode_visit_features(&self, visit: &VisitRecord) -> Result<VisitFeatures> {
        let emb = self.visit_encoder.stub_embeddings(&self.store, visit)?;
        if !self.cfg.freeze_image_aggregator {
            return Ok(VisitFeatures::Images(emb));
        }
        let mut g = Graph::new();
        let stub = emb.map(|t| g.constant(t));
        let v = self.visit_encoder.fuse(&mut g, &self.store, stub)?;
        Ok(VisitFeatures::Fused(g.value(v).detached()))
    }

    /// Encodes every distinct visit once and shares the result across samples.
    pub fn encode_samples(&self, samples: &[TrajectorySample]) -> Result<Vec<EncodedSample>> {
        let mut cache: HashMap<(String, i32), Arc<VisitFeatures>> = HashMap::new();
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let mut history: [Option<Arc<VisitFeatures>>; HISTORY_LEN] = Default::default();
            for (slot, v) in s.history.iter().enumerate() {
                let Some(v) = v else { continue };
                let key = (v.subject_id.clone(), v.visit_year);
                let f = match cache.get(&key) {
                    Some(f) => f.clone(),
                    None => {
                        let f = Arc::new(self.encode_visit_features(v)?);
                        cache.insert(key, f.clone());
                        f
                    }
                };
                history[slot] = Some(f);
            }
            out.push(EncodedSample {
                subject_id: s.subject_id.clone(),
                now_year: s.now_year,
                history,
                labels: s.labels,
                label_mask: s.label_mask,
            });
        }
        Ok(out)
    }

    fn visit_var(&self, g: &mut Graph, f: &VisitFeatures) -> Result<Var> {
        match f {
            VisitFeatures::Fused(t) => Ok(g.constant(t.clone())),
            VisitFeatures::Images(emb) => {
                let stub = emb.clone().map(|t| g.constant(t));
                self.visit_encoder.fuse(g, &self.store, stub)
            }
        }
    }

    /// Cumulative logits `[1 × 5]` for one sample.
    pub fn logits(&self, g: &mut Graph, sample: &EncodedSample, train: bool, rng: &mut Rng) -> Result<Var> {
        let mut visits: [Option<Var>; HISTORY_LEN] = [None; HISTORY_LEN];
        for (s, f) in sample.history.iter().enumerate() {
            if let Some(f) = f {
                visits[s] = Some(self.visit_var(g, f)?);
            }
        }
        self.logits_from_visits(g, &visits, sample.mask(), train, rng)
    }

    pub fn logits_from_visits(
        &self,
        g: &mut Graph,
        visits: &[Option<Var>; HISTORY_LEN],
        mask: HistoryMask,
        train: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let m = self.time.aggregate_history(g, &self.store, visits, mask, train, rng)?;
        self.head.logits(g, &self.store, m)
    }

    /// Eval-mode risk curve.
    pub fn predict(&self, sample: &EncodedSample) -> Result<RiskCurve> {
        Ok(self.predict_batch(std::slice::from_ref(sample))?[0])
    }

    /// Eval-mode risk curves, evaluated in chunks sharing one graph.
    pub fn predict_batch(&self, samples: &[EncodedSample]) -> Result<Vec<RiskCurve>> {
        let mut out = Vec::with_capacity(samples.len());
        let mut rng = Rng::new(0);
        for chunk in samples.chunks(32) {
            let mut g = Graph::new();
            for s in chunk {
                let z = self.logits(&mut g, s, false, &mut rng)?;
                let p = g.sigmoid(z);
                out.push(RiskCurve::from_slice(g.value(p).data())?);
            }
        }
        Ok(out)
    }

    /// Checkpoint with the model config under `"model"` plus `extra` fields.
    pub fn to_checkpoint(&self, extra: serde_json::Map<String, serde_json::Value>) -> Result<Checkpoint> {
        let mut meta = extra;
        meta.insert("model".into(), serde_json::to_value(&self.cfg)?);
        Ok(Checkpoint { metadata: serde_json::Value::Object(meta), params: self.store.clone() })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_value(
            ck.metadata
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("metadata has no model config".into()))?,
        )?;
        let mut model = Self::new(cfg, 0)?;
        model.store.load_values(&ck.params)?;
        Ok(model)
    }
}
