//! Longitudinal screening cohorts: visits, subject timelines, trajectory
//! samples, and the tooling that produces them.

mod expand;
mod generate;
mod image;
mod manifest;
mod split;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use expand::{expand_all, expand_trajectories};
pub use generate::{generate_cohort, generate_cohort_with_truth, CohortConfig, LesionTruth, SignalConfig};
pub use image::{preprocess_image, resize_bilinear, Image, ImageConfig};
pub use manifest::{load_manifest, read_pfm, write_cohort_archive, write_pfm, MANIFEST_FILE};
pub use split::split_subjects;

/// Number of history slots (offsets −4..0).
pub const HISTORY_LEN: usize = 5;
/// Number of follow-up years predicted.
pub const HORIZON: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Laterality {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    Cc,
    Mlo,
}

/// One of the four images of a screening visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub laterality: Laterality,
    pub view: View,
}

impl Slot {
    pub const L_CC: Slot = Slot { laterality: Laterality::Left, view: View::Cc };
    pub const L_MLO: Slot = Slot { laterality: Laterality::Left, view: View::Mlo };
    pub const R_CC: Slot = Slot { laterality: Laterality::Right, view: View::Cc };
    pub const R_MLO: Slot = Slot { laterality: Laterality::Right, view: View::Mlo };
    /// Storage order of the four payloads in a [`VisitRecord`].
    pub const ALL: [Slot; 4] = [Slot::L_CC, Slot::L_MLO, Slot::R_CC, Slot::R_MLO];

    pub fn index(self) -> usize {
        match (self.laterality, self.view) {
            (Laterality::Left, View::Cc) => 0,
            (Laterality::Left, View::Mlo) => 1,
            (Laterality::Right, View::Cc) => 2,
            (Laterality::Right, View::Mlo) => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Slot> {
        Slot::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::contract(format!("no image slot {i}")))
    }

    /// Manifest column name, e.g. `L_CC`.
    pub fn column(self) -> &'static str {
        ["L_CC", "L_MLO", "R_CC", "R_MLO"][self.index()]
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

/// Image content of one slot: raw pixels or a precomputed embedding.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Image(Image),
    Embedding(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayloadKind {
    Image,
    Embedding,
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Image(_) => PayloadKind::Image,
            Payload::Embedding(_) => PayloadKind::Embedding,
        }
    }

    pub fn as_image(&self) -> Option<&Image> {
        match self {
            Payload::Image(img) => Some(img),
            Payload::Embedding(_) => None,
        }
    }
}

/// One screening visit: four images in [`Slot::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitRecord {
    pub subject_id: String,
    pub visit_year: i32,
    pub images: [Payload; 4],
}

impl VisitRecord {
    pub fn new(subject_id: impl Into<String>, visit_year: i32, images: [Payload; 4]) -> Result<Self> {
        let v = Self {
            subject_id: subject_id.into(),
            visit_year,
            images,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn kind(&self) -> PayloadKind {
        self.images[0].kind()
    }

    pub fn payload(&self, slot: Slot) -> &Payload {
        &self.images[slot.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::Validation {
            subject: self.subject_id.clone(),
            message,
        };
        let kind = self.kind();
        if self.images.iter().any(|p| p.kind() != kind) {
            return Err(invalid(format!("visit {} mixes images and embeddings", self.visit_year)));
        }
        match &self.images[0] {
            Payload::Image(first) => {
                for p in &self.images {
                    let img = p.as_image().unwrap();
                    if img.rows() != first.rows() || img.cols() != first.cols() {
                        return Err(invalid(format!(
                            "visit {} images differ in resolution",
                            self.visit_year
                        )));
                    }
                }
            }
            Payload::Embedding(first) => {
                for p in &self.images {
                    if let Payload::Embedding(e) = p {
                        if e.len() != first.len() || e.is_empty() {
                            return Err(invalid(format!(
                                "visit {} embeddings differ in width",
                                self.visit_year
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// All visits of one subject plus diagnosis and follow-up information.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTimeline {
    pub subject_id: String,
    pub visits: Vec<Arc<VisitRecord>>,
    pub diagnosis_year: Option<i32>,
    pub last_followup_year: i32,
}

impl SubjectTimeline {
    /// Builds a timeline, sorting visits by year and checking invariants.
    pub fn new(
        subject_id: impl Into<String>,
        mut visits: Vec<VisitRecord>,
        diagnosis_year: Option<i32>,
        last_followup_year: i32,
    ) -> Result<Self> {
        visits.sort_by_key(|v| v.visit_year);
        let t = Self {
            subject_id: subject_id.into(),
            visits: visits.into_iter().map(Arc::new).collect(),
            diagnosis_year,
            last_followup_year,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn is_diagnosed(&self) -> bool {
        self.diagnosis_year.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::Validation {
            subject: self.subject_id.clone(),
            message,
        };
        for pair in self.visits.windows(2) {
            if pair[0].visit_year >= pair[1].visit_year {
                return Err(invalid(format!(
                    "visit years not strictly increasing ({} then {})",
                    pair[0].visit_year, pair[1].visit_year
                )));
            }
        }
        for v in &self.visits {
            if v.subject_id != self.subject_id {
                return Err(invalid(format!("visit belongs to subject {}", v.subject_id)));
            }
            v.validate()?;
        }
        if let (Some(first), Some(last)) = (self.visits.first(), self.visits.last()) {
            if let Some(dx) = self.diagnosis_year {
                if dx < first.visit_year {
                    return Err(invalid(format!(
                        "diagnosis year {dx} precedes first visit {}",
                        first.visit_year
                    )));
                }
            }
            if self.last_followup_year < last.visit_year {
                return Err(invalid(format!(
                    "last follow-up {} precedes last visit {}",
                    self.last_followup_year, last.visit_year
                )));
            }
            let kind = first.kind();
            if self.visits.iter().any(|v| v.kind() != kind) {
                return Err(invalid("visits mix images and embeddings".into()));
            }
        }
        Ok(())
    }
}

/// One training/evaluation unit: a "now" visit with up to four prior annual
/// visits and cumulative follow-up labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    pub subject_id: String,
    pub now_year: i32,
    /// Slot `s` holds the visit at offset `s − 4` years (oldest first).
    pub history: [Option<Arc<VisitRecord>>; HISTORY_LEN],
    /// `labels[k]` is 1 iff diagnosis occurs within `k + 1` years of now.
    /// Meaningful only where `label_mask[k]`.
    pub labels: [bool; HORIZON],
    /// `true` where the label is known (not censored).
    pub label_mask: [bool; HORIZON],
}

impl TrajectorySample {
    pub fn present(&self) -> [bool; HISTORY_LEN] {
        std::array::from_fn(|s| self.history[s].is_some())
    }

    pub fn now_visit(&self) -> &Arc<VisitRecord> {
        self.history[HISTORY_LEN - 1]
            .as_ref()
            .expect("offset 0 is always present")
    }

    pub fn n_known(&self) -> usize {
        self.label_mask.iter().filter(|&&m| m).count()
    }

    /// Outcome in whole years after now: first year with a positive label, or
    /// censored after the last known year.
    pub fn outcome(&self) -> SurvivalOutcome {
        survival_outcome(&self.labels, &self.label_mask)
    }
}

/// First known positive year (event), or the number of leading known
/// years (censored).
pub fn survival_outcome(labels: &[bool; HORIZON], mask: &[bool; HORIZON]) -> SurvivalOutcome {
    match (0..HORIZON).find(|&k| mask[k] && labels[k]) {
        Some(k) => SurvivalOutcome { time: k as u32 + 1, event: true },
        None => SurvivalOutcome {
            time: mask.iter().take_while(|&&m| m).count() as u32,
            event: false,
        },
    }
}

/// Event (diagnosis) at `time` years after now, or event-free through `time`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time: u32,
    pub event: bool,
}
