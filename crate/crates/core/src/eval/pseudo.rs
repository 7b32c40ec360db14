//! Random pseudo test sets: one eligible "now" sample per subject.

use crate::cohort::{TrajectorySample, HORIZON};
use crate::error::{Error, Result};
use crate::model::EncodedSample;
use crate::rng::Rng;

/// Anything with a subject and per-year label knowledge.
pub trait Labeled {
    fn subject(&self) -> &str;
    fn known(&self) -> &[bool; HORIZON];
}

impl Labeled for TrajectorySample {
    fn subject(&self) -> &str {
        &self.subject_id
    }
    fn known(&self) -> &[bool; HORIZON] {
        &self.label_mask
    }
}

impl Labeled for EncodedSample {
    fn subject(&self) -> &str {
        &self.subject_id
    }
    fn known(&self) -> &[bool; HORIZON] {
        &self.label_mask
    }
}

/// Eligible sample indices per subject for one follow-up year, subjects in
/// order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Eligibility {
    pub year: usize,
    pub groups: Vec<(String, Vec<usize>)>,
}

impl Eligibility {
    /// Samples whose label at `year` (1-based) is known.
    pub fn for_year<T: Labeled>(samples: &[T], year: usize) -> Result<Self> {
        if !(1..=HORIZON).contains(&year) {
            return Err(Error::contract(format!("follow-up year {year} outside 1..5")));
        }
        Ok(Self::build(samples, year, |s| s.known()[year - 1]))
    }

    /// Samples with at least the first follow-up year known; used for the
    /// C-index, which ranks on the five-year risk.
    pub fn for_concordance<T: Labeled>(samples: &[T]) -> Self {
        Self::build(samples, HORIZON, |s| s.known()[0])
    }

    fn build<T: Labeled>(samples: &[T], year: usize, ok: impl Fn(&T) -> bool) -> Self {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        let mut pos = std::collections::HashMap::new();
        for (i, s) in samples.iter().enumerate() {
            let id = s.subject();
            let g = *pos.entry(id.to_string()).or_insert_with(|| {
                groups.push((id.to_string(), Vec::new()));
                groups.len() - 1
            });
            if ok(s) {
                groups[g].1.push(i);
            }
        }
        groups.retain(|(_, v)| !v.is_empty());
        Self { year, groups }
    }

    /// Draws one eligible sample per subject uniformly at random.
    pub fn draw(&self, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.groups.is_empty() {
            return Err(Error::Evaluation(format!(
                "no test subject has a known label at year {}",
                self.year
            )));
        }
        Ok(self.groups.iter().map(|(_, v)| v[rng.below(v.len())]).collect())
    }
}

/// One pseudo test set for follow-up year `year`, as indices into `samples`.
pub fn build_pseudo_test_set<T: Labeled>(samples: &[T], year: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    Eligibility::for_year(samples, year)?.draw(rng)
}
