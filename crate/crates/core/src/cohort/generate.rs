//! Synthetic cohorts with a planted, growing lesion signal.
//!
//! Every image is tissue background plus pixel noise. For a subject who will
//! be diagnosed, both views of one breast also carry a Gaussian blob whose
//! amplitude grows exponentially toward the diagnosis year:
//!
//! ```text
//! A(t) = peak · exp(−rate · (diagnosis_year − t)) · (1 + jitter · ε_t)
//! ```
//!
//! Some never-diagnosed subjects carry a benign spot instead: a blob at the
//! same canonical positions whose amplitude is drawn once and stays constant
//! apart from the per-visit jitter. A single frame cannot tell a faint
//! early lesion from a benign spot; the trend over a sequence of frames can.

use serde::{Deserialize, Serialize};

use super::{Image, Laterality, Payload, Slot, SubjectTimeline, View, VisitRecord};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    /// Mean tissue intensity.
    pub background: f64,
    /// Per-subject standard deviation of the tissue intensity.
    pub background_sd: f64,
    /// Per-pixel, per-visit noise standard deviation.
    pub pixel_noise: f64,
    /// Spatial standard deviation of the lesion blob, in pixels.
    pub blob_sigma: f64,
    /// Blob amplitude in the diagnosis year.
    pub peak_amplitude: f64,
    /// Exponential growth rate of the amplitude, per year.
    pub growth_rate: f64,
    /// Multiplicative per-visit amplitude noise.
    pub amplitude_jitter: f64,
    /// Fraction of never-diagnosed subjects with a static benign spot.
    pub benign_rate: f64,
    /// Benign spot amplitudes are uniform on `[0, benign_max_amplitude]`.
    pub benign_max_amplitude: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            background: 0.2,
            background_sd: 0.02,
            pixel_noise: 0.1,
            blob_sigma: 1.5,
            peak_amplitude: 1.5,
            growth_rate: 0.5,
            amplitude_jitter: 0.15,
            benign_rate: 0.5,
            benign_max_amplitude: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_subjects: usize,
    /// First calendar year of the screening program.
    pub first_year: i32,
    /// Number of screening years (visits per subject are 1..=span_years).
    pub span_years: usize,
    /// Probability of attending each annual screening.
    pub attendance: f64,
    /// Fraction of subjects who receive a diagnosis.
    pub incidence: f64,
    /// Diagnosis happens 0..=max_diagnosis_lag years after the last visit.
    pub max_diagnosis_lag: i32,
    /// Healthy follow-up extends 0..=max_followup_extra years past the last visit.
    pub max_followup_extra: i32,
    /// Square image side, in pixels.
    pub resolution: usize,
    pub signal: SignalConfig,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_subjects: 400,
            first_year: 2008,
            span_years: 9,
            attendance: 0.8,
            incidence: 0.3,
            max_diagnosis_lag: 4,
            max_followup_extra: 5,
            resolution: 16,
            signal: SignalConfig::default(),
            seed: 2024,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::config("cohort needs at least one subject"));
        }
        if self.span_years == 0 {
            return Err(Error::config("span_years must be positive"));
        }
        for (name, p) in [
            ("attendance", self.attendance),
            ("incidence", self.incidence),
            ("benign_rate", self.signal.benign_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.resolution < 8 {
            return Err(Error::config(format!("resolution {} below 8", self.resolution)));
        }
        if self.max_diagnosis_lag < 0 || self.max_followup_extra < 0 {
            return Err(Error::config("lags must be non-negative"));
        }
        let s = &self.signal;
        if s.pixel_noise < 0.0
            || s.blob_sigma <= 0.0
            || s.amplitude_jitter < 0.0
            || s.background_sd < 0.0
            || s.benign_max_amplitude < 0.0
        {
            return Err(Error::config("signal noise levels must be non-negative, blob_sigma positive"));
        }
        Ok(())
    }
}

/// Ground truth for a diagnosed subject's planted lesion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionTruth {
    pub subject_id: String,
    pub laterality: Laterality,
    /// Blob center `(row, col)` in the CC and MLO views.
    pub centers: [(f64, f64); 2],
    pub sigma: f64,
    /// `(visit_year, amplitude)` for every visit.
    pub amplitudes: Vec<(i32, f64)>,
}

impl LesionTruth {
    pub fn center(&self, view: View) -> (f64, f64) {
        match view {
            View::Cc => self.centers[0],
            View::Mlo => self.centers[1],
        }
    }

    /// Pixels within two blob standard deviations of the center.
    pub fn support(&self, view: View, rows: usize, cols: usize) -> Vec<bool> {
        let (cr, cc) = self.center(view);
        let r2 = (2.0 * self.sigma).powi(2);
        (0..rows * cols)
            .map(|i| {
                let (r, c) = ((i / cols) as f64, (i % cols) as f64);
                (r - cr).powi(2) + (c - cc).powi(2) <= r2
            })
            .collect()
    }

    pub fn amplitude_at(&self, year: i32) -> Option<f64> {
        self.amplitudes.iter().find(|(y, _)| *y == year).map(|(_, a)| *a)
    }
}

pub fn generate_cohort(cfg: &CohortConfig, rng: &mut Rng) -> Result<Vec<SubjectTimeline>> {
    Ok(generate_cohort_with_truth(cfg, rng)?.0)
}

/// Generates a cohort together with the lesion ground truth of every
/// diagnosed subject.
pub fn generate_cohort_with_truth(
    cfg: &CohortConfig,
    rng: &mut Rng,
) -> Result<(Vec<SubjectTimeline>, Vec<LesionTruth>)> {
    cfg.validate()?;
    let mut timelines = Vec::with_capacity(cfg.n_subjects);
    let mut truths = Vec::new();
    let width = cfg.n_subjects.to_string().len().max(4);
    for i in 0..cfg.n_subjects {
        let id = format!("S{:0width$}", i + 1);
        let diagnosed = rng.bernoulli(cfg.incidence);

        let mut years: Vec<i32> = (0..cfg.span_years)
            .filter(|_| rng.bernoulli(cfg.attendance))
            .map(|k| cfg.first_year + k as i32)
            .collect();
        if years.is_empty() {
            years.push(cfg.first_year + rng.below(cfg.span_years) as i32);
        }
        let last_visit = *years.last().unwrap();
        let (diagnosis_year, last_followup_year) = if diagnosed {
            let dx = last_visit + rng.range_inclusive(0, i64::from(cfg.max_diagnosis_lag)) as i32;
            (Some(dx), dx)
        } else {
            let fu = last_visit + rng.range_inclusive(0, i64::from(cfg.max_followup_extra)) as i32;
            (None, fu)
        };

        let sig = &cfg.signal;
        let tissue = sig.background + sig.background_sd * rng.normal();
        let res = cfg.resolution as f64;
        let lesion = diagnosis_year.map(|dx| {
            let (laterality, centers) = place_blob(res, rng);
            let amplitudes = years
                .iter()
                .map(|&y| {
                    let base = sig.peak_amplitude * (-sig.growth_rate * f64::from(dx - y)).exp();
                    (y, jittered(base, sig.amplitude_jitter, rng))
                })
                .collect();
            LesionTruth {
                subject_id: id.clone(),
                laterality,
                centers,
                sigma: sig.blob_sigma,
                amplitudes,
            }
        });
        let benign = (diagnosis_year.is_none() && rng.bernoulli(sig.benign_rate)).then(|| {
            let (laterality, centers) = place_blob(res, rng);
            let base = sig.benign_max_amplitude * rng.uniform();
            let amplitudes = years.iter().map(|&y| (y, jittered(base, sig.amplitude_jitter, rng))).collect();
            LesionTruth {
                subject_id: id.clone(),
                laterality,
                centers,
                sigma: sig.blob_sigma,
                amplitudes,
            }
        });
        let spot = lesion.as_ref().or(benign.as_ref());

        let mut visits = Vec::with_capacity(years.len());
        for &year in &years {
            let images: [Payload; 4] = std::array::from_fn(|s| {
                let slot = Slot::ALL[s];
                let blob = spot
                    .filter(|l| l.laterality == slot.laterality)
                    .map(|l| (l.center(slot.view), l.amplitude_at(year).unwrap_or(0.0)));
                Payload::Image(render(cfg.resolution, tissue, sig, blob, rng))
            });
            visits.push(VisitRecord::new(id.clone(), year, images)?);
        }
        timelines.push(SubjectTimeline::new(id, visits, diagnosis_year, last_followup_year)?);
        truths.extend(lesion);
    }
    Ok((timelines, truths))
}

/// Random side and per-view centers around the canonical blob positions.
fn place_blob(res: f64, rng: &mut Rng) -> (Laterality, [(f64, f64); 2]) {
    let laterality = if rng.bernoulli(0.5) { Laterality::Left } else { Laterality::Right };
    let mut jitter = || 1.5 * (rng.uniform() - 0.5);
    let centers = [
        (0.45 * res + jitter(), 0.35 * res + jitter()),
        (0.55 * res + jitter(), 0.40 * res + jitter()),
    ];
    (laterality, centers)
}

fn jittered(base: f64, jitter: f64, rng: &mut Rng) -> f64 {
    (base * (1.0 + jitter * rng.normal())).max(0.0)
}

/// One image. Pixel values are rounded to `f32` precision so that cohorts
/// survive a float-image round trip bit-exactly.
fn render(
    n: usize,
    tissue: f64,
    sig: &SignalConfig,
    blob: Option<((f64, f64), f64)>,
    rng: &mut Rng,
) -> Image {
    let inv = 1.0 / (2.0 * sig.blob_sigma * sig.blob_sigma);
    let data = (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64, (i % n) as f64);
            let mut v = tissue + sig.pixel_noise * rng.normal();
            if let Some(((cr, cc), amp)) = blob {
                v += amp * (-((r - cr).powi(2) + (c - cc).powi(2)) * inv).exp();
            }
            f64::from(v as f32)
        })
        .collect();
    Image::new(n, n, data).expect("non-empty image")
}
