use anyhow::Result;
use clap::ArgMatches;
use longrisk::cohort::{generate_cohort_with_truth, write_cohort_archive, CohortConfig, SubjectTimeline, HORIZON};
use longrisk::Rng;

use super::out_dir;
use crate::args::{Cli, GenerateArgs};
use crate::config::Layers;
use crate::output::{self, RunManifest};

/// Exam counts in the layout of the cohort description table: for each
/// n in 1..=5, exams with at least n years of follow-up and exams followed
/// by a diagnosis within n years.
pub struct Summary {
    pub subjects: usize,
    pub exams: usize,
    pub diagnosed: usize,
    pub followup: [usize; HORIZON],
    pub cancer_within: [usize; HORIZON],
}

impl Summary {
    pub fn new(cohort: &[SubjectTimeline]) -> Self {
        let mut s = Summary {
            subjects: cohort.len(),
            exams: 0,
            diagnosed: cohort.iter().filter(|t| t.is_diagnosed()).count(),
            followup: [0; HORIZON],
            cancer_within: [0; HORIZON],
        };
        for t in cohort {
            for v in &t.visits {
                s.exams += 1;
                for n in 1..=HORIZON as i32 {
                    let i = n as usize - 1;
                    if t.last_followup_year - v.visit_year >= n {
                        s.followup[i] += 1;
                    }
                    if matches!(t.diagnosis_year, Some(dx) if dx - v.visit_year <= n) {
                        s.cancer_within[i] += 1;
                    }
                }
            }
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("n,exams_with_min_n_years_followup,exams_followed_by_cancer_within_n_years\n");
        for i in 0..HORIZON {
            out.push_str(&format!("{},{},{}\n", i + 1, self.followup[i], self.cancer_within[i]));
        }
        out
    }

    pub fn text(&self) -> String {
        let mut out = format!(
            "subjects {}, exams {}, diagnosed subjects {}\n\n n   exams with >= n years follow-up   exams followed by cancer within n years\n",
            self.subjects, self.exams, self.diagnosed
        );
        for i in 0..HORIZON {
            out.push_str(&format!("{:>2}   {:>31}   {:>39}\n", i + 1, self.followup[i], self.cancer_within[i]));
        }
        out
    }
}

pub fn run(cli: &Cli, a: &GenerateArgs, m: &ArgMatches) -> Result<()> {
    let started = output::now();
    let l = Layers::new(m, a.common.config.as_deref())?;
    let mut cfg = CohortConfig {
        n_subjects: l.get("subjects", a.subjects)?,
        seed: l.get("seed", a.seed)?,
        incidence: l.get("incidence", a.incidence)?,
        attendance: l.get("attendance", a.attendance)?,
        span_years: l.get("span_years", a.span_years)?,
        resolution: l.get("resolution", a.resolution)?,
        ..CohortConfig::default()
    };
    cfg.signal.peak_amplitude = l.get("peak_amplitude", a.peak_amplitude)?;
    cfg.signal.growth_rate = l.get("growth_rate", a.growth_rate)?;
    cfg.signal.pixel_noise = l.get("pixel_noise", a.pixel_noise)?;
    cfg.signal.benign_rate = l.get("benign_rate", a.benign_rate)?;
    cfg.validate()?;
    let dir = out_dir(cli, &l, &a.common, "cohort")?;
    output::prepare(&dir, a.common.force)?;

    let (cohort, truth) = generate_cohort_with_truth(&cfg, &mut Rng::new(cfg.seed))?;
    write_cohort_archive(&dir, &cohort)?;
    let summary = Summary::new(&cohort);

    let mut manifest = RunManifest::new("generate", a.common.config.as_deref(), started);
    manifest.master_seed = Some(cfg.seed);
    manifest.outputs.push(longrisk::cohort::MANIFEST_FILE.into());
    manifest.outputs.push("images".into());
    output::emit(&mut manifest, &dir, "cohort_config.json", serde_json::to_string_pretty(&cfg)? + "\n")?;
    output::emit(&mut manifest, &dir, "lesions.json", serde_json::to_string_pretty(&truth)? + "\n")?;
    output::emit(&mut manifest, &dir, "summary.csv", summary.csv())?;
    manifest.settings = l.merged();
    manifest.write(&dir)?;
    print!("{}", summary.text());
    println!("\nwrote {}", dir.display());
    Ok(())
}
