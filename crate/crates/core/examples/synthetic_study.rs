//! End-to-end run on a generated cohort: one split, default training,
//! scenario table on the test part and the saliency localization check.
//!
//! `N`, `SEED` and `TRAIN_SEED` override the cohort size and the two seeds.

use std::time::Instant;

use longrisk::cohort::{expand_all, generate_cohort_with_truth, split_subjects, CohortConfig};
use longrisk::eval::{compare_localization, evaluate_scenarios, MetricReport, Provenance, ScenarioMask};
use longrisk::trainer::{make_validation_split, train, PreparedData, TrainConfig};
use longrisk::{ModelConfig, RiskModel, Rng};

fn env<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> longrisk::Result<()> {
    let defaults = CohortConfig::default();
    let cohort_cfg = CohortConfig { n_subjects: env("N", defaults.n_subjects), seed: env("SEED", defaults.seed), ..defaults };
    let model_cfg = ModelConfig::default();
    let tcfg = TrainConfig { seed: env("TRAIN_SEED", 0), ..Default::default() };
    let t0 = Instant::now();

    let rng = Rng::new(cohort_cfg.seed);
    let (cohort, truth) = generate_cohort_with_truth(&cohort_cfg, &mut rng.clone())?;
    let (train_tl, test_tl) = split_subjects(&cohort, 0.8, true, &mut rng.fork(1))?;
    let (fit, val) = make_validation_split(&train_tl, &mut rng.fork(2))?;
    let data = PreparedData::new(&model_cfg, &fit, &val)?;
    let out = train(&model_cfg, &tcfg, &data)?;
    for l in &out.state.log {
        eprintln!("epoch {:3}  train {:.4}  val {:.4}", l.epoch, l.train_loss, l.val_loss);
    }
    eprintln!("best epoch {} after {:.0?}", out.state.best_epoch, t0.elapsed());

    let samples = out.model.encode_samples(&expand_all(&test_tl))?;
    let res = evaluate_scenarios(&out.model, &samples, &ScenarioMask::table_set(), 100, &rng.fork(3), 1)?;
    print!("{}", MetricReport::from_repeats(&res, Provenance::default()).to_table());

    let untrained = RiskModel::new(out.model.cfg.clone(), tcfg.init_seed())?;
    let rows = compare_localization(&out.model, &untrained, &test_tl, &truth, 20, 1, 0.05)?;
    let wins = rows.iter().filter(|r| r.trained > r.untrained).count();
    println!("saliency: trained model localizes better on {wins}/{} subjects", rows.len());
    eprintln!("total {:.0?}", t0.elapsed());
    Ok(())
}
