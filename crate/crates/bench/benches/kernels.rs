use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use longrisk::cohort::{expand_all, generate_cohort, CohortConfig, SurvivalOutcome};
use longrisk::eval::{concordance_index, roc_auc, score_scenario, ScenarioMask};
use longrisk::nn::TransformerBlock;
use longrisk::trainer::{train_model, TrainConfig};
use longrisk::{Graph, ModelConfig, ParamStore, RiskModel, Rng, Tensor};

fn matmul(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let a = Tensor::randn(&[128, 256], 1.0, &mut rng);
    let b = Tensor::randn(&[256, 128], 1.0, &mut rng);
    c.bench_function("matmul 128x256x128 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, y) = (g.input(a.clone()), g.input(b.clone()));
            let z = g.matmul(x, y).unwrap();
            let s = g.sum(z);
            g.backward(s).unwrap();
            black_box(g.grad(x).map(|t| t[0]));
        })
    });
}

fn block(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let mut store = ParamStore::new();
    let blk = TransformerBlock::new(&mut store, "b", 128, 4, &mut rng).unwrap();
    let x = Tensor::randn(&[5, 128], 1.0, &mut rng);
    let keep = [true, true, false, true, true];
    c.bench_function("transformer block 5x128 eval forward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            black_box(blk.forward(&mut g, &store, v, Some(&keep), 0.0, false, &mut Rng::new(0)).unwrap());
        })
    });
}

fn cohort() -> CohortConfig {
    CohortConfig { n_subjects: 60, seed: 3, ..CohortConfig::default() }
}

fn pipeline(c: &mut Criterion) {
    let cfg = cohort();
    let timelines = generate_cohort(&cfg, &mut Rng::new(cfg.seed)).unwrap();
    c.bench_function("generate 60-subject cohort", |bench| {
        bench.iter(|| black_box(generate_cohort(&cfg, &mut Rng::new(cfg.seed)).unwrap()))
    });
    c.bench_function("expand trajectories", |bench| bench.iter(|| black_box(expand_all(&timelines))));

    let model = RiskModel::new(ModelConfig::default(), 4).unwrap();
    let samples = expand_all(&timelines);
    c.bench_function("encode visits (frozen encoder)", |bench| {
        bench.iter(|| black_box(model.encode_samples(&samples[..64]).unwrap()))
    });
    let encoded = model.encode_samples(&samples).unwrap();
    let scenario = ScenarioMask::annual(4).unwrap();
    c.bench_function("score scenario 4*", |bench| {
        bench.iter(|| black_box(score_scenario(&model, &encoded, scenario).unwrap()))
    });

    let (fit, val) = encoded.split_at(encoded.len() * 3 / 4);
    let tcfg = TrainConfig { max_epochs: 1, patience: 1, ..TrainConfig::default() };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("one epoch", |bench| {
        bench.iter_batched(
            || RiskModel::new(ModelConfig::default(), 5).unwrap(),
            |m| black_box(train_model(m, &tcfg, fit, val).unwrap().state.best_validation_loss),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut rng = Rng::new(6);
    let n = 2000;
    let scores: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let labels: Vec<bool> = (0..n).map(|i| i % 7 == 0).collect();
    let outcomes: Vec<SurvivalOutcome> =
        (0..n).map(|i| SurvivalOutcome { time: 1 + (i % 5) as u32, event: i % 3 == 0 }).collect();
    c.bench_function("roc_auc n=2000", |bench| bench.iter(|| black_box(roc_auc(&scores, &labels).unwrap())));
    c.bench_function("concordance_index n=2000", |bench| {
        bench.iter(|| black_box(concordance_index(&scores, &outcomes).unwrap()))
    });
}

criterion_group!(benches, matmul, block, pipeline, metrics);
criterion_main!(benches);
