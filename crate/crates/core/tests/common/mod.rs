//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use longrisk::cohort::{
    expand_trajectories, CohortConfig, Payload, SubjectTimeline, SurvivalOutcome, TrajectorySample, VisitRecord,
    HORIZON,
};
use longrisk::{Graph, Result, Rng, Tensor, Var};

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Builds `Σ f(inputs) ⊙ W` for a fixed random `W` and returns the largest
/// relative error between the reverse-mode gradient and central differences,
/// over every element of every input.
pub fn grad_check(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>, seed: u64) -> f64 {
    let eval = |xs: &[Tensor], backward: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars).expect("forward");
        let shape = g.value(out).shape().to_vec();
        let w = g.constant(Tensor::randn(&shape, 1.0, &mut Rng::new(seed)));
        let prod = g.mul(out, w).expect("weights match output");
        let loss = g.sum(prod);
        let value = g.value(loss).data()[0];
        if !backward {
            return (value, Vec::new());
        }
        g.backward(loss).expect("backward");
        let grads = vars
            .iter()
            .zip(xs)
            .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Moves every entry at least `gap` away from zero (keeps ReLU off its kink).
pub fn away_from_zero(mut t: Tensor, gap: f64) -> Tensor {
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + gap);
    }
    t
}

// ---------------------------------------------------------------- labels

/// Scans each follow-up year separately against the raw timeline fields.
pub fn brute_force_labels(t: &SubjectTimeline, now: i32) -> ([bool; HORIZON], [bool; HORIZON]) {
    let mut labels = [false; HORIZON];
    let mut known = [false; HORIZON];
    for k in 1..=HORIZON as i32 {
        let end = now + k;
        let diagnosed = matches!(t.diagnosis_year, Some(dx) if dx <= end);
        labels[(k - 1) as usize] = diagnosed;
        known[(k - 1) as usize] = diagnosed || t.last_followup_year >= end;
    }
    (labels, known)
}

fn tiny_payload() -> [Payload; 4] {
    let p = Payload::Embedding(vec![0.5, -0.5]);
    [p.clone(), p.clone(), p.clone(), p]
}

/// Arbitrary valid timeline over 2000..2015 with random gaps, diagnosis and
/// follow-up.
pub fn random_timeline(rng: &mut Rng, id: &str) -> SubjectTimeline {
    let mut years: Vec<i32> = (2000..2012).filter(|_| rng.bernoulli(0.5)).collect();
    if years.is_empty() {
        years.push(2000 + rng.below(12) as i32);
    }
    let last = *years.last().unwrap();
    let first = years[0];
    let dx = rng.bernoulli(0.4).then(|| first + rng.below((last - first + 7) as usize) as i32);
    let fu = last + rng.below(8) as i32;
    let visits = years.iter().map(|&y| VisitRecord::new(id, y, tiny_payload()).unwrap()).collect();
    SubjectTimeline::new(id, visits, dx, fu).unwrap()
}

/// Number of (timeline, now) pairs whose expansion disagrees with the scan.
pub fn labeler_disagreements(n: usize, seed: u64) -> (usize, usize) {
    let mut rng = Rng::new(seed);
    let mut checked = 0;
    let mut bad = 0;
    for i in 0..n {
        let t = random_timeline(&mut rng, &format!("T{i}"));
        let samples = expand_trajectories(&t);
        if samples.len() != t.visits.len() {
            bad += 1;
        }
        for (s, v) in samples.iter().zip(&t.visits) {
            checked += 1;
            let (labels, known) = brute_force_labels(&t, v.visit_year);
            if s.now_year != v.visit_year || s.labels != labels || s.label_mask != known {
                bad += 1;
            }
        }
    }
    (checked, bad)
}

// ---------------------------------------------------------------- metrics

/// Pairwise AUC: each (positive, negative) pair scores 1 if ordered, ½ if tied.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut pairs = 0.0;
    let mut wins = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Whether subject `j` is observed event-free at time `t`.
fn event_free_at(o: &SurvivalOutcome, t: u32) -> bool {
    if o.event {
        o.time > t
    } else {
        o.time >= t
    }
}

/// Harrell's C by enumeration of ordered pairs (event subject first).
pub fn brute_c_index(risks: &[f64], outcomes: &[SurvivalOutcome]) -> Option<f64> {
    let mut comparable = 0.0;
    let mut concordant = 0.0;
    for i in 0..risks.len() {
        for j in 0..risks.len() {
            if i == j || !outcomes[i].event || !event_free_at(&outcomes[j], outcomes[i].time) {
                continue;
            }
            comparable += 1.0;
            if risks[i] > risks[j] {
                concordant += 1.0;
            } else if risks[i] == risks[j] {
                concordant += 0.5;
            }
        }
    }
    (comparable > 0.0).then(|| concordant / comparable)
}

/// Scores drawn from a handful of levels so ties are common.
pub fn tied_scores(n: usize, rng: &mut Rng) -> Vec<f64> {
    let levels = 1 + rng.below(4);
    (0..n).map(|_| rng.below(levels) as f64 * 0.25).collect()
}

// ---------------------------------------------------------------- cohorts

/// Small image cohort for training-path tests.
pub fn mini_cohort(n: usize, seed: u64) -> CohortConfig {
    CohortConfig { n_subjects: n, resolution: 8, span_years: 6, seed, ..Default::default() }
}

/// The sample of `t` at `now`, rebuilt from a timeline that only keeps the
/// visits at the given offsets before `now` (plus `now` itself).
pub fn physically_removed(t: &SubjectTimeline, now: i32, keep_offsets: &[i32]) -> TrajectorySample {
    let visits = t
        .visits
        .iter()
        .filter(|v| v.visit_year == now || keep_offsets.contains(&(now - v.visit_year)))
        .map(|v| (**v).clone())
        .collect();
    let thinned = SubjectTimeline::new(t.subject_id.clone(), visits, t.diagnosis_year, t.last_followup_year).unwrap();
    expand_trajectories(&thinned).into_iter().find(|s| s.now_year == now).unwrap()
}

// ---------------------------------------------------------------- op table

pub type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One differentiable operation: a generator of random inputs and the
/// forward computation.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Box<dyn Fn(&mut Rng) -> Vec<Tensor>>,
    pub build: Build,
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn case(
    name: &'static str,
    inputs: impl Fn(&mut Rng) -> Vec<Tensor> + 'static,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase { name, inputs: Box::new(inputs), build: Box::new(build) }
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Every graph operation, plus the layers built from them.
pub fn op_cases() -> Vec<OpCase> {
    use longrisk::nn::{Linear, TransformerBlock};
    use longrisk::survival::{survival_loss, HazardHead, LossWeights};
    use longrisk::ParamStore;

    fn pair(rng: &mut Rng) -> Vec<Tensor> {
        let (r, c) = (dim(rng, 1, 4), dim(rng, 1, 5));
        vec![randn(&[r, c], rng), randn(&[r, c], rng)]
    }
    fn one(rng: &mut Rng) -> Vec<Tensor> {
        let (r, c) = (dim(rng, 1, 4), dim(rng, 1, 5));
        vec![randn(&[r, c], rng)]
    }

    vec![
        case(
            "matmul",
            |rng| {
                let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
                vec![randn(&[m, k], rng), randn(&[k, n], rng)]
            },
            |g, x| g.matmul(x[0], x[1]),
        ),
        case("transpose", one, |g, x| g.transpose(x[0])),
        case("add", pair, |g, x| g.add(x[0], x[1])),
        case("sub", pair, |g, x| g.sub(x[0], x[1])),
        case("mul", pair, |g, x| g.mul(x[0], x[1])),
        case(
            "mul_scalar_broadcast",
            |rng| {
                let mut v = one(rng);
                v.push(randn(&[1], rng));
                v
            },
            |g, x| g.mul(x[0], x[1]),
        ),
        case("scale", one, |g, x| Ok(g.scale(x[0], -1.7))),
        case(
            "add_row",
            |rng| {
                let (n, d) = (dim(rng, 1, 4), dim(rng, 1, 5));
                vec![randn(&[n, d], rng), randn(&[d], rng)]
            },
            |g, x| g.add_row(x[0], x[1]),
        ),
        case("relu", |rng| vec![away_from_zero(one(rng).remove(0), 0.05)], |g, x| Ok(g.relu(x[0]))),
        case("sigmoid", one, |g, x| Ok(g.sigmoid(x[0]))),
        case("softplus", one, |g, x| Ok(g.softplus(x[0]))),
        case("dropout", one, |g, x| g.dropout(x[0], 0.4, true, &mut Rng::new(77))),
        case("softmax_rows", one, |g, x| g.softmax(x[0], 1, None)),
        case("softmax_cols", one, |g, x| g.softmax(x[0], 0, None)),
        case(
            "softmax_masked",
            |rng| {
                let (r, c) = (dim(rng, 1, 4), dim(rng, 2, 5));
                vec![randn(&[r, c], rng)]
            },
            |g, x| {
                let (r, c) = g.value(x[0]).dims2()?;
                let keep: Vec<bool> = (0..c).map(|j| j % 2 == 0).collect();
                g.softmax(x[0], 1, Some(&longrisk::autograd::key_mask(r, &keep)))
            },
        ),
        case(
            "layer_norm",
            |rng| {
                let (n, d) = (dim(rng, 1, 4), dim(rng, 2, 6));
                vec![randn(&[n, d], rng), randn(&[d], rng), randn(&[d], rng)]
            },
            |g, x| g.layer_norm(x[0], x[1], x[2]),
        ),
        case("sum", one, |g, x| Ok(g.sum(x[0]))),
        case("mean", one, |g, x| Ok(g.mean(x[0]))),
        case(
            "concat_rows",
            |rng| {
                let d = dim(rng, 1, 4);
                vec![randn(&[dim(rng, 1, 3), d], rng), randn(&[dim(rng, 1, 3), d], rng)]
            },
            |g, x| g.concat_rows(&[x[0], x[1], x[0]]),
        ),
        case(
            "concat_cols",
            |rng| {
                let n = dim(rng, 1, 4);
                vec![randn(&[n, dim(rng, 1, 3)], rng), randn(&[n, dim(rng, 1, 3)], rng)]
            },
            |g, x| g.concat_cols(&[x[0], x[1], x[1]]),
        ),
        case(
            "slice_cols",
            |rng| vec![randn(&[dim(rng, 1, 4), dim(rng, 2, 6)], rng)],
            |g, x| {
                let (_, d) = g.value(x[0]).dims2()?;
                g.slice_cols(x[0], 1, d - 1)
            },
        ),
        case("select_rows", one, |g, x| {
            let (n, _) = g.value(x[0]).dims2()?;
            g.select_rows(x[0], &[n - 1, 0, n - 1])
        }),
        case("mean_rows", one, |g, x| g.mean_rows(x[0])),
        case("reshape", one, |g, x| {
            let len = g.value(x[0]).len();
            let flat = g.reshape(x[0], &[1, len])?;
            Ok(g.sigmoid(flat))
        }),
        case(
            "linear_layer",
            |rng| vec![randn(&[dim(rng, 1, 4), 3], rng)],
            |g, x| {
                let mut store = ParamStore::new();
                let lin = Linear::new(&mut store, "lin", 3, 2, true, &mut Rng::new(5));
                lin.forward(g, &store, x[0])
            },
        ),
        case(
            "transformer_block",
            |rng| vec![randn(&[dim(rng, 2, 5), 4], rng)],
            |g, x| {
                let mut store = ParamStore::new();
                let block = TransformerBlock::new(&mut store, "blk", 4, 2, &mut Rng::new(6))?;
                let n = g.value(x[0]).dims2()?.0;
                let keep: Vec<bool> = (0..n).map(|j| j != 0 || n == 1).collect();
                block.forward(g, &store, x[0], Some(&keep), 0.0, false, &mut Rng::new(0))
            },
        ),
        case(
            "hazard_head_and_loss",
            |rng| vec![randn(&[1, dim(rng, 2, 6)], rng)],
            |g, x| {
                let d = g.value(x[0]).len();
                let mut store = ParamStore::new();
                let head = HazardHead::new(&mut store, d, &mut Rng::new(7));
                let z = head.logits(g, &store, x[0])?;
                let labels = [false, false, true, true, true];
                let mask = [true, true, true, true, false];
                Ok(survival_loss(g, z, &labels, &mask, &LossWeights::uniform())?.expect("known years"))
            },
        ),
    ]
}

/// Worst relative error of `case` over three random input draws.
pub fn check_case(case: &OpCase, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..3)
        .map(|i| {
            let inputs = (case.inputs)(&mut rng);
            grad_check(&inputs, &*case.build, seed.wrapping_add(i))
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- criteria

/// Instances (out of `n`, sizes 1..=12) where `roc_auc` or
/// `concordance_index` disagree with pair enumeration, including on
/// whether the metric is defined.
pub fn metric_mismatches(n: usize, seed: u64) -> usize {
    use longrisk::eval::{concordance_index, roc_auc};
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for _ in 0..n {
        let size = 1 + rng.below(12);
        let scores = tied_scores(size, &mut rng);
        let labels: Vec<bool> = (0..size).map(|_| rng.bernoulli(0.4)).collect();
        if roc_auc(&scores, &labels).ok() != brute_auc(&scores, &labels) {
            bad += 1;
        }
        let outcomes: Vec<SurvivalOutcome> = (0..size)
            .map(|_| {
                let event = rng.bernoulli(0.5);
                let time = if event { 1 + rng.below(5) } else { rng.below(6) } as u32;
                SurvivalOutcome { time, event }
            })
            .collect();
        if concordance_index(&scores, &outcomes).ok() != brute_c_index(&scores, &outcomes) {
            bad += 1;
        }
    }
    bad
}

/// Random hazard heads (widths 1..16, parameter scales 1e-2..1e2) applied to
/// random embeddings; counts curves that decrease anywhere.
pub fn monotonicity_violations(n: usize, seed: u64) -> usize {
    use longrisk::survival::HazardHead;
    use longrisk::ParamStore;
    let mut rng = Rng::new(seed);
    let mut bad = 0;
    for _ in 0..n {
        let d = 1 + rng.below(16);
        let mut store = ParamStore::new();
        let head = HazardHead::new(&mut store, d, &mut rng);
        let scale = 10f64.powf(-2.0 + 4.0 * rng.uniform());
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for v in store.get_mut(id).data_mut() {
                *v = scale * rng.normal();
            }
        }
        let m_scale = 10f64.powf(-2.0 + 4.0 * rng.uniform());
        let mut g = Graph::new();
        let m = g.constant(Tensor::randn(&[1, d], m_scale, &mut rng));
        let p = head.risk_curve(&mut g, &store, m).expect("head forward");
        if g.value(p).data().windows(2).any(|w| w[1] < w[0]) {
            bad += 1;
        }
    }
    bad
}

/// Years back kept by a scenario, derived from its name alone.
pub fn years_back(duration: u8, biennial: bool) -> Vec<i32> {
    (1..=i32::from(duration)).filter(|y| !biennial || y % 2 == 0).collect()
}

/// Compares scenario-masked scoring against physically thinned timelines on
/// `n` random samples and every headline scenario. Returns
/// `(comparisons, mismatches)`; a mismatch is any bit difference.
pub fn masking_mismatches(
    model: &longrisk::RiskModel,
    cohort: &[SubjectTimeline],
    n: usize,
    seed: u64,
) -> (usize, usize) {
    use longrisk::cohort::expand_all;
    use longrisk::eval::{score_scenario, Frequency, ScenarioMask};
    let samples = expand_all(cohort);
    let mut rng = Rng::new(seed);
    let (mut checked, mut bad) = (0, 0);
    for _ in 0..n {
        let s = &samples[rng.below(samples.len())];
        let t = cohort.iter().find(|t| t.subject_id == s.subject_id).unwrap();
        let full = model.encode_samples(std::slice::from_ref(s)).unwrap();
        for scenario in ScenarioMask::table_set() {
            let masked = score_scenario(model, &full, scenario).unwrap()[0];
            let keep = years_back(scenario.duration(), scenario.frequency() == Frequency::Biennial);
            let thin = physically_removed(t, s.now_year, &keep);
            let thin = model.encode_samples(&[thin]).unwrap();
            let direct = model.predict(&thin[0]).unwrap();
            checked += 1;
            let same = masked.0.iter().zip(&direct.0).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                bad += 1;
            }
        }
    }
    (checked, bad)
}

/// `(frozen parameter count, how many of them differ bitwise)` between a
/// model's starting point and its trained counterpart.
pub fn frozen_drift(before: &longrisk::RiskModel, after: &longrisk::RiskModel) -> (usize, usize) {
    let frozen = before.frozen_params();
    let changed = frozen
        .iter()
        .filter(|name| {
            let a = before.store.get(before.store.find(name).unwrap());
            let b = after.store.get(after.store.find(name).unwrap());
            a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits())
        })
        .count();
    (frozen.len(), changed)
}

/// Small-image model settings matching [`mini_cohort`].
pub fn mini_model() -> longrisk::ModelConfig {
    let mut m = longrisk::ModelConfig { d_img: 32, ..Default::default() };
    m.image.rows = 8;
    m.image.cols = 8;
    m
}
