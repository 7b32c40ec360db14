use super::SubjectTimeline;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Subject-level split into `(train, held_out)` with `train_ratio` of the
/// subjects in the first part.
///
/// The held-out size is `round((1 − train_ratio) · n)`. With stratification,
/// it is apportioned between diagnosed and never-diagnosed subjects by
/// largest remainder, so each stratum's share is within one subject of
/// proportional.
pub fn split_subjects(
    timelines: &[SubjectTimeline],
    train_ratio: f64,
    stratify_by_diagnosis: bool,
    rng: &mut Rng,
) -> Result<(Vec<SubjectTimeline>, Vec<SubjectTimeline>)> {
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(Error::Split(format!("train ratio {train_ratio} outside [0, 1]")));
    }
    let n = timelines.len();
    let n_held = ((1.0 - train_ratio) * n as f64).round() as usize;
    if n_held == 0 || n_held == n {
        return Err(Error::Split(format!(
            "ratio {train_ratio} on {n} subjects leaves an empty side"
        )));
    }

    let strata: Vec<Vec<usize>> = if stratify_by_diagnosis {
        let (pos, neg): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| timelines[i].is_diagnosed());
        for (name, s) in [("diagnosed", &pos), ("never-diagnosed", &neg)] {
            if s.len() < 2 {
                return Err(Error::Split(format!(
                    "{name} stratum has {} subject(s); need at least 2",
                    s.len()
                )));
            }
        }
        vec![pos, neg]
    } else {
        vec![(0..n).collect()]
    };

    // Largest-remainder apportionment of the held-out count.
    let quotas: Vec<f64> = strata
        .iter()
        .map(|s| n_held as f64 * s.len() as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = n_held - alloc.iter().sum::<usize>();
    for &s in &order {
        if remaining == 0 {
            break;
        }
        alloc[s] += 1;
        remaining -= 1;
    }

    let mut held = vec![false; n];
    for (stratum, &k) in strata.iter().zip(&alloc) {
        let mut idx = stratum.clone();
        rng.shuffle(&mut idx);
        for &i in idx.iter().take(k) {
            held[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (t, &h) in timelines.iter().zip(&held) {
        if h {
            test.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    Ok((train, test))
}
