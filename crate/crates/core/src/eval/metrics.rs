use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney rank statistic; tied
/// scores share their average rank, which counts a tied pair as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based ranks of the positives, doubled to stay integral.
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged: (i + j + 2) / 2
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        rank_sum2 += pos_in_run * (i + j + 2) as u64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u64, n_neg as u64);
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// Harrell's concordance index. A pair is comparable when `i` has an event
/// at `tᵢ` and `j` is known event-free at `tᵢ` (a later event, or censoring
/// at or after `tᵢ`). It is concordant when `i` has the higher risk; ties
/// in risk count one half.
pub fn concordance_index(risks: &[f64], outcomes: &[SurvivalOutcome]) -> Result<f64> {
    if risks.len() != outcomes.len() {
        return Err(Error::dim(format!("{} risks for {} outcomes", risks.len(), outcomes.len())));
    }
    if risks.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN risk".into()));
    }
    let mut comparable = 0u64;
    let mut concordant2 = 0u64;
    for (i, oi) in outcomes.iter().enumerate() {
        if !oi.event {
            continue;
        }
        for (j, oj) in outcomes.iter().enumerate() {
            let later = oj.time > oi.time || (oj.time == oi.time && !oj.event);
            if i == j || !later {
                continue;
            }
            comparable += 1;
            concordant2 += match risks[i].partial_cmp(&risks[j]).expect("not NaN") {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric("C-index has no comparable pairs".into()));
    }
    Ok(concordant2 as f64 / (2 * comparable) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(time: u32) -> SurvivalOutcome {
        SurvivalOutcome { time, event: true }
    }

    fn cens(time: u32) -> SurvivalOutcome {
        SurvivalOutcome { time, event: false }
    }

    #[test]
    fn perfect_and_reversed() {
        let l = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &l).unwrap(), 0.0);
    }

    #[test]
    fn tie_counts_half() {
        assert_eq!(roc_auc(&[0.5, 0.5, 0.3], &[true, false, false]).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn c_index_ordering_and_ties() {
        let o = [ev(1), ev(2), ev(3), cens(5)];
        assert_eq!(concordance_index(&[0.9, 0.5, 0.3, 0.1], &o).unwrap(), 1.0);
        assert_eq!(concordance_index(&[0.4; 4], &o).unwrap(), 0.5);
        assert_eq!(concordance_index(&[0.1, 0.3, 0.5, 0.9], &o).unwrap(), 0.0);
    }

    #[test]
    fn censoring_at_event_time_is_comparable() {
        // i: event at 2; j: event-free through year 2.
        assert_eq!(concordance_index(&[0.6, 0.2], &[ev(2), cens(2)]).unwrap(), 1.0);
        // j censored before the event is not comparable.
        assert!(matches!(
            concordance_index(&[0.6, 0.2], &[ev(2), cens(1)]),
            Err(Error::UndefinedMetric(_))
        ));
        // two events at the same time are not comparable either
        assert!(concordance_index(&[0.6, 0.2], &[ev(2), ev(2)]).is_err());
    }
}
