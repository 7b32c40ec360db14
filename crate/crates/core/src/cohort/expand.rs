use super::{SubjectTimeline, TrajectorySample, HISTORY_LEN, HORIZON};

/// One sample per visit, with that visit as "now".
///
/// History slot `s` holds the visit exactly `4 − s` years before now, if any.
/// `labels[k] = diagnosis_year ≤ now + k + 1`; the label is known when the
/// diagnosis already happened by then or follow-up reaches that year.
pub fn expand_trajectories(timeline: &SubjectTimeline) -> Vec<TrajectorySample> {
    timeline
        .visits
        .iter()
        .map(|now| {
            let now_year = now.visit_year;
            let history = std::array::from_fn(|s| {
                let year = now_year - (HISTORY_LEN - 1 - s) as i32;
                timeline
                    .visits
                    .iter()
                    .find(|v| v.visit_year == year)
                    .cloned()
            });
            let mut labels = [false; HORIZON];
            let mut label_mask = [false; HORIZON];
            for k in 0..HORIZON {
                let horizon_year = now_year + k as i32 + 1;
                let diagnosed = timeline.diagnosis_year.is_some_and(|dx| dx <= horizon_year);
                labels[k] = diagnosed;
                label_mask[k] = diagnosed || timeline.last_followup_year >= horizon_year;
            }
            TrajectorySample {
                subject_id: timeline.subject_id.clone(),
                now_year,
                history,
                labels,
                label_mask,
            }
        })
        .collect()
}

pub fn expand_all(timelines: &[SubjectTimeline]) -> Vec<TrajectorySample> {
    timelines.iter().flat_map(expand_trajectories).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Payload, VisitRecord};

    fn timeline(years: &[i32], dx: Option<i32>, fu: i32) -> SubjectTimeline {
        let p = Payload::Embedding(vec![1.0]);
        let visits = years
            .iter()
            .map(|&y| VisitRecord::new("s", y, [p.clone(), p.clone(), p.clone(), p.clone()]).unwrap())
            .collect();
        SubjectTimeline::new("s", visits, dx, fu).unwrap()
    }

    #[test]
    fn diagnosed_subject_all_known() {
        let s = expand_trajectories(&timeline(&[2010], Some(2013), 2015));
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].labels, [false, false, true, true, true]);
        assert_eq!(s[0].label_mask, [true; 5]);
    }

    #[test]
    fn censored_subject() {
        let s = expand_trajectories(&timeline(&[2010], None, 2012));
        assert_eq!(s[0].labels[..2], [false, false]);
        assert_eq!(s[0].label_mask, [true, true, false, false, false]);
    }

    #[test]
    fn full_history_window() {
        let s = expand_trajectories(&timeline(&[2008, 2009, 2010, 2011, 2012], None, 2016));
        let now = s.iter().find(|x| x.now_year == 2012).unwrap();
        assert_eq!(now.present(), [true; 5]);
        let first = s.iter().find(|x| x.now_year == 2008).unwrap();
        assert_eq!(first.present(), [false, false, false, false, true]);
    }

    #[test]
    fn gaps_leave_absent_slots() {
        let s = expand_trajectories(&timeline(&[2008, 2010, 2012], None, 2016));
        assert_eq!(s[2].present(), [true, false, true, false, true]);
    }

    #[test]
    fn diagnosis_in_visit_year_is_positive_at_year_one() {
        let s = expand_trajectories(&timeline(&[2010, 2011], Some(2011), 2011));
        assert_eq!(s[1].labels, [true; 5]);
        assert_eq!(s[1].label_mask, [true; 5]);
        assert_eq!(s[0].labels, [true; 5]);
        assert_eq!(s[1].outcome().time, 1);
    }

    #[test]
    fn outcome_of_censored_sample() {
        let s = expand_trajectories(&timeline(&[2010], None, 2013));
        let o = s[0].outcome();
        assert!(!o.event);
        assert_eq!(o.time, 3);
    }
}
