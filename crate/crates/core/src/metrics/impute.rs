use std::collections::BTreeMap;

use super::MetricsError;
use crate::racelog::{RaceLog, SkaterId};

/// Closed time intervals during which each skater was visible to the observer.
/// Skaters without an entry are treated as always visible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Visibility {
    intervals: BTreeMap<SkaterId, Vec<(f64, f64)>>,
}

impl Visibility {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, skater: impl Into<SkaterId>, intervals: Vec<(f64, f64)>) -> &mut Self {
        self.intervals.insert(skater.into(), intervals);
        self
    }

    /// Removes the open interval `(from, to)` from the skater's visible time.
    pub fn hide(&mut self, skater: impl Into<SkaterId>, from: f64, to: f64) -> &mut Self {
        let entry = self
            .intervals
            .entry(skater.into())
            .or_insert_with(|| vec![(f64::NEG_INFINITY, f64::INFINITY)]);
        let mut next = Vec::with_capacity(entry.len() + 1);
        for &(a, b) in entry.iter() {
            if b <= from || a >= to {
                next.push((a, b));
                continue;
            }
            if a <= from {
                next.push((a, from));
            }
            if b >= to {
                next.push((to, b));
            }
        }
        *entry = next;
        self
    }

    pub fn is_visible(&self, skater: &SkaterId, t: f64) -> bool {
        self.intervals
            .get(skater)
            .is_none_or(|iv| iv.iter().any(|&(a, b)| t >= a && t <= b))
    }
}

/// Replaces crossings the observer could not see with synthesized ones.
///
/// A hidden crossing gets a time linearly interpolated (by distance) between
/// the skater's neighbouring visible crossings, with the race start as the
/// first anchor, and is flagged `observed = false`. Exposure state and rank
/// for flagged crossings are carried forward from the last visible crossing
/// by [`exposure_states`](super::exposure_states) and
/// [`intermediate_ranks`](super::intermediate_ranks). Crossings already
/// flagged unobserved are treated as hidden.
pub fn impute_carry_forward(log: &RaceLog, visibility: &Visibility) -> Result<RaceLog, MetricsError> {
    let meta = log.meta().clone();
    let b = meta.boundaries_per_lap;
    let mut events = log.events().to_vec();

    for (s, id) in log.roster().iter().enumerate() {
        // (progress, time, index into events, visible)
        let line: Vec<(u32, f64, usize, bool)> = log
            .timeline(s)
            .map(|e| {
                let idx = events
                    .iter()
                    .position(|x| x.skater_id == *id && x.lap == e.lap && x.boundary == e.boundary)
                    .expect("event from log");
                let visible = e.observed && visibility.is_visible(id, e.time);
                (e.checkpoint().progress(b), e.time, idx, visible)
            })
            .collect();
        if line.iter().all(|x| x.3) {
            continue;
        }
        let anchors: Vec<(f64, f64)> = std::iter::once((0.0, 0.0))
            .chain(line.iter().filter(|x| x.3).map(|x| (x.0 as f64, x.1)))
            .collect();
        if anchors.len() == 1 {
            return Err(MetricsError::NeverObserved(id.clone()));
        }
        for &(p, _, idx, visible) in &line {
            if visible {
                continue;
            }
            let p = p as f64;
            let k = anchors.partition_point(|a| a.0 < p);
            let (lo, hi) = if k < anchors.len() {
                (anchors[k - 1], anchors[k])
            } else {
                // past the last sighting: keep the pace of the last two anchors
                (anchors[k - 2], anchors[k - 1])
            };
            let t = lo.1 + (hi.1 - lo.1) * (p - lo.0) / (hi.0 - lo.0);
            events[idx].time = t;
            events[idx].observed = false;
        }
    }

    let log2 = RaceLog::new(meta, events, log.disqualifications().to_vec())?;
    Ok(log2.with_provenance(log.provenance().clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fixtures::{log_from_times, paced};
    use crate::metrics::{exposed_time, intermediate_ranks, DraftingParams};
    use crate::racelog::Checkpoint;

    #[test]
    fn fully_visible_log_is_unchanged() {
        let log = log_from_times(4, 4, &[("A", paced(16, 10.0, 0.0)), ("B", paced(16, 10.0, 0.1))]);
        let out = impute_carry_forward(&log, &Visibility::new()).unwrap();
        assert_eq!(out, log);
        let mut vis = Visibility::new();
        vis.set("A", vec![(0.0, 1000.0)]);
        assert_eq!(impute_carry_forward(&log, &vis).unwrap(), log);
    }

    #[test]
    fn never_observed_is_an_error() {
        let log = log_from_times(4, 4, &[("A", paced(16, 10.0, 0.0)), ("B", paced(16, 10.0, 0.1))]);
        let mut vis = Visibility::new();
        vis.set("B", vec![]);
        assert!(matches!(
            impute_carry_forward(&log, &vis),
            Err(MetricsError::NeverObserved(_))
        ));
    }

    #[test]
    fn hidden_while_sheltered_contributes_nothing() {
        // B is 0.1 s behind A everywhere except at checkpoint 6 (t=60), where
        // its true time would expose it; it is hidden there.
        let mut b = paced(16, 10.0, 0.1);
        b[5] = 60.5;
        let log = log_from_times(4, 4, &[("A", paced(16, 10.0, 0.0)), ("B", b)]);
        let p = DraftingParams::default();
        assert!(exposed_time(&log, &"B".into(), &p).unwrap().tau > 0.0);

        let mut vis = Visibility::new();
        vis.hide("B", 55.0, 65.0);
        let out = impute_carry_forward(&log, &vis).unwrap();
        let ev = out.crossing(1, Checkpoint::new(2, 2)).unwrap();
        assert!(!ev.observed);
        assert!((ev.time - 60.1).abs() < 1e-12);
        assert_eq!(exposed_time(&out, &"B".into(), &p).unwrap().tau, 0.0);
    }

    #[test]
    fn hidden_while_exposed_then_reappears_sheltered() {
        // B is 1 s behind A (exposed) up to checkpoint 6, hidden at 7, and
        // visible again 0.1 s behind A from checkpoint 8 on.
        let b: Vec<f64> = (1..=16)
            .map(|p| 10.0 * p as f64 + if p <= 7 { 1.0 } else { 0.1 })
            .collect();
        let log = log_from_times(4, 4, &[("A", paced(16, 10.0, 0.0)), ("B", b)]);
        let mut vis = Visibility::new();
        vis.hide("B", 65.0, 75.0);
        let out = impute_carry_forward(&log, &vis).unwrap();
        let ev = out.crossing(1, Checkpoint::new(2, 3)).unwrap();
        assert!(!ev.observed);
        // interpolated between (6, 61.0) and (8, 80.1)
        assert!((ev.time - 70.55).abs() < 1e-12);

        let e = exposed_time(&out, &"B".into(), &DraftingParams::default()).unwrap();
        // window [40, 120]: exposed segments start at 41 (cp4), 51, 61 and the
        // hidden 70.55 (carried state), ending at 80.1
        assert!((e.tau - (80.1 - 41.0 + 1.0)).abs() < 1e-9, "{}", e.tau);
        assert!((e.imputed_fraction - (80.1 - 61.0) / e.tau).abs() < 1e-9);
    }

    #[test]
    fn hidden_at_the_tail_keeps_last_pace() {
        let log = log_from_times(4, 4, &[("A", paced(16, 10.0, 0.0)), ("B", paced(16, 10.0, 0.1))]);
        let mut vis = Visibility::new();
        vis.hide("B", 145.0, 1000.0);
        let out = impute_carry_forward(&log, &vis).unwrap();
        let last = out.crossing(1, Checkpoint::new(4, 0)).unwrap();
        assert!(!last.observed);
        assert!((last.time - 160.1).abs() < 1e-9);
    }

    #[test]
    fn hidden_rank_is_carried_forward() {
        // C runs second at (1,3) and is hidden at (2,0) where its true time
        // would make it third.
        let a = paced(16, 10.0, 0.0);
        let b = paced(16, 10.0, 0.5);
        let mut c = paced(16, 10.0, 0.3);
        for t in c.iter_mut().skip(7) {
            *t += 0.5;
        }
        let log = log_from_times(4, 4, &[("A", a), ("B", b), ("C", c)]);
        let mut vis = Visibility::new();
        vis.hide("C", 75.0, 85.0);
        let out = impute_carry_forward(&log, &vis).unwrap();
        let r = intermediate_ranks(&out, 2).unwrap();
        assert_eq!(r.rank_of(&"C".into()), Some(2.0));
        assert_eq!(r.rank_of(&"B".into()), Some(3.0));
    }
}
