use serde::{Deserialize, Serialize};

use super::{checkpoint_laps_to_go, MetricsError, TIME_EPS};
use crate::racelog::{Checkpoint, RaceLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaceType {
    Breakaway,
    Bunch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakawayParams {
    /// A minimum gap strictly above this marks a break-away.
    pub gap: f64,
    /// Gaps are checked between places n and n+1 for n = 1..=max_place.
    pub max_place: usize,
}

impl Default for BreakawayParams {
    fn default() -> Self {
        Self {
            gap: 2.0,
            max_place: 3,
        }
    }
}

/// Smallest gap between places n and n+1 over the checkpoints from the
/// leader's crossing with two laps to go through the one with one lap to go.
/// Entry n-1 holds place n; `None` where fewer than n+1 skaters crossed.
pub fn breakaway_min_gaps(
    log: &RaceLog,
    params: &BreakawayParams,
) -> Result<Vec<Option<f64>>, MetricsError> {
    let b = log.meta().boundaries_per_lap;
    let first = checkpoint_laps_to_go(log, 2)?.progress(b);
    let last = checkpoint_laps_to_go(log, 1)?.progress(b);
    let mut mins: Vec<Option<f64>> = vec![None; params.max_place];
    for p in first..=last {
        let cp = Checkpoint::from_progress(p, b);
        let times: Vec<f64> = log.crossings_at(cp).iter().map(|(_, e)| e.time).collect();
        if times.is_empty() {
            return Err(MetricsError::MissingCrossing(cp));
        }
        for (n, min) in mins.iter_mut().enumerate() {
            if let Some(gap) = times.get(n + 1).map(|t| t - times[n]) {
                *min = Some(min.map_or(gap, |m: f64| m.min(gap)));
            }
        }
    }
    Ok(mins)
}

pub fn classify_breakaway(log: &RaceLog, params: &BreakawayParams) -> Result<RaceType, MetricsError> {
    let mins = breakaway_min_gaps(log, params)?;
    let broke = mins.iter().flatten().any(|&g| g > params.gap + TIME_EPS);
    Ok(if broke {
        RaceType::Breakaway
    } else {
        RaceType::Bunch
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fixtures::{log_from_times, paced};

    fn four_skaters(gaps: [f64; 3]) -> crate::racelog::RaceLog {
        let mut off = 0.0;
        let mut skaters = vec![("A", paced(24, 12.0, 0.0))];
        for (name, g) in ["B", "C", "D"].iter().zip(gaps) {
            off += g;
            skaters.push((name, paced(24, 12.0, off)));
        }
        log_from_times(6, 4, &skaters)
    }

    #[test]
    fn constant_gap_above_two_seconds() {
        let log = four_skaters([2.5, 0.5, 0.5]);
        assert_eq!(classify_breakaway(&log, &BreakawayParams::default()).unwrap(), RaceType::Breakaway);
    }

    #[test]
    fn small_gaps_are_a_bunch() {
        let log = four_skaters([1.0, 0.3, 0.8]);
        assert_eq!(classify_breakaway(&log, &BreakawayParams::default()).unwrap(), RaceType::Bunch);
    }

    #[test]
    fn exactly_two_seconds_is_a_bunch() {
        let log = four_skaters([0.5, 2.0, 0.5]);
        let mins = breakaway_min_gaps(&log, &BreakawayParams::default()).unwrap();
        assert!((mins[1].unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(classify_breakaway(&log, &BreakawayParams::default()).unwrap(), RaceType::Bunch);
    }

    #[test]
    fn minimum_over_window_decides() {
        // D trails C by 2.4 s except at one checkpoint inside the window (1.8 s)
        let mut log_times = vec![
            ("A", paced(24, 12.0, 0.0)),
            ("B", paced(24, 12.0, 0.5)),
            ("C", paced(24, 12.0, 1.0)),
        ];
        let mut d = paced(24, 12.0, 3.4);
        // window covers progress 16..=20 in a six-lap race
        d[17] = 18.0 * 12.0 + 2.8;
        log_times.push(("D", d));
        let log = log_from_times(6, 4, &log_times);
        let mins = breakaway_min_gaps(&log, &BreakawayParams::default()).unwrap();
        assert!((mins[2].unwrap() - 1.8).abs() < 1e-9);
        assert_eq!(classify_breakaway(&log, &BreakawayParams::default()).unwrap(), RaceType::Bunch);
    }

    #[test]
    fn two_skaters_only_check_first_gap() {
        let log = log_from_times(4, 4, &[("A", paced(16, 10.0, 0.0)), ("B", paced(16, 10.0, 2.5))]);
        let mins = breakaway_min_gaps(&log, &BreakawayParams::default()).unwrap();
        assert!(mins[1].is_none() && mins[2].is_none());
        assert_eq!(classify_breakaway(&log, &BreakawayParams::default()).unwrap(), RaceType::Breakaway);
    }
}
