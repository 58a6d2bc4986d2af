//! Race-log data model shared by the simulator and the analytics pipeline.
//!
//! A race is recorded as a set of [`PassageEvent`]s, one per skater per
//! checkpoint. Each lap has `boundaries_per_lap` checkpoints; boundary 0 is the
//! finish line and `(lap, 0)` is the crossing that *completes* `lap`, so within
//! a lap the checkpoints are passed in the order `1, 2, .., B-1, 0`. The
//! [`Checkpoint::progress`] index encodes that order and is what every
//! monotonicity check and window computation works with.

mod io;
mod scoring;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{parse_race_log, write_race_log, write_rank_table, LogFormat};
pub use scoring::{
    assign_finish_ranks, normalize_rank, score_race, score_race_with, FinishRanks, RankRow, RankTable,
    ScoringError, ScoringRules,
};

/// Largest field a mass start race admits.
pub const MAX_SKATERS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkaterId(pub String);

impl SkaterId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SkaterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SkaterId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Men,
    Women,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Men => "men",
            Sex::Women => "women",
        })
    }
}

impl std::str::FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "men" | "m" => Ok(Sex::Men),
            "women" | "w" => Ok(Sex::Women),
            other => Err(format!("unknown sex '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceMeta {
    pub race_id: String,
    /// Not every source records it, so it stays optional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    pub n_laps: u32,
    pub track_length: f64,
    pub boundaries_per_lap: u32,
    pub n_skaters: u32,
}

impl RaceMeta {
    /// Standard 16-lap mass start on a 400 m oval with four timing boundaries.
    pub fn mass_start(race_id: impl Into<String>, n_skaters: u32) -> Self {
        Self {
            race_id: race_id.into(),
            sex: None,
            n_laps: 16,
            track_length: 400.0,
            boundaries_per_lap: 4,
            n_skaters,
        }
    }

    pub fn validate(&self) -> Result<(), LogError> {
        let bad = |msg: String| Err(LogError::InvalidMeta(msg));
        if self.n_laps < 1 {
            return bad("n_laps must be at least 1".into());
        }
        if self.boundaries_per_lap < 1 {
            return bad("boundaries_per_lap must be at least 1".into());
        }
        if !(self.track_length.is_finite() && self.track_length > 0.0) {
            return bad(format!("track_length must be positive, got {}", self.track_length));
        }
        if self.n_skaters < 2 || self.n_skaters > MAX_SKATERS {
            return bad(format!(
                "n_skaters must lie in [2, {MAX_SKATERS}], got {}",
                self.n_skaters
            ));
        }
        Ok(())
    }

    /// Number of checkpoints in the whole race.
    pub fn checkpoint_count(&self) -> u32 {
        self.n_laps * self.boundaries_per_lap
    }

    pub fn finish(&self) -> Checkpoint {
        Checkpoint::new(self.n_laps, 0)
    }

    /// Distance from the start line to a checkpoint, assuming evenly spaced boundaries.
    pub fn distance_at(&self, cp: Checkpoint) -> f64 {
        cp.progress(self.boundaries_per_lap) as f64 * self.track_length
            / self.boundaries_per_lap as f64
    }
}

/// A `(lap, boundary)` pair. `(lap, 0)` completes `lap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Checkpoint {
    pub lap: u32,
    pub boundary: u32,
}

impl Checkpoint {
    pub fn new(lap: u32, boundary: u32) -> Self {
        Self { lap, boundary }
    }

    /// 1-based position of the checkpoint along the race.
    pub fn progress(self, boundaries_per_lap: u32) -> u32 {
        let within = if self.boundary == 0 {
            boundaries_per_lap
        } else {
            self.boundary
        };
        (self.lap - 1) * boundaries_per_lap + within
    }

    pub fn from_progress(progress: u32, boundaries_per_lap: u32) -> Self {
        debug_assert!(progress >= 1);
        let lap = (progress - 1) / boundaries_per_lap + 1;
        let boundary = progress % boundaries_per_lap;
        Self { lap, boundary }
    }

    /// The finish-line crossing with `laps_to_go` laps left in an `n_laps` race.
    pub fn laps_to_go(n_laps: u32, laps_to_go: u32) -> Option<Self> {
        (laps_to_go < n_laps).then(|| Self::new(n_laps - laps_to_go, 0))
    }
}

impl fmt::Display for Checkpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lap {} boundary {}", self.lap, self.boundary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageEvent {
    pub skater_id: SkaterId,
    pub lap: u32,
    pub boundary: u32,
    pub time: f64,
    /// False when the crossing was synthesized by carry-forward imputation.
    pub observed: bool,
}

impl PassageEvent {
    pub fn new(skater_id: impl Into<String>, lap: u32, boundary: u32, time: f64) -> Self {
        Self {
            skater_id: SkaterId(skater_id.into()),
            lap,
            boundary,
            time,
            observed: true,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.lap, self.boundary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DqReason {
    /// Lapped by the leader at the given race time.
    Lapped { overtaken_time: f64 },
    /// Disqualified for an offence; ranked behind every lapped skater.
    Offence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disqualification {
    pub skater_id: SkaterId,
    pub reason: DqReason,
}

impl Disqualification {
    pub fn lapped(skater_id: impl Into<String>, overtaken_time: f64) -> Self {
        Self {
            skater_id: SkaterId(skater_id.into()),
            reason: DqReason::Lapped { overtaken_time },
        }
    }

    pub fn offence(skater_id: impl Into<String>) -> Self {
        Self {
            skater_id: SkaterId(skater_id.into()),
            reason: DqReason::Offence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("invalid race metadata: {0}")]
    InvalidMeta(String),
    #[error("event for {skater} at lap {lap} boundary {boundary} is out of range: {reason}")]
    OutOfRange {
        skater: SkaterId,
        lap: u32,
        boundary: u32,
        reason: String,
    },
    #[error("duplicate event for {skater} at lap {lap} boundary {boundary}")]
    DuplicateEvent {
        skater: SkaterId,
        lap: u32,
        boundary: u32,
    },
    #[error("times for {skater} are not strictly increasing at lap {lap} boundary {boundary}")]
    NonMonotoneTimes {
        skater: SkaterId,
        lap: u32,
        boundary: u32,
    },
    #[error("disqualification names unknown skater {0}")]
    UnknownDqSkater(SkaterId),
    #[error("skater {0} is disqualified more than once")]
    DuplicateDq(SkaterId),
    #[error("roster has {found} skaters but metadata declares {expected}")]
    RosterMismatch { expected: u32, found: u32 },
    #[error("skater {skater} has no event at lap {lap} boundary {boundary}")]
    IncompleteSequence {
        skater: SkaterId,
        lap: u32,
        boundary: u32,
    },
    #[error("{0}")]
    Io(String),
}

/// A validated race log.
///
/// Construct with [`RaceLog::new`]; every invariant is checked there, and the
/// per-skater crossing table is built once so lookups are O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct RaceLog {
    meta: RaceMeta,
    events: Vec<PassageEvent>,
    disqualifications: Vec<Disqualification>,
    provenance: BTreeMap<String, String>,
    roster: Vec<SkaterId>,
    // crossings[skater][progress - 1] -> index into `events`
    crossings: Vec<Vec<Option<usize>>>,
}

impl RaceLog {
    pub fn new(
        meta: RaceMeta,
        events: Vec<PassageEvent>,
        disqualifications: Vec<Disqualification>,
    ) -> Result<Self, LogError> {
        meta.validate()?;
        let b = meta.boundaries_per_lap;
        let n_cp = meta.checkpoint_count() as usize;

        let mut roster: Vec<SkaterId> = Vec::new();
        let mut slot: HashMap<SkaterId, usize> = HashMap::new();
        let mut crossings: Vec<Vec<Option<usize>>> = Vec::new();

        for (i, ev) in events.iter().enumerate() {
            let out_of_range = |reason: String| LogError::OutOfRange {
                skater: ev.skater_id.clone(),
                lap: ev.lap,
                boundary: ev.boundary,
                reason,
            };
            if ev.lap < 1 || ev.lap > meta.n_laps {
                return Err(out_of_range(format!("lap must lie in [1, {}]", meta.n_laps)));
            }
            if ev.boundary >= b {
                return Err(out_of_range(format!("boundary must lie in [0, {}]", b - 1)));
            }
            if !(ev.time.is_finite() && ev.time >= 0.0) {
                return Err(out_of_range(format!("time {} is not a non-negative number", ev.time)));
            }
            let s = *slot.entry(ev.skater_id.clone()).or_insert_with(|| {
                roster.push(ev.skater_id.clone());
                crossings.push(vec![None; n_cp]);
                roster.len() - 1
            });
            let p = ev.checkpoint().progress(b) as usize - 1;
            if crossings[s][p].is_some() {
                return Err(LogError::DuplicateEvent {
                    skater: ev.skater_id.clone(),
                    lap: ev.lap,
                    boundary: ev.boundary,
                });
            }
            crossings[s][p] = Some(i);
        }

        if roster.len() as u32 != meta.n_skaters {
            return Err(LogError::RosterMismatch {
                expected: meta.n_skaters,
                found: roster.len() as u32,
            });
        }

        for (s, row) in crossings.iter().enumerate() {
            let mut last: Option<f64> = None;
            for idx in row.iter().flatten() {
                let ev = &events[*idx];
                if let Some(prev) = last {
                    if ev.time <= prev {
                        return Err(LogError::NonMonotoneTimes {
                            skater: roster[s].clone(),
                            lap: ev.lap,
                            boundary: ev.boundary,
                        });
                    }
                }
                last = Some(ev.time);
            }
        }

        let mut seen_dq = std::collections::HashSet::new();
        for dq in &disqualifications {
            if !slot.contains_key(&dq.skater_id) {
                return Err(LogError::UnknownDqSkater(dq.skater_id.clone()));
            }
            if !seen_dq.insert(dq.skater_id.clone()) {
                return Err(LogError::DuplicateDq(dq.skater_id.clone()));
            }
            if let DqReason::Lapped { overtaken_time } = dq.reason {
                if !(overtaken_time.is_finite() && overtaken_time >= 0.0) {
                    return Err(LogError::InvalidMeta(format!(
                        "overtaken time for {} must be a non-negative number",
                        dq.skater_id
                    )));
                }
            }
        }

        for (s, row) in crossings.iter().enumerate() {
            if seen_dq.contains(&roster[s]) {
                continue;
            }
            if let Some(p) = row.iter().position(Option::is_none) {
                let cp = Checkpoint::from_progress(p as u32 + 1, b);
                return Err(LogError::IncompleteSequence {
                    skater: roster[s].clone(),
                    lap: cp.lap,
                    boundary: cp.boundary,
                });
            }
        }

        Ok(Self {
            meta,
            events,
            disqualifications,
            provenance: BTreeMap::new(),
            roster,
            crossings,
        })
    }

    pub fn with_provenance(mut self, provenance: BTreeMap<String, String>) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn meta(&self) -> &RaceMeta {
        &self.meta
    }

    pub fn events(&self) -> &[PassageEvent] {
        &self.events
    }

    pub fn disqualifications(&self) -> &[Disqualification] {
        &self.disqualifications
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    /// Skaters in order of first appearance in the event list.
    pub fn roster(&self) -> &[SkaterId] {
        &self.roster
    }

    pub fn skater_index(&self, id: &SkaterId) -> Option<usize> {
        self.roster.iter().position(|r| r == id)
    }

    pub fn is_disqualified(&self, id: &SkaterId) -> bool {
        self.disqualifications.iter().any(|d| &d.skater_id == id)
    }

    /// The event recorded for roster entry `skater` at `cp`, if any.
    pub fn crossing(&self, skater: usize, cp: Checkpoint) -> Option<&PassageEvent> {
        if cp.lap < 1 || cp.lap > self.meta.n_laps || cp.boundary >= self.meta.boundaries_per_lap
        {
            return None;
        }
        let p = cp.progress(self.meta.boundaries_per_lap) as usize - 1;
        self.crossings[skater][p].map(|i| &self.events[i])
    }

    /// A skater's events in race order.
    pub fn timeline(&self, skater: usize) -> impl Iterator<Item = &PassageEvent> + '_ {
        self.crossings[skater]
            .iter()
            .flatten()
            .map(move |&i| &self.events[i])
    }

    /// All crossings of `cp`, sorted by time (ties by roster order).
    pub fn crossings_at(&self, cp: Checkpoint) -> Vec<(usize, &PassageEvent)> {
        let mut out: Vec<(usize, &PassageEvent)> = (0..self.roster.len())
            .filter_map(|s| self.crossing(s, cp).map(|e| (s, e)))
            .collect();
        out.sort_by(|a, b| a.1.time.total_cmp(&b.1.time).then(a.0.cmp(&b.0)));
        out
    }

    pub fn into_parts(self) -> (RaceMeta, Vec<PassageEvent>, Vec<Disqualification>) {
        (self.meta, self.events, self.disqualifications)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two skaters, one lap, four boundaries; B trails A by `gap` seconds.
    pub(crate) fn two_skater_lap(gap: f64) -> RaceLog {
        let mut meta = RaceMeta::mass_start("R1", 2);
        meta.n_laps = 1;
        let mut events = Vec::new();
        for (k, b) in [1u32, 2, 3, 0].iter().enumerate() {
            let t = 10.0 * (k as f64 + 1.0);
            events.push(PassageEvent::new("A", 1, *b, t));
            events.push(PassageEvent::new("B", 1, *b, t + gap));
        }
        RaceLog::new(meta, events, vec![]).unwrap()
    }

    #[test]
    fn progress_orders_finish_line_last_within_lap() {
        let b = 4;
        let order: Vec<u32> = [(1, 1), (1, 2), (1, 3), (1, 0), (2, 1), (2, 0)]
            .iter()
            .map(|&(l, bd)| Checkpoint::new(l, bd).progress(b))
            .collect();
        assert_eq!(order, vec![1, 2, 3, 4, 5, 8]);
        for p in 1..=64 {
            assert_eq!(Checkpoint::from_progress(p, b).progress(b), p);
        }
    }

    #[test]
    fn minimal_log_has_eight_events() {
        let log = two_skater_lap(0.1);
        assert_eq!(log.events().len(), 8);
        assert_eq!(log.roster().len(), 2);
    }

    #[test]
    fn duplicate_event_rejected() {
        let log = two_skater_lap(0.1);
        let (meta, mut events, dq) = log.into_parts();
        events.push(events[0].clone());
        assert!(matches!(
            RaceLog::new(meta, events, dq),
            Err(LogError::DuplicateEvent { .. })
        ));
    }

    #[test]
    fn non_monotone_times_rejected() {
        let log = two_skater_lap(0.1);
        let (meta, mut events, dq) = log.into_parts();
        // A's boundary-2 crossing moved before boundary 1
        events[2].time = 5.0;
        assert!(matches!(
            RaceLog::new(meta, events, dq),
            Err(LogError::NonMonotoneTimes { .. })
        ));
    }

    #[test]
    fn unknown_dq_and_incomplete_sequences() {
        let log = two_skater_lap(0.1);
        let (meta, events, _) = log.into_parts();
        assert!(matches!(
            RaceLog::new(meta.clone(), events.clone(), vec![Disqualification::offence("Z")]),
            Err(LogError::UnknownDqSkater(_))
        ));
        let truncated: Vec<_> = events.iter().filter(|e| !(e.skater_id.as_str() == "B" && e.boundary == 0)).cloned().collect();
        assert!(matches!(
            RaceLog::new(meta.clone(), truncated.clone(), vec![]),
            Err(LogError::IncompleteSequence { .. })
        ));
        // the same truncation is fine for a disqualified skater
        assert!(RaceLog::new(meta, truncated, vec![Disqualification::lapped("B", 35.0)]).is_ok());
    }

    #[test]
    fn meta_bounds() {
        let mut meta = RaceMeta::mass_start("R", 25);
        assert!(meta.validate().is_err());
        meta.n_skaters = 1;
        assert!(meta.validate().is_err());
        meta.n_skaters = 24;
        assert!(meta.validate().is_ok());
        meta.track_length = 0.0;
        assert!(meta.validate().is_err());
    }
}
