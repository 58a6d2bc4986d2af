//! Measured race quantities: exposed time, intermediate ranks, checker
//! reconciliation and break-away classification.
//!
//! Shelter is decided purely from boundary crossing times. A skater is
//! sheltered at a checkpoint when the skater who crossed it immediately before
//! them did so no more than `gap_threshold` seconds earlier; everyone else,
//! including the first crosser, is exposed until the next checkpoint.

mod breakaway;
mod exposure;
mod impute;
mod ranks;
mod table;

use thiserror::Error;

use crate::racelog::{Checkpoint, LogError, RaceLog, ScoringError, SkaterId};

pub use breakaway::{breakaway_min_gaps, classify_breakaway, BreakawayParams, RaceType};
pub use exposure::{
    analysis_window, exposed_time, exposure_states, is_sheltered, AnalysisWindow, DraftingParams,
    ExposureSummary,
};
pub use impute::{impute_carry_forward, Visibility};
pub use ranks::{
    intermediate_ranks, reconcile_checkers, reconcile_ranks, CheckerPair, IntermediateRanks,
    Reconciliation,
};
pub use table::{
    analyze_race, read_metrics_csv, reconcile_race_metrics, write_metrics_csv, AnalysisParams,
    MetricsRow, RaceMetrics, RemeasureRequest,
};

/// Slack applied to threshold comparisons on times. Logs carry at best
/// microsecond resolution, so differences below this are representation noise.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no skater crossed {0}")]
    MissingCrossing(Checkpoint),
    #[error("skater {skater} has no crossing at {checkpoint}")]
    SkaterMissingCrossing {
        skater: SkaterId,
        checkpoint: Checkpoint,
    },
    #[error("unknown skater {0}")]
    UnknownSkater(SkaterId),
    #[error("race has {n_laps} laps; at least {needed} are required")]
    TooFewLaps { n_laps: u32, needed: u32 },
    #[error("analysis window is empty ({start} .. {end})")]
    EmptyWindow { start: f64, end: f64 },
    #[error("skater {0} is never observed")]
    NeverObserved(SkaterId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("laps_to_finish must be 1, 2 or 3, got {0}")]
    BadLapsToFinish(u32),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("metrics table: {0}")]
    Table(String),
}

/// Earliest crossing time of `cp` over all skaters.
pub(crate) fn leader_time(log: &RaceLog, cp: Checkpoint) -> Result<f64, MetricsError> {
    log.crossings_at(cp)
        .first()
        .map(|(_, e)| e.time)
        .ok_or(MetricsError::MissingCrossing(cp))
}

pub(crate) fn checkpoint_laps_to_go(log: &RaceLog, laps: u32) -> Result<Checkpoint, MetricsError> {
    Checkpoint::laps_to_go(log.meta().n_laps, laps).ok_or(MetricsError::TooFewLaps {
        n_laps: log.meta().n_laps,
        needed: laps + 1,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::racelog::{Checkpoint, PassageEvent, RaceLog, RaceMeta};

    /// Builds a log from per-skater crossing times listed in progress order.
    pub(crate) fn log_from_times(
        n_laps: u32,
        boundaries: u32,
        skaters: &[(&str, Vec<f64>)],
    ) -> RaceLog {
        let mut meta = RaceMeta::mass_start("T", skaters.len() as u32);
        meta.n_laps = n_laps;
        meta.boundaries_per_lap = boundaries;
        let mut events = Vec::new();
        for (id, times) in skaters {
            assert_eq!(times.len() as u32, n_laps * boundaries, "skater {id}");
            for (p, t) in times.iter().enumerate() {
                let cp = Checkpoint::from_progress(p as u32 + 1, boundaries);
                events.push(PassageEvent::new(*id, cp.lap, cp.boundary, *t));
            }
        }
        RaceLog::new(meta, events, vec![]).unwrap()
    }

    /// Evenly paced times: checkpoint p crossed at `p * seg + offset`.
    pub(crate) fn paced(n: usize, seg: f64, offset: f64) -> Vec<f64> {
        (1..=n).map(|p| p as f64 * seg + offset).collect()
    }
}
