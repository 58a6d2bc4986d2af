use serde::{Deserialize, Serialize};

use super::{checkpoint_laps_to_go, leader_time, MetricsError, TIME_EPS};
use crate::racelog::{Checkpoint, PassageEvent, RaceLog, SkaterId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DraftingParams {
    /// A skater trailing the previous crosser by more than this is exposed.
    pub gap_threshold: f64,
    /// Distance the threshold roughly corresponds to; informational.
    pub equivalent_distance: f64,
}

impl Default for DraftingParams {
    fn default() -> Self {
        Self {
            gap_threshold: 0.2,
            equivalent_distance: 2.5,
        }
    }
}

impl DraftingParams {
    pub fn with_gap(gap_threshold: f64) -> Self {
        Self {
            gap_threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.gap_threshold.is_finite() && self.gap_threshold > 0.0 {
            Ok(())
        } else {
            Err(MetricsError::InvalidParameter(format!(
                "gap_threshold must be positive, got {}",
                self.gap_threshold
            )))
        }
    }
}

/// From the leader's finish-line crossing with three laps to go to the one with one lap to go.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub start: f64,
    pub end: f64,
}

impl AnalysisWindow {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Part of `[from, to]` inside the window.
    pub fn overlap(&self, from: f64, to: f64) -> f64 {
        (to.min(self.end) - from.max(self.start)).max(0.0)
    }
}

pub fn analysis_window(log: &RaceLog) -> Result<AnalysisWindow, MetricsError> {
    let start = leader_time(log, checkpoint_laps_to_go(log, 3)?)?;
    let end = leader_time(log, checkpoint_laps_to_go(log, 1)?)?;
    if end <= start {
        return Err(MetricsError::EmptyWindow { start, end });
    }
    Ok(AnalysisWindow { start, end })
}

/// Gap rule on raw crossing times, ignoring the observed flag.
fn sheltered_by_gap(log: &RaceLog, skater: usize, ev: &PassageEvent, params: &DraftingParams) -> bool {
    let cp = ev.checkpoint();
    let predecessor = (0..log.roster().len())
        .filter(|&o| o != skater)
        .filter_map(|o| log.crossing(o, cp))
        .map(|e| e.time)
        .filter(|&t| t < ev.time)
        .fold(f64::NEG_INFINITY, f64::max);
    ev.time - predecessor <= params.gap_threshold + TIME_EPS
}

/// Exposure flag at each of a skater's crossings, in race order.
///
/// Observed crossings use the gap rule. Unobserved ones keep the state of the
/// skater's last observed crossing; before any observation the gap rule is
/// applied to the synthesized times.
pub fn exposure_states<'a>(
    log: &'a RaceLog,
    skater: usize,
    params: &DraftingParams,
) -> Vec<(&'a PassageEvent, bool)> {
    let mut carried: Option<bool> = None;
    log.timeline(skater)
        .map(|ev| {
            let exposed = if ev.observed {
                let e = !sheltered_by_gap(log, skater, ev, params);
                carried = Some(e);
                e
            } else {
                carried.unwrap_or_else(|| !sheltered_by_gap(log, skater, ev, params))
            };
            (ev, exposed)
        })
        .collect()
}

pub fn is_sheltered(
    log: &RaceLog,
    skater: &SkaterId,
    cp: Checkpoint,
    params: &DraftingParams,
) -> Result<bool, MetricsError> {
    params.validate()?;
    let s = log
        .skater_index(skater)
        .ok_or_else(|| MetricsError::UnknownSkater(skater.clone()))?;
    if log.crossing(s, cp).is_none() {
        return Err(MetricsError::SkaterMissingCrossing {
            skater: skater.clone(),
            checkpoint: cp,
        });
    }
    let states = exposure_states(log, s, params);
    let exposed = states
        .iter()
        .find(|(e, _)| e.checkpoint() == cp)
        .map(|(_, x)| *x)
        .expect("crossing present");
    Ok(!exposed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureSummary {
    pub skater_id: SkaterId,
    /// Exposed time inside the window.
    pub tau: f64,
    /// Sheltered time inside the window.
    pub sheltered: f64,
    pub window: AnalysisWindow,
    /// Share of `tau` from segments bounded by an unobserved crossing.
    pub imputed_fraction: f64,
}

pub fn exposed_time(
    log: &RaceLog,
    skater: &SkaterId,
    params: &DraftingParams,
) -> Result<ExposureSummary, MetricsError> {
    params.validate()?;
    let window = analysis_window(log)?;
    let s = log
        .skater_index(skater)
        .ok_or_else(|| MetricsError::UnknownSkater(skater.clone()))?;
    Ok(exposure_in_window(log, s, params, window))
}

pub(crate) fn exposure_in_window(
    log: &RaceLog,
    s: usize,
    params: &DraftingParams,
    window: AnalysisWindow,
) -> ExposureSummary {
    let states = exposure_states(log, s, params);
    let mut tau = 0.0;
    let mut sheltered = 0.0;
    let mut imputed = 0.0;
    for pair in states.windows(2) {
        let (ev, exposed) = pair[0];
        let (next, _) = pair[1];
        let d = window.overlap(ev.time, next.time);
        if exposed {
            tau += d;
            if !(ev.observed && next.observed) {
                imputed += d;
            }
        } else {
            sheltered += d;
        }
    }
    ExposureSummary {
        skater_id: log.roster()[s].clone(),
        tau,
        sheltered,
        window,
        imputed_fraction: if tau > 0.0 { imputed / tau } else { 0.0 },
    }
}
