use serde::Serialize;

use super::{checkpoint_laps_to_go, MetricsError};
use crate::racelog::{Checkpoint, RaceLog, SkaterId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntermediateRanks {
    pub checkpoint_lap: u32,
    /// Ranks in crossing order; fractional after checker reconciliation.
    pub ranks: Vec<(SkaterId, f64)>,
}

impl IntermediateRanks {
    pub fn rank_of(&self, id: &SkaterId) -> Option<f64> {
        self.ranks.iter().find(|(s, _)| s == id).map(|(_, r)| *r)
    }
}

/// Position of each crosser at `cp` ordered by time (1-based).
fn time_order(log: &RaceLog, cp: Checkpoint) -> Vec<usize> {
    log.crossings_at(cp).into_iter().map(|(s, _)| s).collect()
}

/// Ranks at the finish-line crossing with `laps_to_finish` laps remaining.
///
/// Skaters whose crossing there was observed are ordered by time. A skater
/// whose crossing was synthesized keeps the rank they held at their last
/// observed crossing; the observed skaters fill the remaining places in time
/// order.
pub fn intermediate_ranks(log: &RaceLog, laps_to_finish: u32) -> Result<IntermediateRanks, MetricsError> {
    if !(1..=3).contains(&laps_to_finish) {
        return Err(MetricsError::BadLapsToFinish(laps_to_finish));
    }
    let cp = checkpoint_laps_to_go(log, laps_to_finish)?;
    let order = time_order(log, cp);
    if order.is_empty() {
        return Err(MetricsError::MissingCrossing(cp));
    }
    let b = log.meta().boundaries_per_lap;

    let mut carried: Vec<(usize, usize)> = Vec::new();
    let mut observed: Vec<usize> = Vec::new();
    for &s in &order {
        let ev = log.crossing(s, cp).expect("crosser");
        if ev.observed {
            observed.push(s);
            continue;
        }
        let last_seen = log
            .timeline(s)
            .filter(|e| e.observed && e.checkpoint().progress(b) < cp.progress(b))
            .last()
            .map(|e| e.checkpoint());
        let rank = match last_seen {
            Some(seen) => time_order(log, seen)
                .iter()
                .position(|&x| x == s)
                .expect("skater crossed"),
            // never seen before this point: fall back to the synthesized time
            None => order.iter().position(|&x| x == s).expect("crosser"),
        };
        carried.push((rank, s));
    }
    carried.sort();

    let mut slots: Vec<Option<usize>> = vec![None; order.len()];
    for (rank, s) in carried {
        let free = (rank.min(order.len() - 1)..order.len())
            .chain(0..rank.min(order.len()))
            .find(|&k| slots[k].is_none())
            .expect("free slot");
        slots[free] = Some(s);
    }
    let mut rest = observed.into_iter();
    for slot in slots.iter_mut().filter(|x| x.is_none()) {
        *slot = rest.next();
    }

    Ok(IntermediateRanks {
        checkpoint_lap: cp.lap,
        ranks: slots
            .into_iter()
            .enumerate()
            .map(|(k, s)| (log.roster()[s.expect("filled")].clone(), k as f64 + 1.0))
            .collect(),
    })
}

/// Two checkers' ranks for the same skater: equal ranks pass through, otherwise the mean.
pub fn reconcile_ranks(first: f64, second: f64) -> f64 {
    if first == second {
        first
    } else {
        (first + second) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckerPair {
    pub tau_1: f64,
    pub tau_2: f64,
}

impl CheckerPair {
    pub fn new(tau_1: f64, tau_2: f64) -> Result<Self, MetricsError> {
        for t in [tau_1, tau_2] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(MetricsError::InvalidParameter(format!(
                    "exposed time must be non-negative, got {t}"
                )));
            }
        }
        Ok(Self { tau_1, tau_2 })
    }

    /// `|τ₁ − τ₂| / (τ₁ + τ₂)`; zero when both are zero.
    pub fn discrepancy(&self) -> f64 {
        let sum = self.tau_1 + self.tau_2;
        if sum == 0.0 {
            0.0
        } else {
            (self.tau_1 - self.tau_2).abs() / sum
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reconciliation {
    Agreed { tau: f64, discrepancy: f64 },
    Remeasure { discrepancy: f64 },
}

impl Reconciliation {
    pub fn tau(&self) -> Option<f64> {
        match self {
            Reconciliation::Agreed { tau, .. } => Some(*tau),
            Reconciliation::Remeasure { .. } => None,
        }
    }
}

pub fn reconcile_checkers(pair: CheckerPair, tolerance: f64) -> Reconciliation {
    let discrepancy = pair.discrepancy();
    if discrepancy < tolerance {
        Reconciliation::Agreed {
            tau: (pair.tau_1 + pair.tau_2) / 2.0,
            discrepancy,
        }
    } else {
        Reconciliation::Remeasure { discrepancy }
    }
}
