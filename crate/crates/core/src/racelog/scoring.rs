//! Mass start scoring: finish ranks (with disqualifications), points and final ranks.

use std::cmp::Ordering;

use serde::Serialize;
use thiserror::Error;

use super::{Checkpoint, DqReason, RaceLog, SkaterId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("skater {0} is not disqualified but has no finish crossing")]
    MissingFinish(SkaterId),
    #[error("rank {rank} is outside 1..={n_skaters}")]
    RankOutOfRange { rank: u32, n_skaters: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringRules {
    /// Points for finish ranks 1, 2, 3, ...
    pub finish_points: Vec<u32>,
    /// Laps whose completing crossing awards `premium_points`.
    pub premium_laps: Vec<u32>,
    pub premium_points: Vec<u32>,
}

impl Default for ScoringRules {
    fn default() -> Self {
        Self {
            finish_points: vec![60, 40, 20],
            premium_laps: vec![4, 8, 12],
            premium_points: vec![5, 3, 1],
        }
    }
}

/// Finish order of a race; index 0 holds finish rank 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FinishRanks {
    order: Vec<SkaterId>,
}

impl FinishRanks {
    pub fn ordered(&self) -> &[SkaterId] {
        &self.order
    }

    pub fn rank_of(&self, id: &SkaterId) -> Option<u32> {
        self.order.iter().position(|s| s == id).map(|p| p as u32 + 1)
    }
}

/// Non-disqualified skaters by finish time; then lapped skaters, later
/// overtaken first; offence disqualifications take the worst ranks.
pub fn assign_finish_ranks(log: &RaceLog) -> Result<FinishRanks, ScoringError> {
    let finish = log.meta().finish();
    let mut finishers: Vec<(f64, usize)> = Vec::new();
    for (s, id) in log.roster().iter().enumerate() {
        if log.is_disqualified(id) {
            continue;
        }
        let ev = log
            .crossing(s, finish)
            .ok_or_else(|| ScoringError::MissingFinish(id.clone()))?;
        finishers.push((ev.time, s));
    }
    finishers.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| log.roster()[a.1].cmp(&log.roster()[b.1]))
    });

    let mut lapped: Vec<(f64, &SkaterId)> = Vec::new();
    let mut offences: Vec<&SkaterId> = Vec::new();
    for dq in log.disqualifications() {
        match dq.reason {
            DqReason::Lapped { overtaken_time } => lapped.push((overtaken_time, &dq.skater_id)),
            DqReason::Offence => offences.push(&dq.skater_id),
        }
    }
    // overtaken later => better rank
    lapped.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));

    let order = finishers
        .into_iter()
        .map(|(_, s)| log.roster()[s].clone())
        .chain(lapped.into_iter().map(|(_, id)| id.clone()))
        .chain(offences.into_iter().cloned())
        .collect();
    Ok(FinishRanks { order })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub skater_id: SkaterId,
    pub finish_rank: u32,
    pub points: u32,
    pub final_rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub race_id: String,
    /// Rows in finish-rank order.
    pub rows: Vec<RankRow>,
}

impl RankTable {
    pub fn row(&self, id: &SkaterId) -> Option<&RankRow> {
        self.rows.iter().find(|r| &r.skater_id == id)
    }

    pub fn top_by_finish(&self, k: usize) -> Vec<&SkaterId> {
        let mut rows: Vec<_> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.finish_rank);
        rows.into_iter().take(k).map(|r| &r.skater_id).collect()
    }

    pub fn top_by_final(&self, k: usize) -> Vec<&SkaterId> {
        let mut rows: Vec<_> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.final_rank);
        rows.into_iter().take(k).map(|r| &r.skater_id).collect()
    }
}

pub fn score_race(log: &RaceLog, ranks: &FinishRanks) -> RankTable {
    score_race_with(log, ranks, &ScoringRules::default())
}

pub fn score_race_with(log: &RaceLog, ranks: &FinishRanks, rules: &ScoringRules) -> RankTable {
    let mut rows: Vec<RankRow> = ranks
        .ordered()
        .iter()
        .enumerate()
        .map(|(i, id)| RankRow {
            skater_id: id.clone(),
            finish_rank: i as u32 + 1,
            points: rules.finish_points.get(i).copied().unwrap_or(0),
            final_rank: 0,
        })
        .collect();

    for &lap in &rules.premium_laps {
        if lap >= log.meta().n_laps {
            continue;
        }
        let crossings = log.crossings_at(Checkpoint::new(lap, 0));
        for ((s, _), pts) in crossings.iter().zip(&rules.premium_points) {
            let id = &log.roster()[*s];
            if let Some(row) = rows.iter_mut().find(|r| &r.skater_id == id) {
                row.points += pts;
            }
        }
    }

    let mut by_points: Vec<usize> = (0..rows.len()).collect();
    by_points.sort_by(|&a, &b| match rows[b].points.cmp(&rows[a].points) {
        Ordering::Equal => rows[a].finish_rank.cmp(&rows[b].finish_rank),
        o => o,
    });
    for (place, idx) in by_points.into_iter().enumerate() {
        rows[idx].final_rank = place as u32 + 1;
    }
    RankTable {
        race_id: log.meta().race_id.clone(),
        rows,
    }
}

/// `rank / n_skaters`, in (0, 1].
pub fn normalize_rank(rank: u32, n_skaters: u32) -> Result<f64, ScoringError> {
    if rank < 1 || rank > n_skaters {
        return Err(ScoringError::RankOutOfRange { rank, n_skaters });
    }
    Ok(rank as f64 / n_skaters as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::racelog::{Disqualification, PassageEvent, RaceMeta};

    /// One-lap race where each skater crosses every boundary at `base + offset`.
    fn one_lap(finish: &[(&str, f64)], dqs: Vec<Disqualification>) -> RaceLog {
        let mut meta = RaceMeta::mass_start("R", finish.len() as u32);
        meta.n_laps = 1;
        let mut events = Vec::new();
        for (id, t) in finish {
            let dq = dqs.iter().any(|d| d.skater_id.as_str() == *id);
            for (k, b) in [1u32, 2, 3, 0].iter().enumerate() {
                if dq && *b == 0 {
                    continue;
                }
                events.push(PassageEvent::new(*id, 1, *b, t - 30.0 + 10.0 * k as f64));
            }
        }
        RaceLog::new(meta, events, dqs).unwrap()
    }

    #[test]
    fn finish_ranks_sort_by_time() {
        let log = one_lap(&[("A", 300.0), ("B", 301.0), ("C", 299.0)], vec![]);
        let r = assign_finish_ranks(&log).unwrap();
        let ranks: Vec<u32> = ["A", "B", "C"]
            .iter()
            .map(|s| r.rank_of(&SkaterId::from(*s)).unwrap())
            .collect();
        assert_eq!(ranks, vec![2, 3, 1]);
    }

    #[test]
    fn earlier_overtaken_ranks_worse() {
        let log = one_lap(
            &[("A", 300.0), ("B", 301.0), ("C", 350.0), ("D", 360.0)],
            vec![Disqualification::lapped("D", 200.0), Disqualification::lapped("C", 250.0)],
        );
        let r = assign_finish_ranks(&log).unwrap();
        assert_eq!(r.rank_of(&"C".into()), Some(3));
        assert_eq!(r.rank_of(&"D".into()), Some(4));
    }

    #[test]
    fn offence_takes_single_worst_rank() {
        let log = one_lap(
            &[("A", 300.0), ("B", 301.0), ("C", 302.0), ("D", 350.0), ("E", 303.0)],
            vec![Disqualification::offence("E"), Disqualification::lapped("D", 280.0)],
        );
        let r = assign_finish_ranks(&log).unwrap();
        assert_eq!(r.rank_of(&"E".into()), Some(5));
        assert_eq!(r.rank_of(&"D".into()), Some(4));
    }

    fn sixteen_laps(per_skater_offsets: &[(&str, [f64; 3], f64)]) -> RaceLog {
        // offsets at laps 4, 8, 12 and the finish
        let meta = RaceMeta::mass_start("R16", per_skater_offsets.len() as u32);
        let mut events = Vec::new();
        for (id, prem, fin) in per_skater_offsets {
            for p in 1..=64u32 {
                let cp = Checkpoint::from_progress(p, 4);
                let mut t = p as f64 * 7.5;
                if cp.boundary == 0 {
                    match cp.lap {
                        4 => t += prem[0],
                        8 => t += prem[1],
                        12 => t += prem[2],
                        16 => t += fin,
                        _ => {}
                    }
                }
                events.push(PassageEvent::new(*id, cp.lap, cp.boundary, t));
            }
        }
        RaceLog::new(meta, events, vec![]).unwrap()
    }

    #[test]
    fn winner_of_every_premium_gets_75() {
        let log = sixteen_laps(&[
            ("A", [0.0, 0.0, 0.0], 0.0),
            ("B", [0.1, 0.1, 0.1], 0.1),
            ("C", [0.2, 0.2, 0.2], 0.2),
            ("D", [0.3, 0.3, 0.3], 0.3),
        ]);
        let ranks = assign_finish_ranks(&log).unwrap();
        let table = score_race(&log, &ranks);
        assert_eq!(table.row(&"A".into()).unwrap().points, 75);
        assert_eq!(table.row(&"B".into()).unwrap().points, 40 + 9);
        assert_eq!(table.row(&"C".into()).unwrap().points, 20 + 3);
        assert_eq!(table.row(&"D".into()).unwrap().points, 0);
    }

    #[test]
    fn premiums_cannot_lift_fourth_over_third() {
        // D takes every premium but finishes fourth
        let log = sixteen_laps(
            &[
                ("A", [0.3, 0.3, 0.3], 0.0),
                ("B", [0.2, 0.2, 0.2], 0.1),
                ("C", [0.1, 0.1, 0.1], 0.2),
                ("D", [0.0, 0.0, 0.0], 0.3),
            ],
        );
        let table = score_race(&log, &assign_finish_ranks(&log).unwrap());
        assert_eq!(table.row(&"D".into()).unwrap().points, 15);
        assert_eq!(table.top_by_final(3), table.top_by_finish(3));
        assert_eq!(table.row(&"D".into()).unwrap().final_rank, 4);
    }

    #[test]
    fn normalize_rank_examples() {
        assert_eq!(normalize_rank(1, 20).unwrap(), 0.05);
        assert_eq!(normalize_rank(20, 20).unwrap(), 1.0);
        // 3/13 is the nearest double to the rational
        assert_eq!(normalize_rank(3, 13).unwrap(), 3.0 / 13.0);
        assert!((normalize_rank(3, 13).unwrap() - 0.230_769_230_769).abs() < 1e-12);
        assert!(normalize_rank(0, 5).is_err());
        assert!(normalize_rank(6, 5).is_err());
    }
}
