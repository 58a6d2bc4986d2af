//! Builds the three analysis designs from metrics rows:
//! intermediate rank on laps-to-go and finish rank (top three only),
//! normalized finish rank on exposed time, and normalized finish rank on
//! time-trial best.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LmmDataset, StatsError, TimeTrialRecord};
use crate::metrics::MetricsRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// `I = β₀ + β₁L + β₂F + S`
    Eq1,
    /// `F̃ = β₀ + β₁τ + S`
    Eq2,
    /// `F̃ = β₀ + β₁T + S`
    Eq3,
}

impl FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "eq1" => Ok(Model::Eq1),
            "eq2" => Ok(Model::Eq2),
            "eq3" => Ok(Model::Eq3),
            other => Err(format!("unknown model '{other}' (expected eq1, eq2 or eq3)")),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Eq1 => "eq1",
            Model::Eq2 => "eq2",
            Model::Eq3 => "eq3",
        })
    }
}

/// Which time-trial column feeds the third design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialColumn {
    #[default]
    BestTime,
    StandardizedBest,
}

pub fn build_dataset(
    model: Model,
    rows: &[MetricsRow],
    trials: Option<&[TimeTrialRecord]>,
    column: TrialColumn,
) -> Result<LmmDataset, StatsError> {
    match model {
        Model::Eq1 => {
            let mut field_size: BTreeMap<&str, usize> = BTreeMap::new();
            for r in rows {
                *field_size.entry(r.race_id.as_str()).or_default() += 1;
            }
            let mut d = LmmDataset::new(["laps_to_finish", "finish_rank"]);
            for r in rows.iter().filter(|r| r.finish_rank <= 3) {
                let n = field_size[r.race_id.as_str()] as f64;
                for laps in [3u32, 2, 1] {
                    let rank = r.rank_at(laps).ok_or_else(|| {
                        StatsError::Table(format!(
                            "{} in {} lacks an intermediate rank with {laps} laps to go",
                            r.skater_id, r.race_id
                        ))
                    })?;
                    d.push(
                        r.skater_id.as_str(),
                        rank / n,
                        vec![f64::from(laps), f64::from(r.finish_rank)],
                    );
                }
            }
            Ok(d)
        }
        Model::Eq2 => {
            let mut d = LmmDataset::new(["tau"]);
            for r in rows {
                d.push(r.skater_id.as_str(), r.norm_finish_rank, vec![r.tau]);
            }
            Ok(d)
        }
        Model::Eq3 => {
            let trials = trials.ok_or_else(|| StatsError::Table("a time-trial table is required".into()))?;
            let name = match column {
                TrialColumn::BestTime => "best_time",
                TrialColumn::StandardizedBest => "standardized_best",
            };
            let lookup: HashMap<&str, f64> = trials
                .iter()
                .filter_map(|t| {
                    let v = match column {
                        TrialColumn::BestTime => t.best_time,
                        TrialColumn::StandardizedBest => t.standardized_best,
                    };
                    v.map(|v| (t.skater_id.as_str(), v))
                })
                .collect();
            let mut d = LmmDataset::new([name]);
            // skaters without a time-trial result are dropped
            for r in rows {
                if let Some(&t) = lookup.get(r.skater_id.as_str()) {
                    d.push(r.skater_id.as_str(), r.norm_finish_rank, vec![t]);
                }
            }
            if d.is_empty() {
                return Err(StatsError::EmptyJoin);
            }
            Ok(d)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(race: &str, id: &str, rank: u32, n: u32, tau: f64) -> MetricsRow {
        MetricsRow {
            race_id: race.into(),
            skater_id: id.into(),
            tau,
            imputed_fraction: 0.0,
            rank_l3: Some(f64::from(n + 1 - rank)),
            rank_l2: Some(f64::from(rank)),
            rank_l1: Some(f64::from(rank)),
            finish_rank: rank,
            norm_finish_rank: f64::from(rank) / f64::from(n),
            breakaway: false,
        }
    }

    fn race(id: &str, n: u32) -> Vec<MetricsRow> {
        (1..=n).map(|k| row(id, &format!("S{k}"), k, n, 10.0 * k as f64)).collect()
    }

    #[test]
    fn eq1_uses_top_three_times_three_laps() {
        let rows: Vec<MetricsRow> = (0..9).flat_map(|j| race(&format!("R{j}"), 10)).collect();
        let d = build_dataset(Model::Eq1, &rows, None, TrialColumn::BestTime).unwrap();
        assert_eq!(d.len(), 81);
        let first = &d.rows[0];
        // winner of a ten-skater race was tenth with three laps to go
        assert_eq!(first.response, 1.0);
        assert_eq!(first.covariates, vec![3.0, 1.0]);
    }

    #[test]
    fn eq3_joins_and_reports_empty() {
        let rows = race("R", 4);
        let trials = vec![TimeTrialRecord {
            skater_id: "S2".into(),
            best_time: Some(400.0),
            standardized_best: None,
        }];
        let d = build_dataset(Model::Eq3, &rows, Some(&trials), TrialColumn::BestTime).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(
            build_dataset(Model::Eq3, &rows, Some(&trials), TrialColumn::StandardizedBest).unwrap_err(),
            StatsError::EmptyJoin
        );
        assert!(build_dataset(Model::Eq3, &rows, None, TrialColumn::BestTime).is_err());
    }

    #[test]
    fn eq2_shape() {
        let d = build_dataset(Model::Eq2, &race("R", 5), None, TrialColumn::BestTime).unwrap();
        assert_eq!(d.covariate_names, vec!["tau"]);
        assert_eq!(d.len(), 5);
    }
}
